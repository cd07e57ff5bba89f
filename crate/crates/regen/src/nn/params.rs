//! Named parameter collections and gradient bookkeeping.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::tape::{Gradients, Tape, Var};
use crate::nn::tensor::Tensor;

/// Ordered name -> tensor map. Insertion order is the canonical order for
/// checkpoints and optimizer state, so two builds of the same topology always
/// agree.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Total element count across all tensors.
    pub fn count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Merge another set under a `prefix.` namespace.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet) {
        for (name, value) in other.entries {
            self.insert(format!("{prefix}.{name}"), value);
        }
    }

    /// Register every tensor as a tape leaf.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|(name, value)| (name.clone(), tape.input(value.clone())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

/// Tape handles for a bound [`ParamSet`].
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Assemble from explicit handles (gradcheck harnesses that bind
    /// parameters themselves).
    pub fn from_vars(entries: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: entries.into_iter().collect() }
    }

    /// Handle for `name`; panics if absent (topology bugs, not user input).
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(n, &v)| (n, v))
    }
}

/// Gradients keyed like their parameters.
#[derive(Debug, Clone)]
pub struct GradientSet {
    grads: IndexMap<String, Tensor>,
}

impl GradientSet {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        Self {
            grads: entries.into_iter().collect(),
        }
    }

    /// Collect gradients for every bound parameter (zeros where the loss did
    /// not reach a parameter).
    pub fn collect(bound: &BoundParams, grads: &Gradients) -> Self {
        Self {
            grads: bound
                .iter()
                .map(|(name, var)| (name.clone(), grads.wrt(var)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// L2 norm over the concatenation of all gradients.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(Tensor::sq_norm)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients by `max_norm / norm` when the global norm exceeds
    /// `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.grads.values_mut() {
                for x in g.data_mut() {
                    *x *= s;
                }
            }
        }
        norm
    }
}

/// `parameters in millions`, two decimals — the usual model-size shorthand.
pub fn format_param_count(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

/// Weight-normalized weight: `w = g * v / ||v||` per leading-axis slice.
/// Differentiable in both `g` and `v`.
pub fn weight_norm(tape: &Tape, v: Var, g: Var) -> Var {
    let norms = tape.row_l2_norms(v);
    let inv = tape.recip_or_zero(norms);
    let gain = tape.mul(g, inv);
    tape.rows_scale(v, gain)
}

/// Reject weight-norm direction tensors with an all-zero slice, which would
/// make the normalized weight undefined.
pub fn check_nonzero_rows(v: &Tensor) -> Result<()> {
    let rows = v.shape()[0];
    let cols = v.numel() / rows;
    for (row, chunk) in v.data().chunks(cols).enumerate() {
        if chunk.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroNormDirection { row });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut p = ParamSet::new();
        p.insert("z.w", Tensor::zeros(&[2, 2]));
        p.insert("a.b", Tensor::zeros(&[3]));
        p.insert("m.k", Tensor::zeros(&[1]));
        let names: Vec<&String> = p.names().collect();
        assert_eq!(names, ["z.w", "a.b", "m.k"]);
        assert_eq!(p.count(), 8);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_panic() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[1]));
        p.insert("w", Tensor::zeros(&[1]));
    }

    #[test]
    fn prefixed_merge() {
        let mut inner = ParamSet::new();
        inner.insert("w", Tensor::zeros(&[4]));
        let mut outer = ParamSet::new();
        outer.extend_prefixed("enc", inner);
        assert!(outer.get("enc.w").is_some());
    }

    #[test]
    fn gradient_collection_and_clipping() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::from_vec(vec![3.0], &[1]).unwrap());
        p.insert("b", Tensor::from_vec(vec![4.0], &[1]).unwrap());
        p.insert("unused", Tensor::zeros(&[2]));

        let tape = Tape::new();
        let bound = p.bind(&tape);
        let prod = tape.mul(bound.var("a"), bound.var("b"));
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        let mut gs = GradientSet::collect(&bound, &grads);

        assert_eq!(gs.get("a").unwrap().data(), &[4.0]);
        assert_eq!(gs.get("b").unwrap().data(), &[3.0]);
        assert_eq!(gs.get("unused").unwrap().data(), &[0.0, 0.0]);

        // Norm is 5; clip to 1 scales both by 0.2.
        let pre = gs.clip_global_norm(1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        assert!((gs.get("a").unwrap().data()[0] - 0.8).abs() < 1e-12);
        assert!((gs.global_norm() - 1.0).abs() < 1e-12);

        // Under the threshold nothing changes.
        let pre2 = gs.clip_global_norm(10.0);
        assert!((pre2 - 1.0).abs() < 1e-12);
        assert!((gs.get("b").unwrap().data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn param_count_formatting() {
        assert_eq!(format_param_count(2_310_000), "2.31M");
        assert_eq!(format_param_count(130_000), "0.13M");
        assert_eq!(format_param_count(3_580_000), "3.58M");
        assert_eq!(format_param_count(3_450_000), "3.45M");
    }

    #[test]
    fn zero_row_detection() {
        let ok = Tensor::from_vec(vec![1.0, 0.0, 0.0, 2.0], &[2, 2]).unwrap();
        assert!(check_nonzero_rows(&ok).is_ok());
        let bad = Tensor::from_vec(vec![1.0, 1.0, 0.0, 0.0], &[2, 2]).unwrap();
        match check_nonzero_rows(&bad) {
            Err(Error::ZeroNormDirection { row }) => assert_eq!(row, 1),
            other => panic!("expected ZeroNormDirection, got {other:?}"),
        }
    }

    #[test]
    fn weight_norm_gradcheck() {
        let mut rng = crate::testutil::rng(61);
        let v = Tensor::from_vec(
            crate::testutil::noise(&mut rng, 6).iter().map(|x| x + 1.5).collect(),
            &[2, 3],
        )
        .unwrap();
        let g = Tensor::from_vec(vec![0.8, -1.2], &[2]).unwrap();
        crate::nn::gradcheck::check_gradients("weight_norm", &[v, g], |t, vars| {
            let w = weight_norm(t, vars[0], vars[1]);
            let sq = t.mul(w, w);
            t.sum(sq)
        });
    }
}
