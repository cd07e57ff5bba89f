//! AdamW with decoupled weight decay.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::params::{GradientSet, ParamSet};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied directly to the parameter, not through the moments.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in `params`. Gradients must be finite;
    /// schedules adjust `cfg.lr` / `cfg.weight_decay` between calls.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradientSet) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients passed to AdamW".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .unwrap_or_else(|| panic!("no gradient entry for parameter {name:?}"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let pi = &mut p.data_mut()[i];
                *pi -= self.cfg.lr * (m_hat / (v_hat.sqrt() + self.cfg.eps)
                    + self.cfg.weight_decay * *pi);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{BoundParams, GradientSet};
    use crate::nn::tape::Tape;

    fn quadratic_grads(params: &ParamSet) -> (BoundParams, GradientSet) {
        // loss = sum((x - 3)^2)
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = bound.var("x");
        let d = tape.add_const(x, -3.0);
        let sq = tape.mul(d, d);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        let gs = GradientSet::collect(&bound, &grads);
        (bound, gs)
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::from_vec(vec![0.0, 10.0], &[2]).unwrap());
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            ..Default::default()
        });
        for _ in 0..500 {
            let (_, gs) = quadratic_grads(&params);
            opt.step(&mut params, &gs).unwrap();
        }
        for &x in params.get("x").unwrap().data() {
            assert!((x - 3.0).abs() < 1e-3, "{x}");
        }
        assert_eq!(opt.steps_taken(), 500);
    }

    #[test]
    fn decoupled_decay_shrinks_an_unreached_parameter() {
        // "y" never receives gradient; with AdamW it still decays
        // geometrically by (1 - lr*wd) per step.
        let mut params = ParamSet::new();
        params.insert("x", Tensor::scalar(5.0));
        params.insert("y", Tensor::scalar(2.0));
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.01,
            weight_decay: 0.5,
            ..Default::default()
        });
        let steps = 20;
        for _ in 0..steps {
            let (_, gs) = quadratic_grads(&params);
            opt.step(&mut params, &gs).unwrap();
        }
        let want = 2.0 * (1.0 - 0.01 * 0.5f64).powi(steps);
        let got = params.get("y").unwrap().item();
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With bias correction, |Δ| ≈ lr on step one regardless of grad scale.
        let mut params = ParamSet::new();
        params.insert("x", Tensor::scalar(100.0));
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.25,
            ..Default::default()
        });
        let (_, gs) = quadratic_grads(&params);
        opt.step(&mut params, &gs).unwrap();
        let moved = 100.0 - params.get("x").unwrap().item();
        assert!((moved - 0.25).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::scalar(1.0));
        let poisoned =
            GradientSet::from_entries([("x".to_string(), Tensor::scalar(f64::NAN))]);
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(matches!(
            opt.step(&mut params, &poisoned),
            Err(crate::error::Error::NonFinite(_))
        ));
        // The parameter is untouched on failure.
        assert_eq!(params.get("x").unwrap().item(), 1.0);
    }
}
