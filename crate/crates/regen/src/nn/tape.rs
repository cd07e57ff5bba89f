//! Reverse-mode autodiff on a growing tape.
//!
//! Every operation appends a node holding its value, parent indices, and a
//! closure that maps the output gradient to per-parent gradients. Construction
//! order is a topological order, so [`Tape::backward`] is a single reverse
//! sweep. Shape agreement between operands is a construction-time invariant:
//! ops panic on mismatch rather than returning `Result`, because configs are
//! validated at the library boundary before any graph is built.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Handle to a tape node. Only meaningful for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// `(output_grad, own_value, parent_values) -> per-parent grads`.
pub(crate) type BackFn = Box<dyn Fn(&Tensor, &Tensor, &[&Tensor]) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Register a leaf value (input or parameter).
    pub fn input(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub fn scalar_input(&self, value: f64) -> Var {
        self.input(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub(crate) fn push(&self, value: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            back,
        });
        Var(nodes.len() - 1)
    }

    /// Compute a derived value while the parent tensors are borrowed.
    pub(crate) fn with_values<R>(&self, vars: &[Var], f: impl FnOnce(&[&Tensor]) -> R) -> R {
        let nodes = self.nodes.borrow();
        let refs: Vec<&Tensor> = vars.iter().map(|v| &nodes[v.0].value).collect();
        f(&refs)
    }

    /// Reverse sweep from a scalar loss. Gradients are accumulated for every
    /// node reachable from the loss; unreached nodes read back as zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        if !loss_value.item().is_finite() {
            return Err(Error::NonFinite("loss value before backward".into()));
        }

        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].clone() else {
                continue;
            };
            let node = &nodes[i];
            let Some(back) = &node.back else {
                continue;
            };
            let parent_values: Vec<&Tensor> =
                node.parents.iter().map(|&p| &nodes[p].value).collect();
            let parent_grads = back(&grad, &node.value, &parent_values);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(
                    pg.shape(),
                    nodes[p].value.shape(),
                    "backward of node {i} produced wrong grad shape for parent {p}"
                );
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Sum a gradient down to a scalar when the forward op broadcast a scalar
/// operand; pass full-shape gradients through unchanged.
fn reduce_to(grad: Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        grad
    } else {
        debug_assert_eq!(shape.iter().product::<usize>(), 1);
        Tensor::scalar(grad.data().iter().sum())
    }
}

/// Elementwise combination with scalar broadcast on either side.
fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64, what: &str) -> Tensor {
    if a.same_shape(b) {
        a.zip(b, f)
    } else if a.is_scalar() {
        let av = a.item();
        b.map(|x| f(av, x))
    } else if b.is_scalar() {
        let bv = b.item();
        a.map(|x| f(x, bv))
    } else {
        panic!(
            "{what}: incompatible shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
    }
}

// Elementwise and reduction ops.
impl Tape {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.with_values(&[a, b], |v| broadcast_zip(v[0], v[1], |x, y| x + y, "add"));
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, p| {
                vec![
                    reduce_to(g.clone(), p[0].shape()),
                    reduce_to(g.clone(), p[1].shape()),
                ]
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = self.with_values(&[a, b], |v| broadcast_zip(v[0], v[1], |x, y| x - y, "sub"));
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, p| {
                vec![
                    reduce_to(g.clone(), p[0].shape()),
                    reduce_to(g.map(|x| -x), p[1].shape()),
                ]
            })),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.with_values(&[a, b], |v| broadcast_zip(v[0], v[1], |x, y| x * y, "mul"));
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, p| {
                vec![
                    reduce_to(broadcast_zip(g, p[1], |gv, y| gv * y, "mul-back"), p[0].shape()),
                    reduce_to(broadcast_zip(g, p[0], |gv, x| gv * x, "mul-back"), p[1].shape()),
                ]
            })),
        )
    }

    pub fn neg(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| -x));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, _| vec![g.map(|x| -x)])),
        )
    }

    /// Multiply by a constant (not a tape value).
    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| c * x));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| vec![g.map(|x| c * x)])),
        )
    }

    /// Add a constant (not a tape value).
    pub fn add_const(&self, a: Var, c: f64) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| x + c));
        self.push(value, vec![a.0], Some(Box::new(|g, _, _| vec![g.clone()])))
    }

    pub fn recip(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| 1.0 / x));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, y, _| vec![g.zip(y, |gv, yv| -gv * yv * yv)])),
        )
    }

    /// `1/x` with the convention `0 -> 0` (value and gradient), so an
    /// all-zero weight-norm direction yields a zero weight, not NaN.
    pub fn recip_or_zero(&self, a: Var) -> Var {
        let value =
            self.with_values(&[a], |v| v[0].map(|x| if x == 0.0 { 0.0 } else { 1.0 / x }));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, y, _| vec![g.zip(y, |gv, yv| -gv * yv * yv)])),
        )
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(f64::sqrt));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, y, _| vec![g.zip(y, |gv, yv| gv / (2.0 * yv))])),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(f64::exp));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, y, _| vec![g.zip(y, |gv, yv| gv * yv)])),
        )
    }

    /// Natural log.
    pub fn log(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(f64::ln));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| vec![g.zip(p[0], |gv, x| gv / x)])),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(f64::tanh));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, y, _| {
                vec![g.zip(y, |gv, yv| gv * (1.0 - yv * yv))]
            })),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| 1.0 / (1.0 + (-x).exp())));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, y, _| {
                vec![g.zip(y, |gv, yv| gv * yv * (1.0 - yv))]
            })),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| x.max(0.0)));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![g.zip(p[0], |gv, x| if x > 0.0 { gv } else { 0.0 })]
            })),
        )
    }

    pub fn leaky_relu(&self, a: Var, alpha: f64) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| if x > 0.0 { x } else { alpha * x }));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, p| {
                vec![g.zip(p[0], |gv, x| if x > 0.0 { gv } else { alpha * gv })]
            })),
        )
    }

    /// `ln(1 + e^x)`, computed in the overflow-safe form.
    pub fn softplus(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| {
            v[0].map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p())
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![g.zip(p[0], |gv, x| gv / (1.0 + (-x).exp()))]
            })),
        )
    }

    /// Absolute value with subgradient 0 at the kink.
    pub fn abs(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(f64::abs));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![g.zip(p[0], |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })]
            })),
        )
    }

    /// Clamp to `[lo, hi]` with zero gradient outside the range.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.with_values(&[a], |v| v[0].map(|x| x.clamp(lo, hi)));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, p| {
                vec![g.zip(p[0], |gv, x| if x > lo && x < hi { gv } else { 0.0 })]
            })),
        )
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| Tensor::scalar(v[0].data().iter().sum()));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![Tensor::full(p[0].shape(), g.item())]
            })),
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        let value = self.with_values(&[a], |v| {
            Tensor::scalar(v[0].data().iter().sum::<f64>() / v[0].numel() as f64)
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![Tensor::full(p[0].shape(), g.item() / p[0].numel() as f64)]
            })),
        )
    }

    /// `sum(a * b)` as a single node.
    pub fn dot(&self, a: Var, b: Var) -> Var {
        let value = self.with_values(&[a, b], |v| {
            assert!(v[0].same_shape(v[1]), "dot: shape mismatch");
            Tensor::scalar(v[0].data().iter().zip(v[1].data()).map(|(x, y)| x * y).sum())
        });
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, p| {
                let gv = g.item();
                vec![p[1].map(|y| gv * y), p[0].map(|x| gv * x)]
            })),
        )
    }

    /// Mean absolute difference, the workhorse of the spectral losses.
    pub fn mean_abs_diff(&self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean(ad)
    }
}
