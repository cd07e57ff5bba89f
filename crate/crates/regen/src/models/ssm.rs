//! Diagonal selective state-space layer.
//!
//! Per time step, on rows of `x [b, n]` with state `h [b, s]`:
//!
//! ```text
//! delta_t = softplus(W_d x_t + b_d)            (input-dependent step size, > 0)
//! a_t     = exp(-delta_t * softplus(A))        (elementwise decay, in (0, 1))
//! h_t     = a_t * h_{t-1} + (1 - a_t) * (W_b x_t)
//! y_t     = W_c h_t + D * x_t
//! ```
//!
//! `softplus(A) > 0` and `delta_t > 0` force `0 < a_t < 1`, so the recurrence
//! is unconditionally stable: the state is a convex combination of its past
//! value and the current input projection. The layer is strictly causal —
//! `y_t` depends only on `x_{<=t}`.

use rand_chacha::ChaCha8Rng;

use crate::nn::{init, BoundParams, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct SsmLayer {
    pub input_dim: usize,
    pub state_dim: usize,
}

/// Tape handles for one layer's parameters.
pub struct SsmVars {
    wd: Var,
    bd: Var,
    /// `softplus(A)`, precomputed once per bind (shared across steps).
    sp_a: Var,
    /// `W_b` stored transposed `[n, s]` so `x · wb_t` needs no bias.
    wb_t: Var,
    /// `W_c` stored transposed `[s, n]`.
    wc_t: Var,
    d: Var,
}

impl SsmLayer {
    pub fn new(input_dim: usize, state_dim: usize) -> Self {
        Self { input_dim, state_dim }
    }

    /// Fresh parameters (unprefixed names); merge via `extend_prefixed`.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let (n, s) = (self.input_dim, self.state_dim);
        let mut p = ParamSet::new();
        p.insert("wd", init::kaiming_uniform(rng, &[s, n], n));
        p.insert("bd", Tensor::zeros(&[s]));
        // softplus(0.54..) ~ 1: decays start near exp(-delta).
        p.insert("a", Tensor::full(&[s], 0.5413248546129181));
        p.insert("wb_t", init::kaiming_uniform(rng, &[n, s], n));
        p.insert("wc_t", init::kaiming_uniform(rng, &[s, n], s));
        p.insert("d", Tensor::full(&[n], 1.0));
        p
    }

    /// Closed-form parameter count: `3 n s + 2 s + n`.
    pub fn param_count(&self) -> usize {
        3 * self.input_dim * self.state_dim + 2 * self.state_dim + self.input_dim
    }

    pub fn bind(&self, tape: &Tape, bound: &BoundParams, prefix: &str) -> SsmVars {
        let get = |n: &str| bound.var(&format!("{prefix}{n}"));
        SsmVars {
            wd: get("wd"),
            bd: get("bd"),
            sp_a: tape.softplus(get("a")),
            wb_t: get("wb_t"),
            wc_t: get("wc_t"),
            d: get("d"),
        }
    }

    /// One step: `x [b, n]`, `h [b, s]` -> `(y [b, n], h' [b, s])`.
    pub fn step(&self, tape: &Tape, p: &SsmVars, x: Var, h: Var) -> (Var, Var) {
        let delta = tape.softplus(tape.linear(x, p.wd, p.bd));
        let a = tape.exp(tape.neg(tape.scale_cols(delta, p.sp_a)));
        let bx = tape.matmul(x, p.wb_t);
        let one_minus_a = tape.add_const(tape.neg(a), 1.0);
        let h_next = tape.add(tape.mul(a, h), tape.mul(one_minus_a, bx));
        let y = tape.add(tape.matmul(h_next, p.wc_t), tape.scale_cols(x, p.d));
        (y, h_next)
    }

    /// Run over `xs [t, n]` from `h0 [1, s]`; returns `(ys [t, n], h_final)`.
    pub fn forward_seq(&self, tape: &Tape, p: &SsmVars, xs: Var, h0: Var) -> (Var, Var) {
        let t_len = tape.shape_of(xs)[0];
        let mut h = h0;
        let mut rows = Vec::with_capacity(t_len);
        for k in 0..t_len {
            let x = tape.slice_rows(xs, k, k + 1);
            let (y, h_next) = self.step(tape, p, x, h);
            h = h_next;
            rows.push(y);
        }
        (tape.concat_rows(&rows), h)
    }
}
