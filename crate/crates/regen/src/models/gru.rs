//! Gated recurrent unit cell.
//!
//! Update equations, applied per time step to rows of a `[batch, dim]` input:
//!
//! ```text
//! z_k = sigmoid(W_z x_k + b_z + U_z h_{k-1} + c_z)
//! r_k = sigmoid(W_r x_k + b_r + U_r h_{k-1} + c_r)
//! n_k = tanh(W_n x_k + b_n + r_k * (U_n h_{k-1} + c_n))
//! h_k = (1 - z_k) * n_k + z_k * h_{k-1}
//! ```
//!
//! Input and recurrent projections carry separate biases (`b_*`, `c_*`). The
//! gate convention makes `z = 1` a "hold" gate: the state passes through
//! unchanged.

use rand_chacha::ChaCha8Rng;

use crate::nn::{init, BoundParams, ParamSet, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden: usize,
}

/// Tape handles for one cell's parameters, bound under a name prefix.
pub struct GruVars {
    wx: [Var; 3],
    bx: [Var; 3],
    wh: [Var; 3],
    bh: [Var; 3],
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruCell {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self { input_dim, hidden }
    }

    /// Fresh parameters (unprefixed names); merge via `extend_prefixed`.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut p = ParamSet::new();
        for gate in GATES {
            p.insert(
                format!("wx_{gate}"),
                init::kaiming_uniform(rng, &[self.hidden, self.input_dim], self.input_dim),
            );
            p.insert(format!("bx_{gate}"), crate::nn::Tensor::zeros(&[self.hidden]));
            p.insert(format!("wh_{gate}"), init::orthogonal(rng, self.hidden, self.hidden));
            p.insert(format!("bh_{gate}"), crate::nn::Tensor::zeros(&[self.hidden]));
        }
        p
    }

    /// Closed-form parameter count: `3 (H X + H^2 + 2 H)`.
    pub fn param_count(&self) -> usize {
        3 * (self.hidden * self.input_dim + self.hidden * self.hidden + 2 * self.hidden)
    }

    pub fn bind(&self, bound: &BoundParams, prefix: &str) -> GruVars {
        let get = |n: &str| bound.var(&format!("{prefix}{n}"));
        GruVars {
            wx: GATES.map(|g| get(&format!("wx_{g}"))),
            bx: GATES.map(|g| get(&format!("bx_{g}"))),
            wh: GATES.map(|g| get(&format!("wh_{g}"))),
            bh: GATES.map(|g| get(&format!("bh_{g}"))),
        }
    }

    /// One step: `x [b, input_dim]`, `h [b, hidden]` -> next hidden `[b, hidden]`.
    pub fn step(&self, tape: &Tape, p: &GruVars, x: Var, h: Var) -> Var {
        let gate = |i: usize| {
            let xa = tape.linear(x, p.wx[i], p.bx[i]);
            let ha = tape.linear(h, p.wh[i], p.bh[i]);
            (xa, ha)
        };
        let (zx, zh) = gate(0);
        let z = tape.sigmoid(tape.add(zx, zh));
        let (rx, rh) = gate(1);
        let r = tape.sigmoid(tape.add(rx, rh));
        let (nx, nh) = gate(2);
        let n = tape.tanh(tape.add(nx, tape.mul(r, nh)));
        let keep = tape.mul(z, h);
        let one_minus_z = tape.add_const(tape.neg(z), 1.0);
        tape.add(keep, tape.mul(one_minus_z, n))
    }

    /// Run over `xs [t, input_dim]` starting from `h0 [1, hidden]`.
    /// Returns hidden rows `[t, hidden]` and the final hidden `[1, hidden]`.
    pub fn forward_seq(&self, tape: &Tape, p: &GruVars, xs: Var, h0: Var) -> (Var, Var) {
        let t_len = tape.shape_of(xs)[0];
        let mut h = h0;
        let mut rows = Vec::with_capacity(t_len);
        for k in 0..t_len {
            let x = tape.slice_rows(xs, k, k + 1);
            h = self.step(tape, p, x, h);
            rows.push(h);
        }
        (tape.concat_rows(&rows), h)
    }
}
