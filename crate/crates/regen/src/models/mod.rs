//! Network topologies: predictive first stage, generative second stage, and
//! the multi-scale critic.
//!
//! Every forward pass runs on the autodiff tape, for training and inference
//! alike — there is no separate inference path that could drift. Streaming is
//! chunked evaluation of the same graph: each layer that looks across time
//! carries explicit state (conv input history, recurrent hidden, delay-line
//! tails), and a chunked run with carried state reproduces the single-pass
//! run on the concatenated input exactly, because every op sees the same
//! numbers in the same order.

mod discriminator;
mod generator;
mod gru;
mod ssm;
mod stage1;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig, GeneratorState};
pub use gru::{GruCell, GruVars};
pub use ssm::{SsmLayer, SsmVars};
pub use stage1::{deep_filter_offline, Stage1Config, Stage1Net, Stage1Out, Stage1State};

use crate::nn::{Tape, Tensor, Var};

/// Input history for a time-causal conv over `[c, t, f]` streams. Prepends
/// the last `kt - 1` frames of everything seen so far (zeros at stream
/// start, matching the offline conv's implicit zero padding) and trims the
/// warmup rows, so chunked output equals offline output bit for bit.
#[derive(Debug)]
pub(crate) struct ConvTimeState {
    hist: Tensor,
    kt: usize,
}

impl ConvTimeState {
    pub(crate) fn new(c_in: usize, kt: usize, f: usize) -> Self {
        Self { hist: Tensor::zeros(&[c_in, kt - 1, f]), kt }
    }

    /// Wrap `x [c_in, t, f]` with history; returns the conv input and the
    /// number of leading output frames to trim.
    pub(crate) fn extend(&mut self, tape: &Tape, x: Var) -> (Var, usize) {
        if self.kt == 1 {
            return (x, 0);
        }
        let keep = self.kt - 1;
        let h = tape.input(self.hist.clone());
        let ext = tape.concat_time(&[h, x]);
        let v = tape.value(ext);
        self.hist = last_time_frames(&v, keep);
        (ext, keep)
    }
}

/// Delay line over `[t, n]` row streams: output row `w` is input row
/// `w - delay`, zeros before the stream began.
#[derive(Debug)]
pub(crate) struct DelayLine {
    tail: Tensor,
    delay: usize,
}

impl DelayLine {
    pub(crate) fn new(delay: usize, n: usize) -> Self {
        Self { tail: Tensor::zeros(&[delay.max(1), n]), delay }
    }

    /// Delayed rows, same height as `x`.
    pub(crate) fn apply(&mut self, tape: &Tape, x: Var) -> Var {
        if self.delay == 0 {
            return x;
        }
        let t = tape.shape_of(x)[0];
        let ext = self.extend(tape, x);
        tape.slice_rows(ext, 0, t)
    }

    /// History-prepended rows `[delay + t, n]`: row `j` is input row
    /// `s - delay + j` for a chunk starting at stream row `s`.
    pub(crate) fn extend(&mut self, tape: &Tape, x: Var) -> Var {
        assert!(self.delay > 0, "extend on zero-delay line");
        let tl = tape.input(self.tail.clone());
        let ext = tape.concat_rows(&[tl, x]);
        let v = tape.value(ext);
        self.tail = last_rows(&v, self.delay);
        ext
    }
}

/// Last `k` frames of `[c, t, f]` along the time axis.
pub(crate) fn last_time_frames(x: &Tensor, k: usize) -> Tensor {
    let s = x.shape();
    let (c, t, f) = (s[0], s[1], s[2]);
    assert!(k <= t, "last_time_frames: {k} of {t}");
    let mut out = Vec::with_capacity(c * k * f);
    for ci in 0..c {
        out.extend_from_slice(&x.data()[(ci * t + t - k) * f..(ci + 1) * t * f]);
    }
    Tensor::from_vec(out, &[c, k, f]).unwrap()
}

/// Last `k` rows of `[t, n]`.
pub(crate) fn last_rows(x: &Tensor, k: usize) -> Tensor {
    let s = x.shape();
    let (t, n) = (s[0], s[1]);
    assert!(k <= t, "last_rows: {k} of {t}");
    Tensor::from_vec(x.data()[(t - k) * n..].to_vec(), &[k, n]).unwrap()
}
