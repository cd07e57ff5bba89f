//! Differentiable end-to-end forwards for training: waveform in, aligned
//! waveform estimate out.
//!
//! The input is padded with `latency_samples` of trailing zeros, analyzed
//! with the plain (constant) STFT, run through the networks in wall-clock
//! rows, realigned by dropping the first `lookahead` output rows, and
//! inverted through the differentiable iSTFT. Slicing to the input length
//! yields an estimate **index-aligned with the input** — exactly the signal
//! the streaming pipeline emits, so the pair can be cross-checked.
//!
//! Only the estimate path needs gradients: the noisy spectrum enters as a
//! constant, and for stage-2 training the frozen stage-1 runs on a throwaway
//! tape and feeds the generator constants.

use crate::dsp::{self, StftConfig};
use crate::error::{Error, Result};
use crate::models::{Generator, Stage1Net};
use crate::nn::{BoundParams, Tape, Tensor, Var};

/// Samples of algorithmic delay the forward compensates for.
pub fn forward_latency(stft: &StftConfig, lookahead: usize) -> usize {
    stft.win_len + lookahead * stft.hop
}

/// Constant re/im spectrum planes `[frames, bins]` of `signal` padded with
/// `pad` trailing zeros.
fn spec_planes(signal: &[f64], pad: usize, cfg: &StftConfig) -> Result<(Tensor, Tensor)> {
    let mut padded = signal.to_vec();
    padded.resize(signal.len() + pad, 0.0);
    let spec = dsp::stft(&padded, cfg)?;
    let (frames, bins) = (spec.frames(), spec.bins());
    let mut re = Vec::with_capacity(frames * bins);
    let mut im = Vec::with_capacity(frames * bins);
    for c in spec.data() {
        re.push(c.re);
        im.push(c.im);
    }
    Ok((
        Tensor::from_vec(re, &[frames, bins])?,
        Tensor::from_vec(im, &[frames, bins])?,
    ))
}

/// Drop the first `lookahead` rows (zero frames emitted before the first
/// enhanced frame), invert, and slice to the first `n` samples.
fn realign_and_invert(
    tape: &Tape,
    z_re: Var,
    z_im: Var,
    lookahead: usize,
    stft: &StftConfig,
    n: usize,
) -> Var {
    let frames = tape.shape_of(z_re)[0];
    let zr = tape.slice_rows(z_re, lookahead, frames);
    let zi = tape.slice_rows(z_im, lookahead, frames);
    let spec = tape.stack_new_axis(&[zr, zi]);
    let wave = tape.istft_op(spec, stft);
    let len = tape.shape_of(wave)[0];
    debug_assert!(len >= n, "inverted length {len} covers the input {n}");
    let col = tape.reshape(wave, &[len, 1]);
    let cut = tape.slice_rows(col, 0, n);
    tape.reshape(cut, &[n])
}

/// Stage-1 training forward: noisy waveform to aligned enhanced waveform,
/// differentiable in the bound stage-1 parameters.
pub fn stage1_training_forward(
    net: &Stage1Net,
    tape: &Tape,
    bound: &BoundParams,
    noisy: &[f64],
) -> Result<Var> {
    if noisy.is_empty() {
        return Err(Error::InvalidConfig("empty training signal".into()));
    }
    let look = net.cfg.df_lookahead;
    let latency = forward_latency(&net.stft, look);
    let (re, im) = spec_planes(noisy, latency, &net.stft)?;
    let (s_re, s_im) = (tape.input(re), tape.input(im));
    let mut state = net.state();
    let out = net.forward_chunk(tape, bound, s_re, s_im, &mut state);
    Ok(realign_and_invert(tape, out.z_re, out.z_im, look, &net.stft, noisy.len()))
}

/// Frozen stage-1 products for one signal, as constants: the noisy planes,
/// the same planes delayed by `lookahead` rows, and the stage-1 output rows.
/// Runs on a private tape; nothing here joins the training graph.
pub struct FrozenStage1 {
    pub y_re: Tensor,
    pub y_im: Tensor,
    pub y_del_re: Tensor,
    pub y_del_im: Tensor,
    pub z_re: Tensor,
    pub z_im: Tensor,
}

/// Shift rows down by `delay` with zero fill: row `w` of the result is row
/// `w - delay` of `x`.
fn delay_rows(x: &Tensor, delay: usize) -> Tensor {
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; t * n];
    for w in delay..t {
        out[w * n..(w + 1) * n].copy_from_slice(&x.data()[(w - delay) * n..(w - delay + 1) * n]);
    }
    Tensor::from_vec(out, &[t, n]).unwrap()
}

/// Evaluate the frozen stage 1 on `noisy` (padded with its latency).
pub fn run_frozen_stage1(net: &Stage1Net, noisy: &[f64]) -> Result<FrozenStage1> {
    if noisy.is_empty() {
        return Err(Error::InvalidConfig("empty training signal".into()));
    }
    let look = net.cfg.df_lookahead;
    let latency = forward_latency(&net.stft, look);
    let (re, im) = spec_planes(noisy, latency, &net.stft)?;
    let tape = Tape::new();
    let bound = net.params.bind(&tape);
    let (s_re, s_im) = (tape.input(re.clone()), tape.input(im.clone()));
    let mut state = net.state();
    let out = net.forward_chunk(&tape, &bound, s_re, s_im, &mut state);
    Ok(FrozenStage1 {
        y_del_re: delay_rows(&re, look),
        y_del_im: delay_rows(&im, look),
        y_re: re,
        y_im: im,
        z_re: tape.value(out.z_re),
        z_im: tape.value(out.z_im),
    })
}

/// Stage-2 training forward: noisy waveform through the frozen stage 1 and
/// the generator to an aligned enhanced waveform, differentiable in the
/// bound generator parameters only.
pub fn stage2_training_forward(
    stage1: &Stage1Net,
    generator: &Generator,
    tape: &Tape,
    gen_bound: &BoundParams,
    noisy: &[f64],
) -> Result<Var> {
    let frozen = run_frozen_stage1(stage1, noisy)?;
    let look = stage1.cfg.df_lookahead;
    let bins = stage1.stft.bins();
    let y_re = tape.input(frozen.y_del_re);
    let y_im = tape.input(frozen.y_del_im);
    let z_re = tape.input(frozen.z_re);
    let z_im = tape.input(frozen.z_im);
    let mut state = generator.state(bins);
    let (x_re, x_im) = generator.forward_chunk(tape, gen_bound, y_re, y_im, z_re, z_im, &mut state);
    Ok(realign_and_invert(tape, x_re, x_im, look, &stage1.stft, noisy.len()))
}
