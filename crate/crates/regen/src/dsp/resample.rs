//! Windowed-sinc polyphase sample-rate conversion.

use crate::error::{Error, Result};

/// Sample rates the engine accepts, matching the corpus mix of telephony,
/// broadcast and studio material.
pub const SUPPORTED_RATES: [u32; 7] = [8000, 16000, 22050, 24000, 32000, 44100, 48000];

/// Taps per polyphase branch.
const TAPS: usize = 64;
/// Kaiser window shape parameter (about 90 dB stopband).
const KAISER_BETA: f64 = 8.6;

fn check_rate(rate: u32) -> Result<()> {
    if SUPPORTED_RATES.contains(&rate) {
        Ok(())
    } else {
        Err(Error::UnsupportedRate {
            rate,
            supported: SUPPORTED_RATES.to_vec(),
        })
    }
}

/// Zeroth-order modified Bessel function of the first kind, by power series.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window evaluated at `t` in [-1, 1].
fn kaiser(t: f64, beta: f64) -> f64 {
    if t.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - t * t).sqrt()) / bessel_i0(beta)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Polyphase tap table for the reduced ratio `up/down`.
///
/// Branch `p` holds the kernel sampled at fractional offset `p/up`, with each
/// branch normalized to unit DC gain so constant signals pass through the
/// converter unchanged.
struct PolyphaseFilter {
    up: usize,
    down: usize,
    taps: Vec<Vec<f64>>,
    half: usize,
}

impl PolyphaseFilter {
    fn new(from_rate: u32, to_rate: u32) -> Self {
        let g = gcd(from_rate, to_rate);
        let up = (to_rate / g) as usize;
        let down = (from_rate / g) as usize;
        let half = TAPS / 2;
        // Cutoff at the lower Nyquist, expressed in input-sample time.
        let cutoff = 0.5 * (to_rate as f64 / from_rate as f64).min(1.0);
        let mut taps = Vec::with_capacity(up);
        for p in 0..up {
            let frac = p as f64 / up as f64;
            let mut branch = Vec::with_capacity(TAPS);
            for i in 0..TAPS {
                // Tap i multiplies input sample base + half - i, so the kernel
                // argument is frac + i - half.
                let t = frac + i as f64 - half as f64;
                branch.push(2.0 * cutoff * sinc(2.0 * cutoff * t) * kaiser(t / half as f64, KAISER_BETA));
            }
            let sum: f64 = branch.iter().sum();
            for b in branch.iter_mut() {
                *b /= sum;
            }
            taps.push(branch);
        }
        Self { up, down, taps, half }
    }
}

/// Windowed-sinc polyphase resampling between two supported rates.
///
/// Output length is `round(len * to / from)`; equal rates return the input
/// bit-identically. Samples beyond the input edges are treated as zero.
pub fn resample(signal: &[f64], from_rate: u32, to_rate: u32) -> Result<Vec<f64>> {
    check_rate(from_rate)?;
    check_rate(to_rate)?;
    if from_rate == to_rate {
        return Ok(signal.to_vec());
    }
    let out_len = ((signal.len() as f64) * to_rate as f64 / from_rate as f64).round() as usize;
    if signal.is_empty() || out_len == 0 {
        return Ok(vec![0.0; out_len]);
    }

    let filter = PolyphaseFilter::new(from_rate, to_rate);
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        // Output instant in input-sample time: j * down / up.
        let num = j * filter.down;
        let base = num / filter.up;
        let phase = num % filter.up;
        let branch = &filter.taps[phase];
        let mut acc = 0.0;
        for (i, &h) in branch.iter().enumerate() {
            let idx = base as isize + filter.half as isize - i as isize;
            if idx >= 0 && (idx as usize) < signal.len() {
                acc += h * signal[idx as usize];
            }
        }
        out.push(acc);
    }
    Ok(out)
}
