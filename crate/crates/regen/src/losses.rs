//! Training objectives for both stages.
//!
//! Stage 1 trains against a five-term regression composite on time-domain
//! signal pairs: compressed spectral matching (magnitude plus phase-aware),
//! multi-resolution magnitude L1, framewise log-SNR matching, capped negative
//! SI-SDR, and mel-band magnitude L1. Stage 2 trains adversarially: a
//! multi-scale hinge objective for the discriminator, and for the generator a
//! linear score objective plus a β-weighted time-domain L1.
//!
//! Every term is built on the tape, so gradients flow to whichever inputs are
//! differentiable; targets enter as constant leaves whose gradients are
//! simply never read. All terms are means over their support (spectrogram
//! entries, frames, or samples), so the weights and β are independent of
//! signal length and batch size.

use crate::dsp::{build_filterbank, FilterbankKind, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};

/// Saturation of the SI-SDR term, in dB.
pub const SI_SDR_CAP_DB: f64 = 50.0;
/// `10^(−cap/10)`: the ratio blend implementing the ±cap saturation.
const CAP_RATIO: f64 = 1e-5;
/// Absolute energy floor; keeps the all-zero estimate defined (exactly −cap).
const ENERGY_FLOOR: f64 = 1e-12;
/// Floor added to squared spectral magnitudes before roots and logs.
const SPEC_EPS: f64 = 1e-9;
const LN10: f64 = core::f64::consts::LN_10;

/// Weights and analysis geometry for the stage-1 composite loss.
#[derive(Debug, Clone)]
pub struct Stage1LossConfig {
    /// Magnitude compression exponent `c` in `|X|^c`.
    pub compression: f64,
    pub w_spectral: f64,
    pub w_multires: f64,
    pub w_local_snr: f64,
    pub w_si_sdr: f64,
    pub w_mel_l1: f64,
    /// FFT sizes of the multi-resolution magnitude term; each runs with
    /// `hop = size / 4`.
    pub multires_fft_sizes: Vec<usize>,
    /// Frame length of the local log-SNR term, in milliseconds.
    pub local_snr_frame_ms: f64,
    pub mel_bands: usize,
    /// Analysis geometry shared by the spectral and mel terms.
    pub stft: StftConfig,
}

impl Default for Stage1LossConfig {
    fn default() -> Self {
        Self {
            compression: 0.3,
            w_spectral: 1.0,
            w_multires: 0.5,
            w_local_snr: 0.05,
            w_si_sdr: 0.2,
            w_mel_l1: 1.0,
            multires_fft_sizes: vec![256, 512, 1024],
            local_snr_frame_ms: 20.0,
            mel_bands: 80,
            stft: StftConfig::default(),
        }
    }
}

impl Stage1LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("spectral", self.w_spectral),
            ("multires", self.w_multires),
            ("local_snr", self.w_local_snr),
            ("si_sdr", self.w_si_sdr),
            ("mel_l1", self.w_mel_l1),
        ];
        for (name, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "loss weight {name} must be finite and >= 0, got {w}"
                )));
            }
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "compression must lie in (0, 1], got {}",
                self.compression
            )));
        }
        if self.multires_fft_sizes.is_empty() {
            return Err(Error::InvalidConfig("multires_fft_sizes is empty".into()));
        }
        for &size in &self.multires_fft_sizes {
            if size < 8 || size % 4 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "multires FFT size {size} must be >= 8 and divisible by 4"
                )));
            }
        }
        if !(self.local_snr_frame_ms > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "local_snr_frame_ms must be > 0, got {}",
                self.local_snr_frame_ms
            )));
        }
        if self.mel_bands == 0 {
            return Err(Error::InvalidConfig("mel_bands must be >= 1".into()));
        }
        self.stft.validate()
    }

    /// Local-SNR frame length in samples (at least one).
    pub fn local_snr_frame(&self) -> usize {
        let samples = self.local_snr_frame_ms / 1000.0 * f64::from(self.stft.sample_rate);
        (samples.round() as usize).max(1)
    }
}

/// Weights of the stage-2 adversarial objectives.
#[derive(Debug, Clone)]
pub struct GanLossConfig {
    /// Weight of the time-domain L1 term in the generator objective.
    pub beta: f64,
    pub n_scales: usize,
    pub hinge_margin: f64,
}

impl Default for GanLossConfig {
    fn default() -> Self {
        Self {
            beta: 100.0,
            n_scales: 3,
            hinge_margin: 1.0,
        }
    }
}

impl GanLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if self.n_scales == 0 {
            return Err(Error::InvalidConfig("n_scales must be >= 1".into()));
        }
        if !self.hinge_margin.is_finite() || self.hinge_margin < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "hinge_margin must be finite and >= 0, got {}",
                self.hinge_margin
            )));
        }
        Ok(())
    }
}

/// Named scalar loss terms plus the weighted total for one batch.
///
/// `total` stays on the tape so callers can run the backward pass on it; the
/// `f64` copies exist for logging.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub terms: Vec<(String, f64)>,
    pub total: Var,
    pub total_value: f64,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

fn split_planes(tape: &Tape, spec: Var) -> (Var, Var) {
    (tape.index_axis0(spec, 0), tape.index_axis0(spec, 1))
}

/// `re² + im² + SPEC_EPS`, the floored squared magnitude all spectral terms
/// derive from. The floor keeps roots and fractional powers differentiable
/// at silent bins.
fn mag_sq_floored(tape: &Tape, re: Var, im: Var) -> Var {
    let power = tape.add(tape.mul(re, re), tape.mul(im, im));
    tape.add_const(power, SPEC_EPS)
}

/// `(m²)^(e/2) = m^e` via exp/log, valid because the base is floored > 0.
fn mag_pow(tape: &Tape, mag_sq: Var, exponent: f64) -> Var {
    tape.exp(tape.scale(tape.log(mag_sq), exponent / 2.0))
}

fn mean_sq_diff(tape: &Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    tape.mean(tape.mul(d, d))
}

/// Compressed spectral loss: mean (|X|ᶜ − |X̂|ᶜ)² plus the phase-aware mean
/// |X|ᶜe^{j∠X} − |X̂|ᶜe^{j∠X̂}|², both averaged over all (frame, bin) entries.
/// The phase-aware factor is |X|^{c−1} applied to the raw complex planes.
fn compressed_spectral_term(tape: &Tape, x: (Var, Var), e: (Var, Var), c: f64) -> Var {
    let mx2 = mag_sq_floored(tape, x.0, x.1);
    let me2 = mag_sq_floored(tape, e.0, e.1);
    let mag = mean_sq_diff(tape, mag_pow(tape, mx2, c), mag_pow(tape, me2, c));
    let fx = mag_pow(tape, mx2, c - 1.0);
    let fe = mag_pow(tape, me2, c - 1.0);
    let re = mean_sq_diff(tape, tape.mul(fx, x.0), tape.mul(fe, e.0));
    let im = mean_sq_diff(tape, tape.mul(fx, x.1), tape.mul(fe, e.1));
    tape.add(mag, tape.add(re, im))
}

/// Framewise log-SNR matching on non-overlapping frames. With the residual
/// r = x − x̂ as the common noise reference and
/// L(a, r) = 10·log₁₀((‖a‖² + δ)/(‖r‖² + δ)), the term is
/// mean_k (L(x̂_k, r_k) − L(x_k, r_k))²; the residual energies cancel, so the
/// implementation matches per-frame log energies directly and stays smooth
/// everywhere. A signal shorter than one frame is treated as a single frame;
/// a trailing partial frame is dropped.
fn local_snr_term(tape: &Tape, clean: &[f64], estimate: Var, frame: usize) -> Var {
    let n = clean.len();
    let (k, flen) = if n >= frame { (n / frame, frame) } else { (1, n) };
    let est2d = tape.reshape(estimate, &[n, 1]);
    let head = tape.slice_rows(est2d, 0, k * flen);
    let frames = tape.reshape(head, &[k, flen]);
    let sq = tape.mul(frames, frames);
    let ones = Tensor::full(&[1, flen], 1.0);
    let energy = tape.reshape(tape.apply_const_matrix(sq, &ones), &[k]);
    let log_est = tape.log(tape.add_const(energy, ENERGY_FLOOR));
    let log_clean: Vec<f64> = (0..k)
        .map(|i| {
            let e: f64 = clean[i * flen..(i + 1) * flen].iter().map(|x| x * x).sum();
            (e + ENERGY_FLOOR).ln()
        })
        .collect();
    let log_clean = tape.input(Tensor::from_vec(log_clean, &[k]).expect("frame energies"));
    let diff_db = tape.scale(tape.sub(log_est, log_clean), 10.0 / LN10);
    tape.mean(tape.mul(diff_db, diff_db))
}

/// SI-SDR in dB with a smooth ±cap. With s the projection of the estimate on
/// the clean signal and e the remainder, the ratio is blended as
/// (‖s‖² + τ‖e‖² + τδ) / (‖e‖² + τ‖s‖² + δ) with τ = 10^(−cap/10), so a
/// perfect estimate approaches +cap, a zero or orthogonal estimate hits −cap,
/// and the expression is differentiable everywhere, including at x̂ = 0.
fn smooth_si_sdr(tape: &Tape, clean: &[f64], clean_v: Var, estimate: Var) -> Var {
    let n = clean.len();
    let x2: f64 = clean.iter().map(|x| x * x).sum();
    let coeff = tape.scale(tape.dot(estimate, clean_v), 1.0 / (x2 + ENERGY_FLOOR));
    let row = tape.reshape(clean_v, &[1, n]);
    let s = tape.reshape(tape.rows_scale(row, tape.reshape(coeff, &[1])), &[n]);
    let e = tape.sub(estimate, s);
    let s2 = tape.dot(s, s);
    let e2 = tape.dot(e, e);
    let num = tape.add(s2, tape.add_const(tape.scale(e2, CAP_RATIO), CAP_RATIO * ENERGY_FLOOR));
    let den = tape.add(e2, tape.add_const(tape.scale(s2, CAP_RATIO), ENERGY_FLOOR));
    tape.scale(tape.sub(tape.log(num), tape.log(den)), 10.0 / LN10)
}

/// Stage-1 composite loss between a clean target and a differentiable
/// estimate (an `[n]` signal on the tape).
///
/// Terms, each a mean over its support: `spectral` (compressed magnitude +
/// phase-aware squared error), `multires` (magnitude L1 summed over the
/// configured FFT sizes), `local_snr` (framewise log-SNR match), `si_sdr`
/// (negative smooth-capped SI-SDR, so minimizing drives SI-SDR up), and
/// `mel_l1` (mel-band magnitude L1). The total is the weighted sum.
pub fn stage1_loss(
    tape: &Tape,
    clean: &[f64],
    estimate: Var,
    cfg: &Stage1LossConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    let shape = tape.shape_of(estimate);
    if shape != [clean.len()] {
        return Err(Error::LengthMismatch {
            context: "stage1_loss".into(),
            left: clean.len(),
            right: shape.iter().product(),
        });
    }
    if clean.is_empty() {
        return Err(Error::InvalidConfig("stage1_loss: empty signals".into()));
    }
    if clean.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stage1_loss clean target".into()));
    }
    let clean_v = tape.input(Tensor::from_vec(clean.to_vec(), &[clean.len()]).expect("clean"));

    let x_planes = split_planes(tape, tape.stft_op(clean_v, &cfg.stft));
    let e_planes = split_planes(tape, tape.stft_op(estimate, &cfg.stft));
    let spectral = compressed_spectral_term(tape, x_planes, e_planes, cfg.compression);

    let mut multires: Option<Var> = None;
    for &size in &cfg.multires_fft_sizes {
        let sub_cfg = StftConfig {
            fft_len: size,
            win_len: size,
            hop: size / 4,
            lookahead_frames: 0,
            sample_rate: cfg.stft.sample_rate,
        };
        let (xr, xi) = split_planes(tape, tape.stft_op(clean_v, &sub_cfg));
        let (er, ei) = split_planes(tape, tape.stft_op(estimate, &sub_cfg));
        let mx = tape.sqrt(mag_sq_floored(tape, xr, xi));
        let me = tape.sqrt(mag_sq_floored(tape, er, ei));
        let l1 = tape.mean_abs_diff(mx, me);
        multires = Some(match multires {
            None => l1,
            Some(acc) => tape.add(acc, l1),
        });
    }
    let multires = multires.expect("at least one FFT size");

    let local_snr = local_snr_term(tape, clean, estimate, cfg.local_snr_frame());
    let si_sdr = tape.neg(smooth_si_sdr(tape, clean, clean_v, estimate));

    let fb = build_filterbank(FilterbankKind::Mel, cfg.mel_bands, &cfg.stft)?;
    let mel_matrix = Tensor::from_vec(fb.matrix.clone(), &[cfg.mel_bands, cfg.stft.bins()])
        .expect("mel filterbank");
    let mag_x = tape.sqrt(mag_sq_floored(tape, x_planes.0, x_planes.1));
    let mag_e = tape.sqrt(mag_sq_floored(tape, e_planes.0, e_planes.1));
    let mel_x = tape.apply_const_matrix(mag_x, &mel_matrix);
    let mel_e = tape.apply_const_matrix(mag_e, &mel_matrix);
    let mel_l1 = tape.mean_abs_diff(mel_x, mel_e);

    let entries = [
        ("spectral", cfg.w_spectral, spectral),
        ("multires", cfg.w_multires, multires),
        ("local_snr", cfg.w_local_snr, local_snr),
        ("si_sdr", cfg.w_si_sdr, si_sdr),
        ("mel_l1", cfg.w_mel_l1, mel_l1),
    ];
    let mut terms = Vec::with_capacity(entries.len());
    let mut total: Option<Var> = None;
    for (name, weight, term) in entries {
        terms.push((name.to_string(), tape.item(term)));
        let weighted = tape.scale(term, weight);
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted),
        });
    }
    let total = total.expect("five terms");
    Ok(LossReport {
        terms,
        total,
        total_value: tape.item(total),
    })
}

/// Multi-scale hinge objective for the discriminator:
/// Σ_l mean(max(0, m − D_l(x))) + mean(max(0, m + D_l(x̂))).
///
/// Scale counts must match the config; that is a programming error, not a
/// runtime condition, so it asserts.
pub fn hinge_discriminator_loss(
    tape: &Tape,
    real_scores: &[Var],
    fake_scores: &[Var],
    cfg: &GanLossConfig,
) -> Var {
    assert_eq!(real_scores.len(), cfg.n_scales, "hinge: real scale count");
    assert_eq!(fake_scores.len(), cfg.n_scales, "hinge: fake scale count");
    let mut acc: Option<Var> = None;
    for (&r, &f) in real_scores.iter().zip(fake_scores) {
        let real_part = tape.mean(tape.relu(tape.add_const(tape.neg(r), cfg.hinge_margin)));
        let fake_part = tape.mean(tape.relu(tape.add_const(f, cfg.hinge_margin)));
        let scale_sum = tape.add(real_part, fake_part);
        acc = Some(match acc {
            None => scale_sum,
            Some(a) => tape.add(a, scale_sum),
        });
    }
    acc.expect("n_scales >= 1")
}

/// Generator adversarial objective: Σ_l mean(−D_l(x̂)), linear in every score.
pub fn generator_adversarial_loss(tape: &Tape, fake_scores: &[Var], cfg: &GanLossConfig) -> Var {
    assert_eq!(fake_scores.len(), cfg.n_scales, "adversarial: scale count");
    let mut acc: Option<Var> = None;
    for &f in fake_scores {
        let term = tape.mean(tape.neg(f));
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    acc.expect("n_scales >= 1")
}

/// Full generator objective: `adv + β · mean |x − x̂|` over time-domain
/// samples.
pub fn generator_total_loss(
    tape: &Tape,
    adv: Var,
    clean: &[f64],
    enhanced: Var,
    cfg: &GanLossConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    let shape = tape.shape_of(enhanced);
    if shape != [clean.len()] {
        return Err(Error::LengthMismatch {
            context: "generator_total_loss".into(),
            left: clean.len(),
            right: shape.iter().product(),
        });
    }
    let clean_v = tape.input(Tensor::from_vec(clean.to_vec(), &[clean.len()]).expect("clean"));
    let l1 = tape.mean_abs_diff(enhanced, clean_v);
    let total = tape.add(adv, tape.scale(l1, cfg.beta));
    Ok(LossReport {
        terms: vec![
            ("adversarial".to_string(), tape.item(adv)),
            ("time_l1".to_string(), tape.item(l1)),
        ],
        total,
        total_value: tape.item(total),
    })
}
