//! Synthetic training data: speech-like clean signals and the seven
//! distortion families.
//!
//! Clean signals are harmonic complexes — a drifting fundamental with
//! formant-shaped harmonics under a syllabic amplitude envelope — fully
//! determined by a seed, so a dataset is reproducible from its manifest
//! alone; the manifest records per-item seeds and sampled distortion
//! parameters, not audio.
//!
//! Distortions stack 1–3 deep per item. Parameter conventions:
//! additive and wind noise hit their target SNR exactly (energy-ratio
//! scaling); clipping thresholds are absolute sample values; bandwidth
//! limiting is a down/up resample through the largest supported rate at or
//! below twice the cutoff; codec distortion is mu-law companded
//! quantization; packet loss zeroes independent fixed-length bursts; wind
//! noise is band-limited to 20–300 Hz with a slow gust envelope.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dsp::{resample, SUPPORTED_RATES};
use crate::error::{Error, Result};

/// Wind-noise band, fixed by convention.
pub const WIND_BAND_HZ: (f64, f64) = (20.0, 300.0);

/// One sampled distortion with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distortion {
    /// White noise at an exact signal-to-noise ratio.
    AdditiveNoise { snr_db: f64 },
    /// Convolution with a synthetic exponentially decaying impulse response.
    Reverb { rt60_s: f64 },
    /// Hard clip at an absolute threshold.
    Clipping { threshold: f64 },
    /// Down/up resample through a supported rate `<= 2 * cutoff_hz`.
    BandwidthLimit { cutoff_hz: f64 },
    /// Mu-law companded uniform quantization.
    Codec { bits: u32 },
    /// Independent fixed-length bursts zeroed with probability `rate`.
    PacketLoss { rate: f64, burst_ms: f64 },
    /// 20–300 Hz noise with a slow gust envelope, at an exact SNR.
    WindNoise { snr_db: f64 },
}

/// The seven families, for sampling and manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    AdditiveNoise,
    Reverb,
    Clipping,
    BandwidthLimit,
    Codec,
    PacketLoss,
    WindNoise,
}

pub const ALL_KINDS: [DistortionKind; 7] = [
    DistortionKind::AdditiveNoise,
    DistortionKind::Reverb,
    DistortionKind::Clipping,
    DistortionKind::BandwidthLimit,
    DistortionKind::Codec,
    DistortionKind::PacketLoss,
    DistortionKind::WindNoise,
];

impl Distortion {
    pub fn kind(&self) -> DistortionKind {
        match self {
            Distortion::AdditiveNoise { .. } => DistortionKind::AdditiveNoise,
            Distortion::Reverb { .. } => DistortionKind::Reverb,
            Distortion::Clipping { .. } => DistortionKind::Clipping,
            Distortion::BandwidthLimit { .. } => DistortionKind::BandwidthLimit,
            Distortion::Codec { .. } => DistortionKind::Codec,
            Distortion::PacketLoss { .. } => DistortionKind::PacketLoss,
            Distortion::WindNoise { .. } => DistortionKind::WindNoise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distortion::AdditiveNoise { snr_db } | Distortion::WindNoise { snr_db } => {
                snr_db.is_finite() && (-20.0..=60.0).contains(&snr_db)
            }
            Distortion::Reverb { rt60_s } => (0.05..=3.0).contains(&rt60_s),
            Distortion::Clipping { threshold } => {
                threshold.is_finite() && threshold > 0.0 && threshold <= 10.0
            }
            Distortion::BandwidthLimit { cutoff_hz } => {
                cutoff_hz.is_finite() && cutoff_hz >= 2000.0
            }
            Distortion::Codec { bits } => (2..=16).contains(&bits),
            Distortion::PacketLoss { rate, burst_ms } => {
                (0.0..=1.0).contains(&rate) && (5.0..=200.0).contains(&burst_ms)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("distortion parameters out of range: {self:?}")))
        }
    }

    /// Degrade `x` in place-free fashion. Randomness (noise draws, packet
    /// fates) comes from `rng`; parameters are fixed by `self`.
    pub fn apply(&self, x: &[f64], rate: u32, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match *self {
            Distortion::AdditiveNoise { snr_db } => {
                let noise: Vec<f64> = (0..x.len()).map(|_| gauss(rng)).collect();
                add_at_snr(x, &noise, snr_db)
            }
            Distortion::Reverb { rt60_s } => {
                let rir = synth_rir(rt60_s, rate, rng);
                let mut out = fft_convolve(x, &rir);
                out.truncate(x.len());
                out
            }
            Distortion::Clipping { threshold } => {
                x.iter().map(|&v| v.clamp(-threshold, threshold)).collect()
            }
            Distortion::BandwidthLimit { cutoff_hz } => {
                let target = SUPPORTED_RATES
                    .iter()
                    .copied()
                    .filter(|&r| r < rate && f64::from(r) <= 2.0 * cutoff_hz)
                    .max()
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "no supported rate at or below 2 x {cutoff_hz} Hz under {rate} Hz"
                        ))
                    })?;
                let down = resample(x, rate, target)?;
                let mut up = resample(&down, target, rate)?;
                up.resize(x.len(), 0.0);
                up
            }
            Distortion::Codec { bits } => mu_law_roundtrip(x, bits),
            Distortion::PacketLoss { rate: loss, burst_ms } => {
                let burst = ((burst_ms / 1000.0) * f64::from(rate)).round().max(1.0) as usize;
                let mut out = x.to_vec();
                for packet in out.chunks_mut(burst) {
                    if rng.random::<f64>() < loss {
                        packet.fill(0.0);
                    }
                }
                out
            }
            Distortion::WindNoise { snr_db } => {
                let raw: Vec<f64> = (0..x.len()).map(|_| gauss(rng)).collect();
                let band = bandpass_brickwall(&raw, rate, WIND_BAND_HZ.0, WIND_BAND_HZ.1);
                let gust = gust_envelope(x.len(), rate, rng);
                let wind: Vec<f64> =
                    band.iter().zip(&gust).map(|(&w, &g)| w * g).collect();
                add_at_snr(x, &wind, snr_db)
            }
        })
    }
}

/// Box–Muller standard normal.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `x + noise` with the noise rescaled so the measured SNR is exactly
/// `snr_db` (energy-ratio construction). Zero-energy inputs pass through.
fn add_at_snr(x: &[f64], noise: &[f64], snr_db: f64) -> Vec<f64> {
    let ex: f64 = x.iter().map(|v| v * v).sum();
    let en: f64 = noise.iter().map(|v| v * v).sum();
    if ex == 0.0 || en == 0.0 {
        return x.to_vec();
    }
    let scale = (ex / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    x.iter().zip(noise).map(|(&v, &n)| v + scale * n).collect()
}

/// Exponentially decaying noise tail behind a unit direct path, normalized
/// to unit energy. The amplitude time constant is `rt60 / (3 ln 10)`: energy
/// falls by 60 dB over `rt60` seconds.
fn synth_rir(rt60_s: f64, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tau = rt60_s / (3.0 * std::f64::consts::LN_10);
    let len = ((rt60_s * f64::from(rate)) as usize).clamp(8, 2 * rate as usize);
    let mut h = Vec::with_capacity(len);
    h.push(1.0);
    for t in 1..len {
        let decay = (-(t as f64) / (tau * f64::from(rate))).exp();
        h.push(0.35 * gauss(rng) * decay);
    }
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let norm = energy.sqrt().recip();
    h.iter().map(|v| v * norm).collect()
}

/// Full linear convolution, truncated by callers as needed.
fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let fft = rustfft::FftPlanner::new().plan_fft_forward(n);
    let mut a: Vec<Complex64> =
        x.iter().map(|&v| Complex64::new(v, 0.0)).chain(std::iter::repeat(
            Complex64::new(0.0, 0.0),
        )).take(n).collect();
    let mut b: Vec<Complex64> =
        h.iter().map(|&v| Complex64::new(v, 0.0)).chain(std::iter::repeat(
            Complex64::new(0.0, 0.0),
        )).take(n).collect();
    fft.process(&mut a);
    fft.process(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    let ifft = rustfft::FftPlanner::new().plan_fft_inverse(n);
    ifft.process(&mut a);
    a.iter().take(out_len).map(|c| c.re / n as f64).collect()
}

/// Zero every DFT bin outside `[lo, hi]` Hz (both mirror halves).
fn bandpass_brickwall(x: &[f64], rate: u32, lo_hz: f64, hi_hz: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let fft = rustfft::FftPlanner::new().plan_fft_forward(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let hz_per_bin = f64::from(rate) / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = (k.min(n - k) as f64) * hz_per_bin;
        if !(lo_hz..=hi_hz).contains(&f) {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    let ifft = rustfft::FftPlanner::new().plan_fft_inverse(n);
    ifft.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Slow positive modulation (0.25–1.5 Hz) for wind gusts.
fn gust_envelope(n: usize, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f = 0.25 + 1.25 * rng.random::<f64>();
    let phase = std::f64::consts::TAU * rng.random::<f64>();
    (0..n)
        .map(|t| {
            let arg = std::f64::consts::TAU * f * t as f64 / f64::from(rate) + phase;
            0.35 + 0.65 * (0.5 + 0.5 * arg.sin())
        })
        .collect()
}

/// Mu-law compand, uniform-quantize to `2^bits` levels, expand. Peak-relative
/// so the code range is fully used; silent input passes through.
fn mu_law_roundtrip(x: &[f64], bits: u32) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak == 0.0 {
        return x.to_vec();
    }
    let mu = (2f64.powi(bits as i32) - 1.0).max(1.0);
    let levels = 2f64.powi(bits as i32) - 1.0;
    x.iter()
        .map(|&v| {
            let y = v / peak;
            let c = y.signum() * (1.0 + mu * y.abs()).ln() / (1.0 + mu).ln();
            let q = ((c + 1.0) / 2.0 * levels).round() / levels * 2.0 - 1.0;
            let e = q.signum() * ((1.0 + mu).powf(q.abs()) - 1.0) / mu;
            e * peak
        })
        .collect()
}

/// Deterministic speech-like clean signal: drifting fundamental, formant
/// envelope over the harmonics, syllabic amplitude modulation, a whisper of
/// breath noise, peak-normalized to 0.5.
pub fn speech_like_clean(seed: u64, n: usize, rate: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let sr = f64::from(rate);
    let f0 = 85.0 + 170.0 * rng.random::<f64>();
    let drift_f = 1.5 + 2.5 * rng.random::<f64>();
    let drift_phase = std::f64::consts::TAU * rng.random::<f64>();
    let (f1, f2) = (
        300.0 + 500.0 * rng.random::<f64>(),
        900.0 + 1500.0 * rng.random::<f64>(),
    );
    let syll_f = 2.0 + 3.0 * rng.random::<f64>();
    let syll_phase = std::f64::consts::TAU * rng.random::<f64>();
    let slow_f = 0.4 + 0.8 * rng.random::<f64>();
    let slow_phase = std::f64::consts::TAU * rng.random::<f64>();

    // Highest harmonic that stays below 0.45 * rate at maximum drift.
    let k_max = ((0.45 * sr / (f0 * 1.08)).floor() as usize).clamp(1, 48);
    let formant = |f: f64| {
        let b1 = 1.0 / (1.0 + ((f - f1) / 120.0).powi(2));
        let b2 = 1.0 / (1.0 + ((f - f2) / 220.0).powi(2));
        1.0 + 3.0 * b1 + 2.0 * b2
    };
    let amps: Vec<f64> = (1..=k_max)
        .map(|k| formant(k as f64 * f0) / (k as f64).powf(0.7))
        .collect();
    let phases: Vec<f64> =
        (0..k_max).map(|_| std::f64::consts::TAU * rng.random::<f64>()).collect();

    let mut phase_acc = phases;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let tt = t as f64 / sr;
        let inst_f0 =
            f0 * (1.0 + 0.08 * (std::f64::consts::TAU * drift_f * tt + drift_phase).sin());
        let mut v = 0.0;
        for (k, (amp, ph)) in amps.iter().zip(phase_acc.iter_mut()).enumerate() {
            v += amp * ph.sin();
            *ph += std::f64::consts::TAU * (k + 1) as f64 * inst_f0 / sr;
        }
        let syll = 0.55 + 0.45 * (std::f64::consts::TAU * syll_f * tt + syll_phase).sin();
        let slow = 0.7 + 0.3 * (std::f64::consts::TAU * slow_f * tt + slow_phase).sin();
        let env = syll * syll * slow;
        v = v * env + 0.01 * gauss(rng) * env;
        out.push(v);
    }
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let s = 0.5 / peak;
        for v in &mut out {
            *v *= s;
        }
    }
    out
}

/// Dataset-wide synthesis policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    /// Sample rates drawn uniformly per item; all must be supported.
    pub rates: Vec<u32>,
    /// Families eligible for sampling.
    pub kinds: Vec<DistortionKind>,
    /// Items receive 1..=max_stack distortions.
    pub max_stack: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 4.0,
            rates: vec![48000],
            kinds: ALL_KINDS.to_vec(),
            max_stack: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if self.rates.is_empty() || self.kinds.is_empty() {
            return Err(Error::InvalidConfig(
                "rates and kinds must be non-empty".into(),
            ));
        }
        for &r in &self.rates {
            if !SUPPORTED_RATES.contains(&r) {
                return Err(Error::UnsupportedRate {
                    rate: r,
                    supported: SUPPORTED_RATES.to_vec(),
                });
            }
        }
        if !(1..=7).contains(&self.max_stack) {
            return Err(Error::InvalidConfig(format!(
                "max_stack must be in 1..=7, got {}",
                self.max_stack
            )));
        }
        Ok(())
    }
}

/// One (clean, degraded) pair plus its provenance.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub clean: Vec<f64>,
    pub degraded: Vec<f64>,
    pub rate: u32,
    pub seed: u64,
    pub distortions: Vec<Distortion>,
}

/// Draw parameters for one family at `rate`. Bandwidth limiting needs a
/// supported rate strictly below `rate`; at the lowest rate it falls back to
/// additive noise.
fn sample_distortion(kind: DistortionKind, rate: u32, rng: &mut ChaCha8Rng) -> Distortion {
    match kind {
        DistortionKind::AdditiveNoise => {
            Distortion::AdditiveNoise { snr_db: -5.0 + 25.0 * rng.random::<f64>() }
        }
        DistortionKind::Reverb => {
            Distortion::Reverb { rt60_s: 0.15 + 0.65 * rng.random::<f64>() }
        }
        DistortionKind::Clipping => {
            Distortion::Clipping { threshold: 0.1 + 0.3 * rng.random::<f64>() }
        }
        DistortionKind::BandwidthLimit => {
            let targets: Vec<u32> =
                SUPPORTED_RATES.iter().copied().filter(|&r| r < rate).collect();
            match targets.as_slice() {
                [] => Distortion::AdditiveNoise { snr_db: 0.0 + 20.0 * rng.random::<f64>() },
                ts => {
                    let t = ts[rng.random_range(0..ts.len())];
                    Distortion::BandwidthLimit { cutoff_hz: f64::from(t) / 2.0 }
                }
            }
        }
        DistortionKind::Codec => {
            Distortion::Codec { bits: rng.random_range(3..=8) }
        }
        DistortionKind::PacketLoss => Distortion::PacketLoss {
            rate: 0.05 + 0.25 * rng.random::<f64>(),
            burst_ms: 20.0,
        },
        DistortionKind::WindNoise => {
            Distortion::WindNoise { snr_db: 15.0 * rng.random::<f64>() }
        }
    }
}

/// SplitMix64 step, for independent per-item seeds.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthesize one item from its own seed.
pub fn synth_item(seed: u64, cfg: &SynthConfig) -> Result<DatasetItem> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = cfg.rates[rng.random_range(0..cfg.rates.len())];
    let n = (cfg.duration_s * f64::from(rate)).round() as usize;
    let clean = speech_like_clean(rng.random(), n, rate);

    let stack = rng.random_range(1..=cfg.max_stack);
    let mut distortions = Vec::with_capacity(stack);
    let mut degraded = clean.clone();
    for _ in 0..stack {
        let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
        let d = sample_distortion(kind, rate, &mut rng);
        degraded = d.apply(&degraded, rate, &mut rng)?;
        distortions.push(d);
    }
    Ok(DatasetItem { clean, degraded, rate, seed, distortions })
}

/// Synthesize `n_items` items with independent seed-derived keys.
pub fn synth_dataset(n_items: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<DatasetItem>> {
    if n_items == 0 {
        return Err(Error::InvalidConfig("n_items must be at least 1".into()));
    }
    (0..n_items)
        .map(|i| synth_item(mix_seed(seed, i as u64), cfg))
        .collect()
}

/// Manifest entry: everything needed to reproduce the item bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub index: usize,
    pub seed: u64,
    pub rate: u32,
    pub samples: usize,
    pub distortions: Vec<Distortion>,
    /// Optional audio dumps; empty when the dataset lives only as seeds.
    #[serde(default)]
    pub clean_path: String,
    #[serde(default)]
    pub degraded_path: String,
}

/// A reproducible dataset description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub synth: SynthConfig,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn from_items(seed: u64, synth: SynthConfig, items: &[DatasetItem]) -> Self {
        Self {
            seed,
            synth,
            items: items
                .iter()
                .enumerate()
                .map(|(index, it)| ManifestItem {
                    index,
                    seed: it.seed,
                    rate: it.rate,
                    samples: it.clean.len(),
                    distortions: it.distortions.clone(),
                    clean_path: String::new(),
                    degraded_path: String::new(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-synthesize the audio for every listed item (deterministic in the
    /// recorded per-item seeds).
    pub fn materialize(&self) -> Result<Vec<DatasetItem>> {
        self.items.iter().map(|m| synth_item(m.seed, &self.synth)).collect()
    }
}
