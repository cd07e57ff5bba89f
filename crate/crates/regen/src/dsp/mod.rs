//! Deterministic signal-processing kernels.
//!
//! Analysis/synthesis transforms ([`stft`]/[`istft`]), sample-rate conversion
//! ([`resample`]), perceptual filterbanks ([`build_filterbank`]), WAV I/O and
//! latency accounting. Everything here is a pure function of its inputs and is
//! safe to call from any number of threads.

mod filterbank;
mod resample;
mod wav;

pub use filterbank::{apply_filterbank, build_filterbank, Filterbank, FilterbankKind};
pub use resample::{resample, SUPPORTED_RATES};
pub use wav::{read_wav, write_wav, WavData, WavSampleFormat};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Short-time Fourier transform geometry.
///
/// The analysis window is a periodic Hann window of `win_len` samples. With
/// `win_len = 2 * hop` the synthesis side reconstructs exactly (see
/// [`synthesis_window`]). `lookahead_frames` is the number of future STFT
/// frames the enhancement networks may consult; it enters the latency budget
/// but not the transform itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_len: usize,
    pub win_len: usize,
    pub hop: usize,
    pub lookahead_frames: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_len: 960,
            win_len: 960,
            hop: 480,
            lookahead_frames: 2,
            sample_rate: 48000,
        }
    }
}

impl StftConfig {
    pub fn new(fft_len: usize, hop: usize, sample_rate: u32) -> Self {
        Self {
            fft_len,
            win_len: fft_len,
            hop,
            lookahead_frames: 2,
            sample_rate,
        }
    }

    pub fn with_lookahead(mut self, frames: usize) -> Self {
        self.lookahead_frames = frames;
        self
    }

    /// Number of frequency bins of a one-sided spectrum: `fft_len / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Front padding prepended by [`stft`] so that frame `k` ends `hop`
    /// samples past input position `k * hop`.
    pub fn front_pad(&self) -> usize {
        self.win_len - self.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_len == 0 || self.hop == 0 {
            return Err(Error::InvalidConfig("fft_len and hop must be nonzero".into()));
        }
        if self.win_len != self.fft_len {
            return Err(Error::InvalidConfig(format!(
                "win_len {} must equal fft_len {}",
                self.win_len, self.fft_len
            )));
        }
        if self.hop >= self.win_len || self.win_len % self.hop != 0 {
            return Err(Error::InvalidConfig(format!(
                "hop {} must divide win_len {} and be smaller",
                self.hop, self.win_len
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be nonzero".into()));
        }
        Ok(())
    }

    /// True when geometry (not lookahead) matches.
    pub fn same_geometry(&self, other: &StftConfig) -> bool {
        self.fft_len == other.fft_len
            && self.win_len == other.win_len
            && self.hop == other.hop
            && self.sample_rate == other.sample_rate
    }

    /// Frame count produced by [`stft`] for a signal of `len` samples.
    pub fn frames_for_len(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            (len + self.front_pad()).div_ceil(self.hop)
        }
    }
}

/// Time-frequency matrix of complex values, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(n_frames: usize, config: StftConfig) -> Self {
        let n_bins = config.bins();
        Self {
            data: vec![Complex64::ZERO; n_frames * n_bins],
            n_frames,
            n_bins,
            config,
        }
    }

    /// Build from frame-major data. Bin count must match the config and all
    /// values must be finite.
    pub fn from_data(data: Vec<Complex64>, n_frames: usize, config: StftConfig) -> Result<Self> {
        let n_bins = config.bins();
        if data.len() != n_frames * n_bins {
            return Err(Error::ShapeMismatch {
                context: "ComplexSpectrogram::from_data".into(),
                expected: format!("{} values ({n_frames} frames x {n_bins} bins)", n_frames * n_bins),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("ComplexSpectrogram::from_data".into()));
        }
        Ok(Self {
            data,
            n_frames,
            n_bins,
            config,
        })
    }

    pub fn frames(&self) -> usize {
        self.n_frames
    }

    pub fn bins(&self) -> usize {
        self.n_bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn frame(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.n_bins..(k + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [Complex64] {
        &mut self.data[k * self.n_bins..(k + 1) * self.n_bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Per-frame magnitudes, frame-major.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window: `w[n] = 0.5 * (1 - cos(2*pi*n/len))`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Least-squares synthesis window for overlap-add.
///
/// `s[n] = w[n] / sum_m w[(n mod hop) + m*hop]^2`. Overlap-adding
/// `s[n] * w[n] * x[n]` over all frames reproduces `x[n]` exactly wherever
/// the full set of overlapping frames exists.
pub fn synthesis_window(window: &[f64], hop: usize) -> Vec<f64> {
    let mut denom = vec![0.0; hop];
    for (n, w) in window.iter().enumerate() {
        denom[n % hop] += w * w;
    }
    window
        .iter()
        .enumerate()
        .map(|(n, w)| w / denom[n % hop])
        .collect()
}

/// Forward STFT.
///
/// The signal is zero-padded with `win_len - hop` samples at the front so the
/// transform is causal: frame `k` covers input samples
/// `[k*hop - front_pad, k*hop + hop)`, i.e. it is complete once `(k+1)*hop`
/// input samples have arrived. The tail is zero-padded to fill the last frame.
/// An empty signal yields an empty spectrogram.
pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stft input".into()));
    }
    let n_frames = cfg.frames_for_len(signal.len());
    if n_frames == 0 {
        return Ok(ComplexSpectrogram::zeros(0, cfg.clone()));
    }

    let n = cfg.fft_len;
    let bins = cfg.bins();
    let window = hann_window(n);
    let front = cfg.front_pad();

    let mut padded = vec![0.0; (n_frames - 1) * cfg.hop + n];
    padded[front..front + signal.len()].copy_from_slice(signal);

    let fft = rustfft::FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::ZERO; n];
    let mut data = Vec::with_capacity(n_frames * bins);
    for k in 0..n_frames {
        let seg = &padded[k * cfg.hop..k * cfg.hop + n];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        data,
        n_frames,
        n_bins: bins,
        config: cfg.clone(),
    })
}

/// Inverse STFT via synthesis-window overlap-add.
///
/// Returns `(frames + 1) * hop - win_len` samples, exactly the region where
/// [`stft`]'s front padding guarantees full overlap coverage; on that region
/// `istft(stft(x))` reproduces `x` to floating-point roundoff.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !spec.config.same_geometry(cfg) {
        return Err(Error::ConfigMismatch(format!(
            "spectrogram geometry {:?}/{:?}/{:?}@{} does not match {:?}/{:?}/{:?}@{}",
            spec.config.fft_len,
            spec.config.win_len,
            spec.config.hop,
            spec.config.sample_rate,
            cfg.fft_len,
            cfg.win_len,
            cfg.hop,
            cfg.sample_rate
        )));
    }
    let n_frames = spec.frames();
    let n = cfg.fft_len;
    let bins = cfg.bins();
    let out_len = ((n_frames + 1) * cfg.hop).saturating_sub(n);
    if n_frames == 0 || out_len == 0 {
        return Ok(vec![0.0; out_len]);
    }

    let window = hann_window(n);
    let syn = synthesis_window(&window, cfg.hop);
    let ifft = rustfft::FftPlanner::new().plan_fft_inverse(n);
    let scale = 1.0 / n as f64;

    let mut acc = vec![0.0; (n_frames - 1) * cfg.hop + n];
    let mut buf = vec![Complex64::ZERO; n];
    for k in 0..n_frames {
        let frame = spec.frame(k);
        buf[..bins].copy_from_slice(frame);
        for f in bins..n {
            buf[f] = frame[n - f].conj();
        }
        ifft.process(&mut buf);
        let base = k * cfg.hop;
        for (i, (&s, b)) in syn.iter().zip(&buf).enumerate() {
            acc[base + i] += s * b.re * scale;
        }
    }
    let front = cfg.front_pad();
    Ok(acc[front..front + out_len].to_vec())
}

/// Minimum input-to-output delay implied by windowing and look-ahead,
/// in milliseconds: `1000 * (win_len + lookahead_frames * hop) / sample_rate`.
///
/// Computed in exact integer arithmetic and reduced before the final
/// division, so configurations that divide evenly (the 960/480/2 default
/// gives 40 ms) come out exact.
pub fn algorithmic_latency_ms(cfg: &StftConfig) -> f64 {
    let num = 1000 * (cfg.win_len as u64 + cfg.lookahead_frames as u64 * cfg.hop as u64);
    let den = cfg.sample_rate as u64;
    let g = gcd(num, den);
    (num / g) as f64 / (den / g) as f64
}

/// Latency in whole samples at the configured rate: `win_len + lookahead * hop`.
pub fn latency_samples(cfg: &StftConfig) -> usize {
    cfg.win_len + cfg.lookahead_frames * cfg.hop
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

/// Frame-at-a-time analysis and synthesis sharing [`stft`]/[`istft`]'s
/// window, FFT algorithm, and scaling, with plans built once for streaming
/// use.
///
/// [`FrameTransform::analyze_segment`] transforms every complete window
/// inside a raw segment with no padding of its own, so a caller that
/// prepends the previous `win_len - hop` samples (zeros initially, matching
/// [`stft`]'s front pad) reproduces [`stft`]'s rows bitwise.
/// [`FrameTransform::synthesize`] returns one synthesis-windowed frame ready
/// for overlap-add at `frame_index * hop` on the padded timeline, again
/// bitwise-matching [`istft`]'s per-frame contributions.
pub struct FrameTransform {
    cfg: StftConfig,
    window: Vec<f64>,
    syn: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl std::fmt::Debug for FrameTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameTransform").field("cfg", &self.cfg).finish()
    }
}

impl FrameTransform {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        let window = hann_window(cfg.fft_len);
        let syn = synthesis_window(&window, cfg.hop);
        let mut planner = rustfft::FftPlanner::new();
        Ok(Self {
            fft: planner.plan_fft_forward(cfg.fft_len),
            ifft: planner.plan_fft_inverse(cfg.fft_len),
            cfg: cfg.clone(),
            window,
            syn,
        })
    }

    /// Number of complete windows at offsets `0, hop, 2*hop, ...` in a
    /// segment of `len` samples.
    pub fn frames_in(&self, len: usize) -> usize {
        if len < self.cfg.win_len {
            0
        } else {
            (len - self.cfg.win_len) / self.cfg.hop + 1
        }
    }

    /// Spectra of the complete windows, flat `frames * bins` layout matching
    /// [`ComplexSpectrogram::data`].
    pub fn analyze_segment(&self, segment: &[f64]) -> Vec<Complex64> {
        let n = self.cfg.fft_len;
        let bins = self.cfg.bins();
        let frames = self.frames_in(segment.len());
        let mut buf = vec![Complex64::ZERO; n];
        let mut data = Vec::with_capacity(frames * bins);
        for k in 0..frames {
            let seg = &segment[k * self.cfg.hop..k * self.cfg.hop + n];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new(s * w, 0.0);
            }
            self.fft.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        data
    }

    /// One frame of `bins` spectrum values back to `win_len`
    /// synthesis-windowed time samples.
    pub fn synthesize(&self, frame: &[Complex64]) -> Vec<f64> {
        let n = self.cfg.fft_len;
        let bins = self.cfg.bins();
        assert_eq!(frame.len(), bins, "synthesize: bin count");
        let mut buf = vec![Complex64::ZERO; n];
        buf[..bins].copy_from_slice(frame);
        for f in bins..n {
            buf[f] = frame[n - f].conj();
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / n as f64;
        self.syn.iter().zip(&buf).map(|(&s, b)| s * b.re * scale).collect()
    }
}
