//! End-to-end enhancement: resample → STFT → stage 1 → (Y, Z) → generator →
//! iSTFT → resample back, offline and streaming.
//!
//! # Timeline and latency contract
//!
//! Everything runs on one wall-clock frame grid. Input frame `w` is complete
//! once `(w + 1) · hop` samples have arrived. With lookahead `L`, the models
//! emit enhanced frame `z(w − L)` at row `w`, so overlap-add places row `w`
//! at frame index `w − L`. Output stays **index-aligned with the input**:
//! output sample `j` is the enhanced version of input sample `j`. The
//! latency shows up as lag, not shift — sample `j` becomes available only
//! once `j + win_len + L·hop` input samples have been consumed, and the
//! stream emits exactly `max(0, consumed − latency_samples)` cumulative
//! samples, the tightest constant lag the frame arithmetic admits.
//!
//! [`Stream::flush`] pushes `latency_samples` zeros through the same path,
//! so total output length equals total input length and
//! [`Pipeline::enhance_offline`] is literally one big push plus a flush.
//! Partition invariance is therefore structural: any chunking of the input
//! runs through the identical per-frame computation, and the recurrent
//! chunk states are bitwise chunk-size-invariant by the model contracts.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, resample, FrameTransform, StftConfig};
use crate::error::{Error, Result};
use crate::models::{DelayLine, Generator, GeneratorConfig, GeneratorState, Stage1Config, Stage1Net, Stage1State};
use crate::nn::{Tape, Tensor, Var};

/// Which stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Stage 1 then generator (the full system).
    TwoStage,
    /// Predictive stage only; output is the intermediate `z`.
    Stage1Only,
    /// Generator only, conditioned on the noisy input in both channels.
    GeneratorOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TwoStage => "two_stage",
            Mode::Stage1Only => "stage1_only",
            Mode::GeneratorOnly => "generator_only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_stage" => Ok(Mode::TwoStage),
            "stage1_only" => Ok(Mode::Stage1Only),
            "generator_only" => Ok(Mode::GeneratorOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?}; expected two_stage, stage1_only, or generator_only"
            ))),
        }
    }
}

/// Static description of a pipeline: geometry, model shapes, and mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub stage1: Stage1Config,
    pub generator: GeneratorConfig,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            stage1: Stage1Config::default(),
            generator: GeneratorConfig::default(),
            mode: Mode::TwoStage,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.stage1.validate()?;
        self.generator.validate()
    }
}

/// A runnable pipeline: configuration plus the model weights the mode needs.
#[derive(Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
    stage1: Option<Stage1Net>,
    generator: Option<Generator>,
}

impl Pipeline {
    /// Assemble from pre-built nets (e.g. loaded from checkpoints). The mode
    /// dictates which nets must be present; a stage-1 net must share the
    /// pipeline's STFT geometry.
    pub fn with_nets(
        cfg: PipelineConfig,
        stage1: Option<Stage1Net>,
        generator: Option<Generator>,
    ) -> Result<Self> {
        cfg.validate()?;
        let needs_s1 = matches!(cfg.mode, Mode::TwoStage | Mode::Stage1Only);
        let needs_gen = matches!(cfg.mode, Mode::TwoStage | Mode::GeneratorOnly);
        if needs_s1 && stage1.is_none() {
            return Err(Error::ConfigMismatch(format!(
                "mode {} requires stage-1 weights",
                cfg.mode.as_str()
            )));
        }
        if needs_gen && generator.is_none() {
            return Err(Error::ConfigMismatch(format!(
                "mode {} requires generator weights",
                cfg.mode.as_str()
            )));
        }
        if let Some(s1) = &stage1 {
            if !s1.stft.same_geometry(&cfg.stft)
                || s1.stft.lookahead_frames != cfg.stft.lookahead_frames
            {
                return Err(Error::ConfigMismatch(format!(
                    "stage-1 STFT {:?} does not match pipeline STFT {:?}",
                    s1.stft, cfg.stft
                )));
            }
        }
        if let Some(g) = &generator {
            g.validate_weights()?;
        }
        Ok(Self { cfg, stage1, generator })
    }

    /// Fresh pipeline with randomly initialized weights for the mode.
    pub fn init(cfg: PipelineConfig, seed: u64) -> Result<Self> {
        let needs_s1 = matches!(cfg.mode, Mode::TwoStage | Mode::Stage1Only);
        let needs_gen = matches!(cfg.mode, Mode::TwoStage | Mode::GeneratorOnly);
        let stage1 = if needs_s1 {
            Some(Stage1Net::init(cfg.stage1.clone(), cfg.stft.clone(), seed)?)
        } else {
            None
        };
        let generator = if needs_gen {
            Some(Generator::init(cfg.generator.clone(), seed.wrapping_add(1))?)
        } else {
            None
        };
        Self::with_nets(cfg, stage1, generator)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn stage1(&self) -> Option<&Stage1Net> {
        self.stage1.as_ref()
    }

    pub fn generator(&self) -> Option<&Generator> {
        self.generator.as_ref()
    }

    /// Algorithmic latency of this configuration in milliseconds.
    pub fn latency_ms(&self) -> f64 {
        dsp::algorithmic_latency_ms(&self.cfg.stft)
    }

    /// Algorithmic latency in samples at the internal rate.
    pub fn latency_samples(&self) -> usize {
        dsp::latency_samples(&self.cfg.stft)
    }

    pub fn stream(&self) -> Result<Stream<'_>> {
        Stream::new(self)
    }

    /// Enhance a whole recording. The signal is resampled to the internal
    /// rate, pushed through a stream in one chunk, flushed, and resampled
    /// back, so the output has the input's length and alignment.
    pub fn enhance_offline(&self, noisy: &[f64], rate: u32) -> Result<Vec<f64>> {
        let internal = self.cfg.stft.sample_rate;
        let x = if rate == internal {
            noisy.to_vec()
        } else {
            resample(noisy, rate, internal)?
        };
        let mut stream = self.stream()?;
        let mut out = stream.push(&x)?;
        out.extend(stream.flush()?);
        let mut back = if rate == internal {
            out
        } else {
            resample(&out, internal, rate)?
        };
        // Resampler length rounding can drift by one sample; pin the
        // contract exactly.
        back.resize(noisy.len(), 0.0);
        Ok(back)
    }
}

/// Wall-clock seconds spent in each section of a stream, accumulated across
/// pushes.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageSeconds {
    pub dsp: f64,
    pub stage1: f64,
    pub generator: f64,
}

/// Incremental enhancement state. See the module docs for the emission
/// contract. One stream per audio source; streams share the immutable
/// [`Pipeline`].
#[derive(Debug)]
pub struct Stream<'p> {
    pipe: &'p Pipeline,
    ft: FrameTransform,
    latency: usize,
    front: usize,
    /// Input samples not yet part of a complete frame (< hop).
    pending: Vec<f64>,
    /// Last `win − hop` framed samples; zeros initially (the front pad).
    win_tail: Vec<f64>,
    consumed: usize,
    emitted: usize,
    frames_done: usize,
    /// Overlap-add accumulator; index 0 is output sample `emitted`.
    ola: Vec<f64>,
    s1_state: Option<Stage1State>,
    gen_state: Option<GeneratorState>,
    ydel_re: Option<DelayLine>,
    ydel_im: Option<DelayLine>,
    timing: StageSeconds,
    closed: bool,
    poisoned: bool,
}

impl<'p> Stream<'p> {
    fn new(pipe: &'p Pipeline) -> Result<Self> {
        let stft = &pipe.cfg.stft;
        let bins = stft.bins();
        let look = stft.lookahead_frames;
        let gen_used = matches!(pipe.cfg.mode, Mode::TwoStage | Mode::GeneratorOnly);
        Ok(Self {
            pipe,
            ft: FrameTransform::new(stft)?,
            latency: dsp::latency_samples(stft),
            front: stft.front_pad(),
            pending: Vec::new(),
            win_tail: vec![0.0; stft.front_pad()],
            consumed: 0,
            emitted: 0,
            frames_done: 0,
            ola: Vec::new(),
            s1_state: pipe.stage1.as_ref().map(Stage1Net::state),
            gen_state: pipe.generator.as_ref().map(|g| g.state(bins)),
            ydel_re: gen_used.then(|| DelayLine::new(look, bins)),
            ydel_im: gen_used.then(|| DelayLine::new(look, bins)),
            timing: StageSeconds::default(),
            closed: false,
            poisoned: false,
        })
    }

    /// Drop all buffered audio and recurrent state, keeping the weights.
    pub fn reset(&mut self) {
        *self = Self::new(self.pipe).expect("config already validated");
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn timing(&self) -> StageSeconds {
        self.timing
    }

    /// Feed samples; returns every output sample the latency budget allows.
    pub fn push(&mut self, chunk: &[f64]) -> Result<Vec<f64>> {
        if self.poisoned {
            return Err(Error::StreamPoisoned);
        }
        if self.closed {
            return Err(Error::StreamClosed);
        }
        if chunk.iter().any(|x| !x.is_finite()) {
            self.poisoned = true;
            return Err(Error::NonFinite("stream input".into()));
        }
        self.ingest(chunk)
    }

    /// Drain the remaining latency with internal zero padding. Total output
    /// length equals total input length; a second flush returns nothing.
    pub fn flush(&mut self) -> Result<Vec<f64>> {
        if self.poisoned {
            return Err(Error::StreamPoisoned);
        }
        if self.closed {
            return Ok(Vec::new());
        }
        self.closed = true;
        let zeros = vec![0.0; self.latency];
        self.ingest(&zeros)
    }

    fn ingest(&mut self, samples: &[f64]) -> Result<Vec<f64>> {
        let hop = self.pipe.cfg.stft.hop;
        self.consumed += samples.len();

        let k = (self.pending.len() + samples.len()) / hop;
        if k > 0 {
            let take = k * hop - self.pending.len();
            let mut seg = Vec::with_capacity(self.front + k * hop);
            seg.extend_from_slice(&self.win_tail);
            seg.append(&mut self.pending);
            seg.extend_from_slice(&samples[..take]);
            self.pending.extend_from_slice(&samples[take..]);
            self.win_tail.clear();
            self.win_tail.extend_from_slice(&seg[seg.len() - self.front..]);

            let rows = self.forward_frames(&seg, k);
            self.overlap_add(&rows, k);
            self.frames_done += k;
        } else {
            self.pending.extend_from_slice(samples);
        }

        let target = self.consumed.saturating_sub(self.latency);
        let n_emit = target - self.emitted;
        debug_assert!(n_emit <= self.ola.len(), "emission outran synthesis");
        self.emitted = target;
        Ok(self.ola.drain(..n_emit).collect())
    }

    /// Run the models over `k` new frames framed out of `seg`; returns the
    /// enhanced spectra for wall-clock rows `frames_done .. frames_done + k`.
    fn forward_frames(&mut self, seg: &[f64], k: usize) -> Vec<Complex64> {
        let bins = self.pipe.cfg.stft.bins();

        let t0 = Instant::now();
        let spectra = self.ft.analyze_segment(seg);
        debug_assert_eq!(spectra.len(), k * bins);
        self.timing.dsp += t0.elapsed().as_secs_f64();

        let re: Vec<f64> = spectra.iter().map(|z| z.re).collect();
        let im: Vec<f64> = spectra.iter().map(|z| z.im).collect();
        let tape = Tape::new();
        let y_re = tape.input(Tensor::from_vec(re, &[k, bins]).expect("spectra"));
        let y_im = tape.input(Tensor::from_vec(im, &[k, bins]).expect("spectra"));

        let (x_re, x_im) = match self.pipe.cfg.mode {
            Mode::Stage1Only => {
                let out = self.run_stage1(&tape, y_re, y_im);
                (out.0, out.1)
            }
            Mode::TwoStage => {
                let (z_re, z_im) = self.run_stage1(&tape, y_re, y_im);
                self.run_generator(&tape, y_re, y_im, z_re, z_im)
            }
            Mode::GeneratorOnly => {
                let (yd_re, yd_im) = self.delay_noisy(&tape, y_re, y_im);
                self.run_generator_delayed(&tape, yd_re, yd_im, yd_re, yd_im)
            }
        };

        let t0 = Instant::now();
        let re_v = tape.value(x_re);
        let im_v = tape.value(x_im);
        let out = re_v
            .data()
            .iter()
            .zip(im_v.data())
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        self.timing.dsp += t0.elapsed().as_secs_f64();
        out
    }

    fn run_stage1(&mut self, tape: &Tape, y_re: Var, y_im: Var) -> (Var, Var) {
        let t0 = Instant::now();
        let net = self.pipe.stage1.as_ref().expect("mode guarantees stage-1");
        let bound = net.params.bind(tape);
        let state = self.s1_state.as_mut().expect("stage-1 state");
        let out = net.forward_chunk(tape, &bound, y_re, y_im, state);
        self.timing.stage1 += t0.elapsed().as_secs_f64();
        (out.z_re, out.z_im)
    }

    fn delay_noisy(&mut self, tape: &Tape, y_re: Var, y_im: Var) -> (Var, Var) {
        let dr = self.ydel_re.as_mut().expect("delay line");
        let di = self.ydel_im.as_mut().expect("delay line");
        (dr.apply(tape, y_re), di.apply(tape, y_im))
    }

    fn run_generator(&mut self, tape: &Tape, y_re: Var, y_im: Var, z_re: Var, z_im: Var) -> (Var, Var) {
        let (yd_re, yd_im) = self.delay_noisy(tape, y_re, y_im);
        self.run_generator_delayed(tape, yd_re, yd_im, z_re, z_im)
    }

    fn run_generator_delayed(
        &mut self,
        tape: &Tape,
        yd_re: Var,
        yd_im: Var,
        z_re: Var,
        z_im: Var,
    ) -> (Var, Var) {
        let t0 = Instant::now();
        let net = self.pipe.generator.as_ref().expect("mode guarantees generator");
        let bound = net.params.bind(tape);
        let state = self.gen_state.as_mut().expect("generator state");
        let out = net.forward_chunk(tape, &bound, yd_re, yd_im, z_re, z_im, state);
        self.timing.generator += t0.elapsed().as_secs_f64();
        out
    }

    /// Overlap-add rows `frames_done .. frames_done + k`. Row `w` holds
    /// enhanced frame `w − L`, whose window covers output samples
    /// `[(w−L)·hop − front, (w−L)·hop − front + win)`; rows `w < L` carry
    /// the zero frames before the signal and are skipped.
    fn overlap_add(&mut self, rows: &[Complex64], k: usize) {
        let t0 = Instant::now();
        let cfg = &self.pipe.cfg.stft;
        let bins = cfg.bins();
        let look = cfg.lookahead_frames;
        for (row_idx, w) in (self.frames_done..self.frames_done + k).enumerate() {
            if w < look {
                continue;
            }
            let kf = w - look;
            let time = self.ft.synthesize(&rows[row_idx * bins..(row_idx + 1) * bins]);
            let start = kf * cfg.hop;
            for (i, v) in time.into_iter().enumerate() {
                let Some(out_idx) = (start + i).checked_sub(self.front) else {
                    continue;
                };
                let off = out_idx - self.emitted;
                if off >= self.ola.len() {
                    self.ola.resize(off + 1, 0.0);
                }
                self.ola[off] += v;
            }
        }
        self.timing.dsp += t0.elapsed().as_secs_f64();
    }
}

/// Real-time factor measurement: wall-clock seconds per audio second, with
/// the per-stage split from the stream's internal timers.
#[derive(Debug, Clone)]
pub struct RtfReport {
    pub audio_seconds: f64,
    pub wall_seconds: f64,
    pub rtf: f64,
    pub stages: StageSeconds,
    pub output_samples: usize,
}

/// Deterministic uniform noise in [−0.5, 0.5] for benchmarking.
pub fn synthetic_input(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

/// Process `duration_s` of seeded synthetic audio in hop-sized chunks and
/// report throughput. Input generation is deterministic in `seed`; only the
/// wall-clock numbers vary between runs.
pub fn measure_rtf(pipe: &Pipeline, duration_s: f64, seed: u64) -> Result<RtfReport> {
    if !(duration_s >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "benchmark duration must be at least 1 s, got {duration_s}"
        )));
    }
    let rate = pipe.config().stft.sample_rate;
    let n = (duration_s * f64::from(rate)).round() as usize;
    let input = synthetic_input(seed, n);
    let hop = pipe.config().stft.hop;

    let mut stream = pipe.stream()?;
    let start = Instant::now();
    let mut produced = 0;
    for chunk in input.chunks(hop) {
        produced += stream.push(chunk)?.len();
    }
    produced += stream.flush()?.len();
    let wall = start.elapsed().as_secs_f64();

    let audio = n as f64 / f64::from(rate);
    Ok(RtfReport {
        audio_seconds: audio,
        wall_seconds: wall,
        rtf: wall / audio,
        stages: stream.timing(),
        output_samples: produced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;

    fn tiny_stft() -> StftConfig {
        StftConfig {
            fft_len: 32,
            win_len: 32,
            hop: 16,
            lookahead_frames: 1,
            sample_rate: 8000,
        }
    }

    fn tiny_stage1() -> Stage1Config {
        Stage1Config {
            erb_bands: 4,
            conv_channels: 2,
            gru_hidden: 3,
            df_order: 2,
            df_lookahead: 1,
            df_cutoff_hz: 2000.0,
            df_mix_dim: 2,
            force_gains: None,
            identity_df: false,
        }
    }

    fn tiny_generator() -> GeneratorConfig {
        GeneratorConfig {
            hidden: 4,
            blocks: 2,
            freq_kernel: 3,
            groups: 2,
            use_residual: true,
            copy_z: false,
        }
    }

    fn tiny_pipeline(mode: Mode) -> Pipeline {
        let cfg = PipelineConfig {
            stft: tiny_stft(),
            stage1: tiny_stage1(),
            generator: tiny_generator(),
            mode,
        };
        Pipeline::init(cfg, 11).unwrap()
    }

    fn bypass_pipeline() -> Pipeline {
        let cfg = PipelineConfig {
            stft: tiny_stft(),
            stage1: Stage1Config {
                force_gains: Some(1.0),
                identity_df: true,
                ..tiny_stage1()
            },
            generator: tiny_generator(),
            mode: Mode::Stage1Only,
        };
        Pipeline::init(cfg, 11).unwrap()
    }

    // [DERIVED] Streaming equals one-shot offline for adversarial chunk
    // partitions, bitwise: the models are chunk-size invariant and the
    // overlap-add path is shared.
    #[test]
    fn partition_invariance_is_bitwise_across_modes() {
        let hop = tiny_stft().hop;
        let n = 10 * hop + 7;
        let input = testutil::noise(&mut testutil::rng(31), n);
        for mode in [Mode::TwoStage, Mode::Stage1Only, Mode::GeneratorOnly] {
            let pipe = tiny_pipeline(mode);
            let mut reference = {
                let mut s = pipe.stream().unwrap();
                let mut out = s.push(&input).unwrap();
                out.extend(s.flush().unwrap());
                out
            };
            assert_eq!(reference.len(), n, "{mode:?} length");

            let partitions: Vec<Vec<usize>> = vec![
                vec![1; n],
                vec![0, 1, hop - 1, hop, 10 * hop + 7 - (1 + hop - 1 + hop)],
                {
                    let mut rng = testutil::rng(32);
                    let mut left = n;
                    let mut sizes = Vec::new();
                    while left > 0 {
                        let s = rng.random_range(0..=left.min(37));
                        sizes.push(s);
                        left -= s;
                    }
                    sizes
                },
            ];
            for sizes in partitions {
                assert_eq!(sizes.iter().sum::<usize>(), n);
                let mut s = pipe.stream().unwrap();
                let mut out = Vec::new();
                let mut cursor = 0;
                for size in sizes {
                    out.extend(s.push(&input[cursor..cursor + size]).unwrap());
                    cursor += size;
                }
                out.extend(s.flush().unwrap());
                assert_eq!(out.len(), n);
                for (i, (a, b)) in out.iter().zip(&reference).enumerate() {
                    assert!(a == b, "{mode:?} sample {i}: {a} vs {b}");
                }
                reference = out;
            }
        }
    }

    // [TRIVIAL: bypass] Unit gains and an identity filter reduce stage 1 to
    // a compensated delay, so the pipeline reproduces its input.
    #[test]
    fn bypass_stage1_reproduces_input() {
        let pipe = bypass_pipeline();
        let input = testutil::noise(&mut testutil::rng(33), 2000);
        let out = pipe.enhance_offline(&input, 8000).unwrap();
        assert_eq!(out.len(), input.len());
        let worst = out
            .iter()
            .zip(&input)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-4, "worst deviation {worst}");
    }

    // [TRIVIAL] Freshly initialized nets have zero biases, so silence maps
    // to exact silence through every mode.
    #[test]
    fn zero_input_gives_zero_output() {
        for mode in [Mode::TwoStage, Mode::Stage1Only, Mode::GeneratorOnly] {
            let pipe = tiny_pipeline(mode);
            let out = pipe.enhance_offline(&vec![0.0; 700], 8000).unwrap();
            assert!(out.iter().all(|&x| x == 0.0), "{mode:?} not silent");
        }
    }

    // The impulse probe: output is index-aligned with input, and each sample
    // becomes available exactly `win + L·hop` samples after it is pushed.
    #[test]
    fn impulse_probe_confirms_alignment_and_exact_lag() {
        let pipe = bypass_pipeline();
        let latency = pipe.latency_samples();
        assert_eq!(latency, 32 + 16);

        let m = 100usize;
        let total = 300usize;
        let mut stream = pipe.stream().unwrap();
        let mut out = Vec::new();
        for j in 0..total {
            let sample = if j == m { 1.0 } else { 0.0 };
            out.extend(stream.push(&[sample]).unwrap());
            assert_eq!(out.len(), (j + 1).saturating_sub(latency), "lag at {j}");
        }
        out.extend(stream.flush().unwrap());
        assert_eq!(out.len(), total);
        for (i, &v) in out.iter().enumerate() {
            if i == m {
                assert!((v - 1.0).abs() < 1e-9, "impulse at {i}: {v}");
            } else {
                assert!(v.abs() < 1e-9, "leakage at {i}: {v}");
            }
        }
    }

    // [DERIVED: hop arithmetic] Hop-sized pushes emit nothing during
    // warm-up, then exactly one hop per push.
    #[test]
    fn hop_chunks_emit_hop_after_warmup() {
        let pipe = tiny_pipeline(Mode::TwoStage);
        let hop = tiny_stft().hop;
        let latency = pipe.latency_samples();
        let mut stream = pipe.stream().unwrap();
        for push_no in 1..=12 {
            let got = stream.push(&vec![0.1; hop]).unwrap().len();
            let expect = (push_no * hop).saturating_sub(latency).min(hop);
            assert_eq!(got, expect, "push {push_no}");
        }
    }

    // [TRIVIAL] Empty pushes change nothing.
    #[test]
    fn empty_chunk_is_identity() {
        let pipe = tiny_pipeline(Mode::TwoStage);
        let input = testutil::noise(&mut testutil::rng(35), 170);
        let run = |with_empties: bool| {
            let mut s = pipe.stream().unwrap();
            let mut out = Vec::new();
            for (i, half) in input.chunks(35).enumerate() {
                if with_empties {
                    assert!(s.push(&[]).unwrap().is_empty(), "chunk {i}");
                }
                out.extend(s.push(half).unwrap());
            }
            out.extend(s.flush().unwrap());
            out
        };
        assert_eq!(run(false), run(true));
    }

    // [DERIVED: length bookkeeping] Total output length equals input length
    // for boundary lengths, and a second flush is empty.
    #[test]
    fn flush_preserves_length_and_is_idempotent() {
        let hop = tiny_stft().hop;
        for len in [0usize, 1, hop - 1, hop, 10 * hop + 7] {
            let pipe = tiny_pipeline(Mode::TwoStage);
            let mut s = pipe.stream().unwrap();
            let input = testutil::noise(&mut testutil::rng(36), len);
            let mut out = s.push(&input).unwrap();
            out.extend(s.flush().unwrap());
            assert_eq!(out.len(), len, "length {len}");
            assert!(s.flush().unwrap().is_empty(), "second flush at {len}");
            assert!(matches!(s.push(&[0.0]), Err(Error::StreamClosed)));
        }
    }

    // [DERIVED: mode consistency] A generator hard-wired to copy its Z
    // channel makes two_stage equal stage1_only bitwise.
    #[test]
    fn copy_z_generator_matches_stage1_only() {
        let base = PipelineConfig {
            stft: tiny_stft(),
            stage1: tiny_stage1(),
            generator: GeneratorConfig { copy_z: true, ..tiny_generator() },
            mode: Mode::TwoStage,
        };
        let two = Pipeline::init(base.clone(), 12).unwrap();
        let one = Pipeline::init(PipelineConfig { mode: Mode::Stage1Only, ..base }, 12).unwrap();
        let input = testutil::noise(&mut testutil::rng(37), 444);
        let a = two.enhance_offline(&input, 8000).unwrap();
        let b = one.enhance_offline(&input, 8000).unwrap();
        assert_eq!(a, b);
    }

    // Non-finite input errors and poisons the stream until reset.
    #[test]
    fn non_finite_input_poisons_until_reset() {
        let pipe = tiny_pipeline(Mode::TwoStage);
        let mut s = pipe.stream().unwrap();
        assert!(matches!(
            s.push(&[0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(s.push(&[0.0]), Err(Error::StreamPoisoned)));
        assert!(matches!(s.flush(), Err(Error::StreamPoisoned)));
        s.reset();
        let mut out = s.push(&vec![0.2; 200]).unwrap();
        out.extend(s.flush().unwrap());
        assert_eq!(out.len(), 200);
    }

    // Missing weights for the selected mode are rejected at assembly.
    #[test]
    fn mode_requires_matching_nets() {
        let cfg = PipelineConfig {
            stft: tiny_stft(),
            stage1: tiny_stage1(),
            generator: tiny_generator(),
            mode: Mode::TwoStage,
        };
        let s1 = Stage1Net::init(tiny_stage1(), tiny_stft(), 1).unwrap();
        let err = Pipeline::with_nets(cfg.clone(), Some(s1), None).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));
        let gen = Generator::init(tiny_generator(), 1).unwrap();
        let err = Pipeline::with_nets(cfg, None, Some(gen)).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));
    }

    // A stage-1 net built on a different grid cannot be mounted.
    #[test]
    fn mismatched_stage1_geometry_is_rejected() {
        let mut other = tiny_stft();
        other.hop = 8;
        let s1 = Stage1Net::init(tiny_stage1(), other, 1).unwrap();
        let gen = Generator::init(tiny_generator(), 1).unwrap();
        let cfg = PipelineConfig {
            stft: tiny_stft(),
            stage1: tiny_stage1(),
            generator: tiny_generator(),
            mode: Mode::TwoStage,
        };
        let err = Pipeline::with_nets(cfg, Some(s1), Some(gen)).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));
    }

    // [TRIVIAL: smoke + DERIVED: additivity] RTF reporting is positive with
    // a stage split, two_stage costs at least stage1_only on identical
    // input, and seeded input generation is reproducible.
    #[test]
    fn rtf_measurement_reports_stage_split() {
        let one = tiny_pipeline(Mode::Stage1Only);
        let two = tiny_pipeline(Mode::TwoStage);
        // Best of two runs each, so a scheduler hiccup cannot flip the
        // comparison: two_stage performs a strict superset of the work.
        let best = |pipe: &Pipeline| {
            let a = measure_rtf(pipe, 1.0, 5).unwrap();
            let b = measure_rtf(pipe, 1.0, 5).unwrap();
            if a.rtf <= b.rtf { a } else { b }
        };
        let r1 = best(&one);
        let r2 = best(&two);
        assert!(r1.rtf > 0.0 && r2.rtf > 0.0);
        assert_eq!(r1.output_samples, 8000);
        assert!(r1.stages.stage1 > 0.0);
        assert!(r1.stages.generator == 0.0);
        assert!(r2.stages.generator > 0.0);
        assert!(r2.rtf >= r1.rtf, "two-stage {} vs stage1-only {}", r2.rtf, r1.rtf);
        assert!(measure_rtf(&one, 0.5, 5).is_err());
        assert_eq!(synthetic_input(9, 64), synthetic_input(9, 64));
    }

    // Resampled offline processing preserves length at a foreign rate.
    #[test]
    fn offline_resamples_foreign_rates() {
        let pipe = tiny_pipeline(Mode::TwoStage);
        let input = testutil::noise(&mut testutil::rng(38), 1600);
        let out = pipe.enhance_offline(&input, 16000).unwrap();
        assert_eq!(out.len(), input.len());
        assert!(out.iter().all(|x| x.is_finite()));
    }
}
