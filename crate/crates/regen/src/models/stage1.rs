//! Stage 1: predictive envelope gains plus low-band deep filtering.
//!
//! Per STFT frame the net emits (a) one gain in `[0, 1]` per perceptual band,
//! expanded to per-bin gains through the filterbank transpose and multiplied
//! onto the noisy spectrum, and (b) complex FIR coefficients for the lowest
//! `df_bins` bins, applied across `df_order` frames with `df_lookahead`
//! frames of lookahead.
//!
//! # Timeline convention
//!
//! All chunk tensors are indexed by *wall-clock* frame `w` (frames consumed
//! so far). Because tap `i` of the filter reads spectrum frame
//! `k - i + lookahead`, enhanced frame `k` is only computable once frame
//! `k + lookahead` has been consumed; the forward therefore emits enhanced
//! frame `z(w - lookahead)` at row `w` (zeros for `w < lookahead`). In this
//! delayed coordinate the filter is a strictly causal FIR —
//! `row w = sum_i C(w - lookahead, i) * G(w - i)` — which is what makes
//! chunked streaming exact. Bins at and above `df_bins` pass the gain-scaled
//! spectrum through bit-identically (delayed the same `lookahead` frames to
//! stay frame-aligned).

use serde::{Deserialize, Serialize};

use super::{ConvTimeState, DelayLine, GruCell};
use crate::dsp::{build_filterbank, FilterbankKind, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{init, BoundParams, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Config {
    pub erb_bands: usize,
    pub conv_channels: usize,
    pub gru_hidden: usize,
    pub df_order: usize,
    pub df_lookahead: usize,
    pub df_cutoff_hz: f64,
    /// Per-tap trunk width feeding the grouped coefficient head.
    pub df_mix_dim: usize,
    /// Test hook: bypass the gain head with a constant per-bin gain.
    #[serde(default)]
    pub force_gains: Option<f64>,
    /// Test hook: bypass the deep filter, passing the (delayed) gain-scaled
    /// spectrum through on all bins.
    #[serde(default)]
    pub identity_df: bool,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            erb_bands: 32,
            conv_channels: 16,
            gru_hidden: 48,
            df_order: 5,
            df_lookahead: 2,
            df_cutoff_hz: 5000.0,
            df_mix_dim: 24,
            force_gains: None,
            identity_df: false,
        }
    }
}

impl Stage1Config {
    /// Full-size preset (~2.3M parameters at the default STFT geometry).
    pub fn paper_size() -> Self {
        Self {
            conv_channels: 64,
            gru_hidden: 330,
            df_mix_dim: 80,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("erb_bands", self.erb_bands),
            ("conv_channels", self.conv_channels),
            ("gru_hidden", self.gru_hidden),
            ("df_order", self.df_order),
            ("df_mix_dim", self.df_mix_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{what} must be positive")));
            }
        }
        if !(self.df_cutoff_hz.is_finite() && self.df_cutoff_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "df_cutoff_hz must be positive, got {}",
                self.df_cutoff_hz
            )));
        }
        Ok(())
    }
}

/// Bins strictly below the cutoff: count of `f` with `f * rate / fft < cutoff`.
fn df_bin_count(cutoff_hz: f64, stft: &StftConfig) -> usize {
    let exact = cutoff_hz * stft.fft_len as f64 / stft.sample_rate as f64;
    (exact.ceil() as usize).clamp(1, stft.bins())
}

#[derive(Debug)]
pub struct Stage1Net {
    pub cfg: Stage1Config,
    pub stft: StftConfig,
    pub params: ParamSet,
    pub df_bins: usize,
    /// `[erb_bands, bins]` analysis weights.
    erb_matrix: Tensor,
    /// `[bins, erb_bands]` transpose, for gain expansion.
    expand_matrix: Tensor,
    gru: GruCell,
}

/// One chunk of stage-1 outputs; all rows are wall-clock indexed (see module
/// docs): `z` row `w` holds enhanced frame `w - lookahead`, every other
/// tensor's row `w` belongs to input frame `w`.
pub struct Stage1Out {
    pub z_re: Var,
    pub z_im: Var,
    /// Per-bin gains `[t, bins]`.
    pub gains: Var,
    /// Filter coefficients `[t, df_order * 2 * df_bins]`, taps outermost,
    /// re before im within a tap.
    pub coeffs: Var,
    /// Gain-scaled spectrum `[t, bins]` (the deep-filter stage input).
    pub g_re: Var,
    pub g_im: Var,
}

/// Carried state for chunked evaluation.
#[derive(Debug)]
pub struct Stage1State {
    conv0: ConvTimeState,
    conv1: ConvTimeState,
    dfconv: ConvTimeState,
    gru_h: Tensor,
    c_delay: DelayLine,
    g_hist_re: DelayLine,
    g_hist_im: DelayLine,
    g_delay_re: DelayLine,
    g_delay_im: DelayLine,
}

const KT: usize = 2;
const KF: usize = 3;

impl Stage1Net {
    pub fn init(cfg: Stage1Config, stft: StftConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        stft.validate()?;
        if cfg.df_lookahead != stft.lookahead_frames {
            return Err(Error::ConfigMismatch(format!(
                "stage-1 lookahead {} != stft lookahead_frames {}",
                cfg.df_lookahead, stft.lookahead_frames
            )));
        }
        let fb = build_filterbank(FilterbankKind::Erb, cfg.erb_bands, &stft)?;
        let bins = stft.bins();
        let df_bins = df_bin_count(cfg.df_cutoff_hz, &stft);
        let erb_matrix = Tensor::from_vec(fb.matrix.clone(), &[cfg.erb_bands, bins]).unwrap();
        let mut expand = vec![0.0; bins * cfg.erb_bands];
        for b in 0..cfg.erb_bands {
            for f in 0..bins {
                expand[f * cfg.erb_bands + b] = fb.matrix[b * bins + f];
            }
        }
        let expand_matrix = Tensor::from_vec(expand, &[bins, cfg.erb_bands]).unwrap();

        let (c, h) = (cfg.conv_channels, cfg.gru_hidden);
        let erb_flat = c * cfg.erb_bands.div_ceil(2);
        let df_flat = c * df_bins.div_ceil(2);
        let trunk_dim = cfg.df_order * cfg.df_mix_dim;
        let coeff_dim = 2 * df_bins;
        let gru = GruCell::new(h, h);

        let mut rng = crate::testutil::rng(seed);
        let rng = &mut rng;
        let mut p = ParamSet::new();
        p.insert("enc.conv0.w", init::kaiming_uniform(rng, &[c, 1, KT, KF], KT * KF));
        p.insert("enc.conv0.b", Tensor::zeros(&[c]));
        p.insert("enc.conv1.w", init::kaiming_uniform(rng, &[c, c, KT, KF], c * KT * KF));
        p.insert("enc.conv1.b", Tensor::zeros(&[c]));
        p.insert("enc.dfconv.w", init::kaiming_uniform(rng, &[c, 2, KT, KF], 2 * KT * KF));
        p.insert("enc.dfconv.b", Tensor::zeros(&[c]));
        p.insert("enc.fc_erb.w", init::kaiming_uniform(rng, &[h, erb_flat], erb_flat));
        p.insert("enc.fc_erb.b", Tensor::zeros(&[h]));
        p.insert("enc.fc_df.w", init::kaiming_uniform(rng, &[h, df_flat], df_flat));
        p.insert("enc.fc_df.b", Tensor::zeros(&[h]));
        p.extend_prefixed("gru", gru.init_params(rng));
        p.insert("dec.gain.w", init::kaiming_uniform(rng, &[cfg.erb_bands, h], h));
        p.insert("dec.gain.b", Tensor::zeros(&[cfg.erb_bands]));
        p.insert("dec.df_trunk.w", init::kaiming_uniform(rng, &[trunk_dim, h], h));
        p.insert("dec.df_trunk.b", Tensor::zeros(&[trunk_dim]));
        p.insert(
            "dec.df_out.w",
            init::kaiming_uniform(rng, &[cfg.df_order, coeff_dim, cfg.df_mix_dim], cfg.df_mix_dim),
        );
        p.insert("dec.df_out.b", Tensor::zeros(&[cfg.df_order * coeff_dim]));

        Ok(Self { cfg, stft, params: p, df_bins, erb_matrix, expand_matrix, gru })
    }

    /// Closed form for the parameter total.
    pub fn param_count(&self) -> usize {
        let (c, h, b) = (self.cfg.conv_channels, self.cfg.gru_hidden, self.cfg.erb_bands);
        let erb_flat = c * b.div_ceil(2);
        let df_flat = c * self.df_bins.div_ceil(2);
        let trunk = self.cfg.df_order * self.cfg.df_mix_dim;
        let coeff = self.cfg.df_order * 2 * self.df_bins;
        (c * KT * KF + c)
            + (c * c * KT * KF + c)
            + (c * 2 * KT * KF + c)
            + (h * erb_flat + h)
            + (h * df_flat + h)
            + self.gru.param_count()
            + (b * h + b)
            + (trunk * h + trunk)
            + (coeff * self.cfg.df_mix_dim + coeff)
    }

    /// Fresh streaming state (all histories zero ≡ signal silent before t=0).
    pub fn state(&self) -> Stage1State {
        let bins = self.stft.bins();
        let (c, df) = (self.cfg.conv_channels, self.df_bins);
        let coeff_cols = self.cfg.df_order * 2 * df;
        Stage1State {
            conv0: ConvTimeState::new(1, KT, self.cfg.erb_bands),
            conv1: ConvTimeState::new(c, KT, self.cfg.erb_bands),
            dfconv: ConvTimeState::new(2, KT, df),
            gru_h: Tensor::zeros(&[1, self.cfg.gru_hidden]),
            c_delay: DelayLine::new(self.cfg.df_lookahead, coeff_cols),
            g_hist_re: DelayLine::new(self.cfg.df_order - 1, df),
            g_hist_im: DelayLine::new(self.cfg.df_order - 1, df),
            g_delay_re: DelayLine::new(self.cfg.df_lookahead, bins),
            g_delay_im: DelayLine::new(self.cfg.df_lookahead, bins),
        }
    }

    /// Forward one chunk of noisy STFT frames `s_re/s_im [t, bins]`.
    pub fn forward_chunk(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        s_re: Var,
        s_im: Var,
        state: &mut Stage1State,
    ) -> Stage1Out {
        let t_len = tape.shape_of(s_re)[0];
        let bins = self.stft.bins();
        let df = self.df_bins;
        let order = self.cfg.df_order;

        // Band-energy features, power-compressed (x^0.15 on energies).
        let mag2 = tape.add(tape.mul(s_re, s_re), tape.mul(s_im, s_im));
        let erb_energy = tape.apply_const_matrix(mag2, &self.erb_matrix);
        let feats = tape.exp(tape.scale(tape.log(tape.add_const(erb_energy, 1e-10)), 0.15));

        // ERB conv stack.
        let x0 = tape.reshape(feats, &[1, t_len, self.cfg.erb_bands]);
        let (x0e, trim0) = state.conv0.extend(tape, x0);
        let c0 = tape.relu(tape.conv2d_causal(
            x0e,
            bound.var("enc.conv0.w"),
            bound.var("enc.conv0.b"),
            1,
        ));
        let c0 = tape.slice_time(c0, trim0, trim0 + t_len);
        let (c0e, trim1) = state.conv1.extend(tape, c0);
        let c1 = tape.relu(tape.conv2d_causal(
            c0e,
            bound.var("enc.conv1.w"),
            bound.var("enc.conv1.b"),
            2,
        ));
        let c1 = tape.slice_time(c1, trim1, trim1 + t_len);
        let erb_w = self.cfg.erb_bands.div_ceil(2);
        let erb_flat = tape.reshape(
            tape.permute_ctf_to_tfc(c1),
            &[t_len, erb_w * self.cfg.conv_channels],
        );

        // Complex low-band conv stack.
        let re_lo = tape.slice_cols(s_re, 0, df);
        let im_lo = tape.slice_cols(s_im, 0, df);
        let xdf = tape.stack_new_axis(&[re_lo, im_lo]);
        let (xdfe, trimd) = state.dfconv.extend(tape, xdf);
        let cdf = tape.relu(tape.conv2d_causal(
            xdfe,
            bound.var("enc.dfconv.w"),
            bound.var("enc.dfconv.b"),
            2,
        ));
        let cdf = tape.slice_time(cdf, trimd, trimd + t_len);
        let df_w = df.div_ceil(2);
        let df_flat =
            tape.reshape(tape.permute_ctf_to_tfc(cdf), &[t_len, df_w * self.cfg.conv_channels]);

        // Shared temporal trunk.
        let enc = tape.relu(tape.add(
            tape.linear(erb_flat, bound.var("enc.fc_erb.w"), bound.var("enc.fc_erb.b")),
            tape.linear(df_flat, bound.var("enc.fc_df.w"), bound.var("enc.fc_df.b")),
        ));
        let gru_vars = self.gru.bind(bound, "gru.");
        let h0 = tape.input(state.gru_h.clone());
        let (hs, h_last) = self.gru.forward_seq(tape, &gru_vars, enc, h0);
        state.gru_h = tape.value(h_last);

        // Gain head.
        let band_gains =
            tape.sigmoid(tape.linear(hs, bound.var("dec.gain.w"), bound.var("dec.gain.b")));
        let gains = match self.cfg.force_gains {
            Some(v) => tape.input(Tensor::full(&[t_len, bins], v)),
            None => tape.apply_const_matrix(band_gains, &self.expand_matrix),
        };
        let g_re = tape.mul(s_re, gains);
        let g_im = tape.mul(s_im, gains);

        // Coefficient head.
        let trunk = tape.relu(tape.linear(
            hs,
            bound.var("dec.df_trunk.w"),
            bound.var("dec.df_trunk.b"),
        ));
        let coeffs =
            tape.grouped_linear(trunk, bound.var("dec.df_out.w"), bound.var("dec.df_out.b"));

        // Frame-aligned passthrough: G delayed by the lookahead.
        let g_del_re = state.g_delay_re.apply(tape, g_re);
        let g_del_im = state.g_delay_im.apply(tape, g_im);

        let (z_re, z_im) = if self.cfg.identity_df {
            (g_del_re, g_del_im)
        } else {
            // Strictly causal form of the filter (module docs): row w of the
            // output is sum_i C(w - look, i) * G(w - i).
            let c_del = state.c_delay.apply(tape, coeffs);
            let gl_re = tape.slice_cols(g_re, 0, df);
            let gl_im = tape.slice_cols(g_im, 0, df);
            let hist = order - 1;
            let (ext_re, ext_im) = if hist == 0 {
                (gl_re, gl_im)
            } else {
                (state.g_hist_re.extend(tape, gl_re), state.g_hist_im.extend(tape, gl_im))
            };
            let mut acc_re: Option<Var> = None;
            let mut acc_im: Option<Var> = None;
            for i in 0..order {
                let cr = tape.slice_cols(c_del, i * 2 * df, i * 2 * df + df);
                let ci = tape.slice_cols(c_del, i * 2 * df + df, (i + 1) * 2 * df);
                let gr = tape.slice_rows(ext_re, hist - i, hist - i + t_len);
                let gi = tape.slice_rows(ext_im, hist - i, hist - i + t_len);
                let tap_re = tape.sub(tape.mul(cr, gr), tape.mul(ci, gi));
                let tap_im = tape.add(tape.mul(cr, gi), tape.mul(ci, gr));
                acc_re = Some(match acc_re {
                    Some(a) => tape.add(a, tap_re),
                    None => tap_re,
                });
                acc_im = Some(match acc_im {
                    Some(a) => tape.add(a, tap_im),
                    None => tap_im,
                });
            }
            let z_lo_re = acc_re.unwrap();
            let z_lo_im = acc_im.unwrap();
            if df < bins {
                (
                    tape.concat_cols(&[z_lo_re, tape.slice_cols(g_del_re, df, bins)]),
                    tape.concat_cols(&[z_lo_im, tape.slice_cols(g_del_im, df, bins)]),
                )
            } else {
                (z_lo_re, z_lo_im)
            }
        };

        Stage1Out { z_re, z_im, gains, coeffs, g_re, g_im }
    }
}

/// Reference deep filter in frame coordinates:
/// `z(k, f) = sum_i coeffs(k, i, f) * y(k - i + lookahead, f)`, `k` over
/// coefficient rows, out-of-range `y` rows reading as zero. The spectrum must
/// extend `lookahead` frames past the coefficients.
pub fn deep_filter_offline(
    tape: &Tape,
    coeffs: Var,
    y_re: Var,
    y_im: Var,
    order: usize,
    lookahead: usize,
) -> Result<(Var, Var)> {
    let tc = tape.shape_of(coeffs)[0];
    let ty = tape.shape_of(y_re)[0];
    let n = tape.shape_of(y_re)[1];
    if ty < tc + lookahead {
        return Err(Error::InsufficientHistory { needed: tc + lookahead, got: ty });
    }
    assert_eq!(tape.shape_of(coeffs)[1], order * 2 * n, "coefficient layout");
    let mut acc_re: Option<Var> = None;
    let mut acc_im: Option<Var> = None;
    for i in 0..order {
        let cr = tape.slice_cols(coeffs, i * 2 * n, i * 2 * n + n);
        let ci = tape.slice_cols(coeffs, i * 2 * n + n, (i + 1) * 2 * n);
        let off = lookahead as isize - i as isize;
        let yr = tape.slice_rows(tape.shift_rows(y_re, off), 0, tc);
        let yi = tape.slice_rows(tape.shift_rows(y_im, off), 0, tc);
        let tap_re = tape.sub(tape.mul(cr, yr), tape.mul(ci, yi));
        let tap_im = tape.add(tape.mul(cr, yi), tape.mul(ci, yr));
        acc_re = Some(match acc_re {
            Some(a) => tape.add(a, tap_re),
            None => tap_re,
        });
        acc_im = Some(match acc_im {
            Some(a) => tape.add(a, tap_im),
            None => tap_im,
        });
    }
    Ok((acc_re.unwrap(), acc_im.unwrap()))
}
