//! Stage 2 generator: causal refinement of the stage-1 spectrum.
//!
//! Input is the pair (noisy frame, stage-1 frame) as four real channels
//! (re/im each). A 1x1 embed lifts them to `hidden` channels; each block then
//! applies a frequency conv (kernel `1 x freq_kernel`, same-padded in
//! frequency, pointwise in time), a diagonal SSM scanning time independently
//! at every frequency with shared parameters, and a grouped channel-mixing
//! linear; a 1x1 head projects back to re/im. Every path is pointwise or
//! strictly causal in time, so the generator adds no lookahead.
//!
//! Conv and mixing weights are weight-normalized (`w = g * v/||v||` per
//! output row); the SSM keeps its own parameterization.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SsmLayer, SsmVars};
use crate::error::{Error, Result};
use crate::nn::{
    check_nonzero_rows, init, weight_norm, BoundParams, ParamSet, Tape, Tensor, Var,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub freq_kernel: usize,
    pub groups: usize,
    pub use_residual: bool,
    /// Test hook: return the stage-1 channel unchanged.
    #[serde(default)]
    pub copy_z: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            blocks: 4,
            freq_kernel: 5,
            groups: 4,
            use_residual: true,
            copy_z: false,
        }
    }
}

impl GeneratorConfig {
    /// Full-size preset (~0.13M parameters).
    pub fn paper_size() -> Self {
        Self { hidden: 62, groups: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.blocks == 0 || self.groups == 0 {
            return Err(Error::InvalidConfig(
                "generator dims must be positive".into(),
            ));
        }
        if self.hidden % self.groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden {} not divisible by groups {}",
                self.hidden, self.groups
            )));
        }
        if self.freq_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "freq_kernel must be odd for symmetric padding, got {}",
                self.freq_kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParamSet,
    ssm: SsmLayer,
}

/// Carried state: one SSM hidden `[bins, hidden]` per block.
#[derive(Debug)]
pub struct GeneratorState {
    ssm_h: Vec<Tensor>,
}

impl Generator {
    pub fn init(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.hidden;
        let ssm = SsmLayer::new(c, c);
        let mut rng = crate::testutil::rng(seed);
        let rng = &mut rng;
        let mut p = ParamSet::new();
        insert_normed(&mut p, rng, "embed", &[c, 4, 1, 1], 4, c);
        for i in 0..cfg.blocks {
            insert_normed(
                &mut p,
                rng,
                &format!("blk{i}.fconv"),
                &[c, c, 1, cfg.freq_kernel],
                c * cfg.freq_kernel,
                c,
            );
            p.extend_prefixed(&format!("blk{i}.ssm"), ssm.init_params(rng));
            let per = c / cfg.groups;
            // Normalization rows follow the reshaped [hidden, per] layout, so
            // the gain vector has one entry per output channel.
            insert_normed(&mut p, rng, &format!("blk{i}.mix"), &[cfg.groups, per, per], per, c);
        }
        insert_normed(&mut p, rng, "head", &[2, c, 1, 1], c, 2);
        Ok(Self { cfg, params: p, ssm })
    }

    /// Closed form for the parameter total.
    pub fn param_count(&self) -> usize {
        let c = self.cfg.hidden;
        let per_block = (c * c * self.cfg.freq_kernel + 2 * c)
            + self.ssm.param_count()
            + (c * c / self.cfg.groups + 2 * c);
        (4 * c + 2 * c) + self.cfg.blocks * per_block + (2 * c + 2 + 2)
    }

    /// Reject weight-norm directions with an all-zero output row.
    pub fn validate_weights(&self) -> Result<()> {
        let c = self.cfg.hidden;
        for (name, v) in self.params.iter() {
            if !name.ends_with(".v") {
                continue;
            }
            let checked = if name.ends_with("mix.v") {
                v.reshaped(&[c, c / self.cfg.groups]).expect("mix layout")
            } else {
                v.clone()
            };
            check_nonzero_rows(&checked)?;
        }
        Ok(())
    }

    /// Fresh streaming state for spectra with `bins` frequency rows.
    pub fn state(&self, bins: usize) -> GeneratorState {
        GeneratorState {
            ssm_h: (0..self.cfg.blocks)
                .map(|_| Tensor::zeros(&[bins, self.cfg.hidden]))
                .collect(),
        }
    }

    /// Forward one chunk: noisy `y` and stage-1 `z` frames `[t, bins]`
    /// (frame-aligned pairs) to refined frames `[t, bins]`.
    pub fn forward_chunk(
        &self,
        tape: &Tape,
        bound: &BoundParams,
        y_re: Var,
        y_im: Var,
        z_re: Var,
        z_im: Var,
        state: &mut GeneratorState,
    ) -> (Var, Var) {
        if self.cfg.copy_z {
            return (z_re, z_im);
        }
        let t_len = tape.shape_of(y_re)[0];
        let bins = tape.shape_of(y_re)[1];
        let c = self.cfg.hidden;

        let bind_normed = |name: &str| {
            let v = bound.var(&format!("{name}.v"));
            let g = bound.var(&format!("{name}.g"));
            weight_norm(tape, v, g)
        };

        let stacked = tape.stack_new_axis(&[y_re, y_im, z_re, z_im]);
        let w_embed = bind_normed("embed");
        let mut x = tape.conv2d_causal(stacked, w_embed, bound.var("embed.b"), 1);

        for i in 0..self.cfg.blocks {
            // Frequency mixing.
            let w_f = bind_normed(&format!("blk{i}.fconv"));
            let fc = tape.conv2d_causal(x, w_f, bound.var(&format!("blk{i}.fconv.b")), 1);
            let a = tape.leaky_relu(fc, 0.2);
            x = if self.cfg.use_residual { tape.add(x, a) } else { a };

            // Temporal scan, every frequency in parallel as batch rows.
            let ssm_vars = self.ssm.bind(tape, bound, &format!("blk{i}.ssm."));
            let flat = tape.reshape(tape.permute_ctf_to_tfc(x), &[t_len, bins * c]);
            let scanned = self.scan_time(tape, &ssm_vars, flat, &mut state.ssm_h[i], bins);
            let s_out = if self.cfg.use_residual { tape.add(flat, scanned) } else { scanned };

            // Grouped channel mixing per (frame, bin) point.
            let rows = tape.reshape(s_out, &[t_len * bins, c]);
            let per = c / self.cfg.groups;
            let w_mix_flat = {
                let v = bound.var(&format!("blk{i}.mix.v"));
                let g = bound.var(&format!("blk{i}.mix.g"));
                let v2 = tape.reshape(v, &[c, per]);
                weight_norm(tape, v2, g)
            };
            let w_mix = tape.reshape(w_mix_flat, &[self.cfg.groups, per, per]);
            let m = tape.grouped_linear(rows, w_mix, bound.var(&format!("blk{i}.mix.b")));
            let mixed = if self.cfg.use_residual { tape.add(rows, m) } else { m };
            x = tape.permute_tfc_to_ctf(tape.reshape(mixed, &[t_len, bins, c]));
        }

        let w_head = bind_normed("head");
        let out = tape.conv2d_causal(x, w_head, bound.var("head.b"), 1);
        (tape.index_axis0(out, 0), tape.index_axis0(out, 1))
    }

    /// Step the shared SSM over `flat [t, bins * hidden]`, threading `h`.
    fn scan_time(
        &self,
        tape: &Tape,
        vars: &SsmVars,
        flat: Var,
        h_state: &mut Tensor,
        bins: usize,
    ) -> Var {
        let t_len = tape.shape_of(flat)[0];
        let c = self.cfg.hidden;
        let mut h = tape.input(h_state.clone());
        let mut rows = Vec::with_capacity(t_len);
        for k in 0..t_len {
            let xk = tape.reshape(tape.slice_rows(flat, k, k + 1), &[bins, c]);
            let (y, h_next) = self.ssm.step(tape, vars, xk, h);
            h = h_next;
            rows.push(tape.reshape(y, &[1, bins * c]));
        }
        *h_state = tape.value(h);
        tape.concat_rows(&rows)
    }
}

/// Weight-normed parameter triplet: direction `.v` (given shape), gain `.g`
/// (`norm_rows` row norms of `.v`, so the initial effective weight is `.v`
/// itself), bias `.b`. `norm_rows` is the row count of the layout the norm is
/// taken over, which for grouped weights differs from `shape[0]`.
fn insert_normed(
    p: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    norm_rows: usize,
) {
    let v = init::kaiming_uniform(rng, shape, fan_in);
    let numel: usize = shape.iter().product();
    assert!(numel % norm_rows == 0, "norm rows must divide {shape:?}");
    let cols = numel / norm_rows;
    let norms: Vec<f64> = v
        .data()
        .chunks(cols)
        .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    p.insert(format!("{name}.v"), v);
    p.insert(format!("{name}.g"), Tensor::from_vec(norms, &[norm_rows]).unwrap());
    // One bias per output unit, which equals the norm-row count in every
    // layout used here (conv c_out, grouped groups*per).
    p.insert(format!("{name}.b"), Tensor::zeros(&[norm_rows]));
}
