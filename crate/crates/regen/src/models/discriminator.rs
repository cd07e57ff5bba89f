//! Multi-scale waveform critic.
//!
//! Three identical strided causal conv stacks score the waveform at full,
//! half, and quarter rate (average-pooling by 2 between scales). Scores are
//! raw conv outputs — unbounded, as the hinge losses require. All weights
//! are weight-normalized.
//!
//! Stack per scale (kernel, stride): (15, 4) -> (9, 4) -> (9, 2) -> head
//! (3, 1), leaky_relu(0.2) between, channels 1 -> C -> 2C -> 2C -> 1.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    check_nonzero_rows, init, weight_norm, BoundParams, ParamSet, Tape, Tensor, Var,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub scales: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 8, scales: 3 }
    }
}

impl DiscriminatorConfig {
    /// Full-size preset (~1.15M parameters).
    pub fn paper_size() -> Self {
        Self { base_channels: 84, scales: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.scales == 0 {
            return Err(Error::InvalidConfig(
                "discriminator dims must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// (kernel, stride) per stack layer; channels 1 -> C -> 2C -> 2C -> 1.
const LAYERS: [(usize, usize); 4] = [(15, 4), (9, 4), (9, 2), (3, 1)];

/// Total stride of one stack.
const STRIDE_TOTAL: usize = 4 * 4 * 2;

pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn init(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::testutil::rng(seed);
        let rng = &mut rng;
        let mut p = ParamSet::new();
        for s in 0..cfg.scales {
            for (li, (c_in, c_out)) in Self::channel_plan(cfg.base_channels).into_iter().enumerate()
            {
                let k = LAYERS[li].0;
                insert_normed(&mut p, rng, &format!("s{s}.conv{li}"), &[c_out, c_in, k], c_in * k);
            }
        }
        Ok(Self { cfg, params: p })
    }

    fn channel_plan(c: usize) -> [(usize, usize); 4] {
        [(1, c), (c, 2 * c), (2 * c, 2 * c), (2 * c, 1)]
    }

    /// Closed form for the parameter total: per scale
    /// `15C + 2C + 18C^2 + 4C + 36C^2 + 4C + 6C + 2 = 54C^2 + 31C + 2`.
    pub fn param_count(&self) -> usize {
        let c = self.cfg.base_channels;
        self.cfg.scales * (54 * c * c + 31 * c + 2)
    }

    /// Shortest accepted input: every scale (down to rate / 2^(scales-1))
    /// must cover one full stride chain.
    pub fn min_input_len(&self) -> usize {
        (1 << (self.cfg.scales - 1)) * STRIDE_TOTAL
    }

    /// Reject weight-norm directions with an all-zero output row.
    pub fn validate_weights(&self) -> Result<()> {
        for (name, v) in self.params.iter() {
            if name.ends_with(".v") {
                check_nonzero_rows(v)?;
            }
        }
        Ok(())
    }

    /// Score a waveform `[1, len]`; one unbounded score row per scale.
    pub fn forward(&self, tape: &Tape, bound: &BoundParams, wave: Var) -> Result<Vec<Var>> {
        let len = tape.shape_of(wave)[1];
        if len < self.min_input_len() {
            return Err(Error::InputTooShort { needed: self.min_input_len(), got: len });
        }
        let mut scores = Vec::with_capacity(self.cfg.scales);
        let mut x_scale = wave;
        for s in 0..self.cfg.scales {
            if s > 0 {
                x_scale = tape.avg_pool1d(x_scale, 2);
            }
            let mut h = x_scale;
            for li in 0..LAYERS.len() {
                let v = bound.var(&format!("s{s}.conv{li}.v"));
                let g = bound.var(&format!("s{s}.conv{li}.g"));
                let w = weight_norm(tape, v, g);
                h = tape.conv1d_causal(h, w, bound.var(&format!("s{s}.conv{li}.b")), LAYERS[li].1);
                if li + 1 < LAYERS.len() {
                    h = tape.leaky_relu(h, 0.2);
                }
            }
            scores.push(h);
        }
        Ok(scores)
    }
}

fn insert_normed(
    p: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: &[usize; 3],
    fan_in: usize,
) {
    let v = init::kaiming_uniform(rng, shape, fan_in);
    let cols = shape[1] * shape[2];
    let norms: Vec<f64> = v
        .data()
        .chunks(cols)
        .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    p.insert(format!("{name}.v"), v);
    p.insert(format!("{name}.g"), Tensor::from_vec(norms, &[shape[0]]).unwrap());
    p.insert(format!("{name}.b"), Tensor::zeros(&[shape[0]]));
}
