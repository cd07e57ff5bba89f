//! Two-step training at desk scale: stage-1 pretraining on the composite
//! regression loss, then adversarial training of the generator against the
//! multi-scale critic with stage 1 frozen bitwise.
//!
//! Everything is reproducible from a single seed — dataset synthesis,
//! per-epoch subset selection, crops, noise draws, and both optimizers — and
//! the JSON-lines training logs contain no wall-clock fields, so two runs
//! with the same seed produce byte-identical logs.

mod forward;
mod loops;
mod schedule;
mod synth;

pub mod ckpt;

pub use forward::{
    forward_latency, run_frozen_stage1, stage1_training_forward, stage2_training_forward,
    FrozenStage1,
};
pub use loops::{train_stage1, train_stage2, Stage1Summary, Stage2Summary};
pub use schedule::Schedule;
pub use synth::{
    speech_like_clean, synth_dataset, synth_item, DatasetItem, Distortion, DistortionKind,
    Manifest, ManifestItem, SynthConfig, ALL_KINDS, WIND_BAND_HZ,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knobs for both stages. The `Default` carries full-scale values; [`TrainConfig::toy`]
/// is the desk-scale variant the tests run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    /// Training crop length in seconds; longer items are randomly cropped.
    pub crop_s: f64,
    /// Per-epoch subset size; the full dataset is used when smaller.
    pub samples_per_epoch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub wd_min: f64,
    pub wd_max: f64,
    /// The discriminator steps on iterations `0, p, 2p, ...` (0-based).
    pub disc_update_period: usize,
    /// Weight of the time-domain L1 term in the generator objective.
    pub beta: f64,
    /// Global-norm gradient clip, per network.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_stage1: 45,
            epochs_stage2: 200,
            batch_size: 64,
            crop_s: 2.0,
            samples_per_epoch: 180_000,
            lr_max: 5e-4,
            lr_min: 1e-6,
            warmup_epochs: 3,
            wd_min: 1e-12,
            wd_max: 0.05,
            disc_update_period: 2,
            beta: 100.0,
            grad_clip: 1.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: small epochs and batches, a hotter learning rate,
    /// and effectively no weight decay, sized to overfit toy datasets in
    /// minutes.
    pub fn toy() -> Self {
        Self {
            epochs_stage1: 5,
            epochs_stage2: 20,
            batch_size: 8,
            samples_per_epoch: 512,
            lr_max: 1e-2,
            lr_min: 1e-3,
            warmup_epochs: 1,
            wd_min: 0.0,
            wd_max: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("batch_size", self.batch_size),
            ("samples_per_epoch", self.samples_per_epoch),
            ("disc_update_period", self.disc_update_period),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{what} must be positive")));
            }
        }
        if !(self.crop_s.is_finite() && self.crop_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "crop_s must be positive, got {}",
                self.crop_s
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grad_clip must be positive, got {}",
                self.grad_clip
            )));
        }
        self.stage1_schedule().validate()?;
        self.stage2_schedule().validate()
    }

    pub fn stage1_schedule(&self) -> Schedule {
        Schedule {
            epochs: self.epochs_stage1,
            warmup_epochs: self.warmup_epochs,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            wd_min: self.wd_min,
            wd_max: self.wd_max,
        }
    }

    pub fn stage2_schedule(&self) -> Schedule {
        Schedule { epochs: self.epochs_stage2, ..self.stage1_schedule() }
    }
}

/// SplitMix64 finalizer: independent streams from (seed, lane).
pub(crate) fn mix_seed(seed: u64, lane: u64) -> u64 {
    let mut z = seed ^ lane.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    // [TRIVIAL] Presets pass validation; degenerate knobs do not.
    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::toy().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::toy() }.validate().is_err());
        assert!(TrainConfig { crop_s: 0.0, ..TrainConfig::toy() }.validate().is_err());
        assert!(TrainConfig { grad_clip: 0.0, ..TrainConfig::toy() }.validate().is_err());
        assert!(
            TrainConfig { warmup_epochs: 5, epochs_stage1: 5, ..TrainConfig::toy() }
                .validate()
                .is_err()
        );
    }

    // [TRIVIAL] Seed mixing separates lanes and preserves determinism.
    #[test]
    fn seed_mixing_is_deterministic_and_spread() {
        assert_eq!(mix_seed(42, 1), mix_seed(42, 1));
        assert_ne!(mix_seed(42, 1), mix_seed(42, 2));
        assert_ne!(mix_seed(42, 1), mix_seed(43, 1));
    }
}
