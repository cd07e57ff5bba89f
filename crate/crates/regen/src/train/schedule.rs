//! Per-epoch learning-rate and weight-decay schedules.
//!
//! Learning rate: linear warmup to `lr_max` over `warmup_epochs`, then cosine
//! decay to `lr_min`. The warmup line hits `lr_max` exactly at the last warmup
//! epoch and the cosine starts there, so the curve is continuous.
//!
//! Weight decay: increasing cosine from `wd_min` at epoch 0 to `wd_max` at the
//! final epoch, monotone non-decreasing throughout.

use crate::error::{Error, Result};

/// Closed schedule over a fixed number of epochs.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub wd_min: f64,
    pub wd_max: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 2 {
            return Err(Error::InvalidConfig(format!(
                "schedule needs at least 2 epochs, got {}",
                self.epochs
            )));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} must be < epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        for (what, lo, hi) in [
            ("lr", self.lr_min, self.lr_max),
            ("wd", self.wd_min, self.wd_max),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
                return Err(Error::InvalidConfig(format!(
                    "{what} range must satisfy 0 <= min <= max and be finite, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn check_epoch(&self, epoch: usize) -> Result<()> {
        if epoch >= self.epochs {
            return Err(Error::EpochOutOfRange { epoch, epochs: self.epochs });
        }
        Ok(())
    }

    /// Learning rate for `epoch`. The decay phase divides by
    /// `epochs - warmup`, so the final epoch lands just above `lr_min`
    /// rather than exactly on it.
    pub fn lr(&self, epoch: usize) -> Result<f64> {
        self.check_epoch(epoch)?;
        let w = self.warmup_epochs;
        if epoch < w {
            return Ok(self.lr_max * (epoch + 1) as f64 / w as f64);
        }
        let span = (self.epochs - w) as f64;
        let phase = std::f64::consts::PI * (epoch - w) as f64 / span;
        Ok(self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + phase.cos()))
    }

    /// Weight decay for `epoch`.
    pub fn wd(&self, epoch: usize) -> Result<f64> {
        self.check_epoch(epoch)?;
        let span = (self.epochs - 1) as f64;
        let phase = std::f64::consts::PI * epoch as f64 / span;
        Ok(self.wd_min + 0.5 * (self.wd_max - self.wd_min) * (1.0 - phase.cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> Schedule {
        Schedule {
            epochs: 45,
            warmup_epochs: 3,
            lr_max: 5e-4,
            lr_min: 1e-6,
            wd_min: 1e-12,
            wd_max: 0.05,
        }
    }

    // [DERIVED] Warmup endpoint: epoch warmup-1 reaches lr_max exactly.
    #[test]
    fn warmup_ramps_linearly_to_lr_max() {
        let s = sched();
        assert_eq!(s.lr(0).unwrap(), 5e-4 / 3.0);
        assert_eq!(s.lr(1).unwrap(), 5e-4 * 2.0 / 3.0);
        assert_eq!(s.lr(2).unwrap(), 5e-4);
    }

    // [DERIVED] The cosine starts at lr_max where the warmup ends: the two
    // branch values at the boundary agree to 1e-12.
    #[test]
    fn lr_is_continuous_at_the_warmup_boundary() {
        let s = sched();
        let end_of_warmup = s.lr(s.warmup_epochs - 1).unwrap();
        let start_of_cosine = s.lr(s.warmup_epochs).unwrap();
        assert!((end_of_warmup - s.lr_max).abs() < 1e-12);
        assert!((start_of_cosine - s.lr_max).abs() < 1e-12);
    }

    // [TRIVIAL] Cosine endpoint: the final epoch approaches lr_min from
    // above (the phase stops one step short of pi).
    #[test]
    fn lr_final_epoch_approaches_lr_min() {
        let s = sched();
        let last = s.lr(s.epochs - 1).unwrap();
        assert!(last >= s.lr_min);
        assert!(last - s.lr_min < 0.01 * (s.lr_max - s.lr_min), "{last}");
    }

    // [DERIVED] Cosine midpoint: at epoch warmup + (epochs - warmup)/2 the
    // phase is pi/2 and the rate is the arithmetic mean of the extremes.
    // epochs 13, warmup 3: decay span 10, midpoint epoch 8.
    #[test]
    fn lr_cosine_midpoint_is_the_mean() {
        let s = Schedule { epochs: 13, ..sched() };
        let mid = s.lr(8).unwrap();
        assert!((mid - 0.5 * (s.lr_max + s.lr_min)).abs() < 1e-18, "{mid}");
    }

    // [DERIVED] lr never increases after the warmup peak.
    #[test]
    fn lr_decays_monotonically_after_warmup() {
        let s = sched();
        let mut prev = f64::INFINITY;
        for e in s.warmup_epochs..s.epochs {
            let lr = s.lr(e).unwrap();
            assert!(lr <= prev, "epoch {e}: {lr} > {prev}");
            prev = lr;
        }
    }

    // [TRIVIAL] wd endpoints.
    #[test]
    fn wd_endpoints() {
        let s = sched();
        assert_eq!(s.wd(0).unwrap(), s.wd_min);
        let last = s.wd(s.epochs - 1).unwrap();
        assert!((last - s.wd_max).abs() < 1e-15, "{last}");
    }

    // [DERIVED] wd midpoint: cos(pi/2) = 0 gives the mean. epochs 45 puts
    // the midpoint at epoch 22.
    #[test]
    fn wd_midpoint_is_the_mean() {
        let s = sched();
        let mid = s.wd(22).unwrap();
        assert!((mid - 0.5 * (s.wd_min + s.wd_max)).abs() < 1e-15, "{mid}");
    }

    // [DERIVED] wd is monotone non-decreasing across every epoch pair.
    #[test]
    fn wd_is_monotone_non_decreasing() {
        let s = sched();
        let mut prev = -1.0;
        for e in 0..s.epochs {
            let wd = s.wd(e).unwrap();
            assert!(wd >= prev, "epoch {e}: {wd} < {prev}");
            prev = wd;
        }
    }

    // [TRIVIAL] Epoch range errors.
    #[test]
    fn out_of_range_epochs_error() {
        let s = sched();
        for bad in [s.epochs, s.epochs + 10] {
            match s.lr(bad) {
                Err(Error::EpochOutOfRange { epoch, epochs }) => {
                    assert_eq!((epoch, epochs), (bad, s.epochs));
                }
                other => panic!("expected EpochOutOfRange, got {other:?}"),
            }
            assert!(s.wd(bad).is_err());
        }
    }

    // [TRIVIAL] Validation rejections.
    #[test]
    fn validation_rejects_bad_shapes() {
        assert!(Schedule { epochs: 1, ..sched() }.validate().is_err());
        assert!(Schedule { warmup_epochs: 45, ..sched() }.validate().is_err());
        assert!(Schedule { lr_min: 1e-3, lr_max: 1e-6, ..sched() }.validate().is_err());
        assert!(Schedule { wd_max: f64::NAN, ..sched() }.validate().is_err());
        assert!(sched().validate().is_ok());
    }
}
