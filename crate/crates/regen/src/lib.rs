//! Two-stage streaming speech enhancement.
//!
//! The pipeline runs a predictive first stage (perceptual-band gains plus a
//! multi-frame complex filter on the low bins) and refines its output with a
//! generative second stage (a causal state-space generator trained
//! adversarially against a multi-scale waveform discriminator). Everything is
//! causal up to a fixed two-frame lookahead, so the engine streams with a
//! constant 40 ms algorithmic latency at the default 48 kHz configuration.
//!
//! The crate is self-contained: it ships its own reverse-mode autodiff
//! ([`nn`]), model definitions ([`models`]), training losses and loops
//! ([`losses`], [`train`]), objective metrics and challenge-style ranking
//! ([`eval`]), and the streaming/offline inference pipeline ([`pipeline`]).
//! All numerics are `f64`.

pub mod dsp;
pub mod error;
pub mod losses;
pub mod models;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};

/// Deterministic helpers shared by tests across modules.
#[doc(hidden)]
pub mod testutil {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Uniform noise in [-1, 1].
    pub fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}
