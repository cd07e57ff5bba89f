//! Perceptual-scale triangular filterbanks.
//!
//! Bands are triangles of equal width on the perceptual (ERB or Mel) scale.
//! The outermost bands extend flat to the spectrum edges, so every FFT bin is
//! covered and each column of the matrix sums to one: applying the bank to a
//! per-bin quantity is a partition-of-unity grouping, and expanding per-band
//! gains back through the transpose keeps them inside the gains' range.

use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterbankKind {
    Erb,
    Mel,
}

/// Non-negative `bands x bins` weight matrix with column sums of one.
#[derive(Debug, Clone)]
pub struct Filterbank {
    pub kind: FilterbankKind,
    /// Row-major `bands x bins`.
    pub matrix: Vec<f64>,
    pub n_bands: usize,
    pub n_bins: usize,
    /// Band edge frequencies in Hz, `n_bands + 2` strictly increasing values.
    pub band_edges: Vec<f64>,
}

const ERB_A: f64 = 24.7;
const ERB_Q: f64 = 9.265;

fn hz_to_erb(hz: f64) -> f64 {
    ERB_Q * (1.0 + hz / (ERB_A * ERB_Q)).ln()
}

fn erb_to_hz(erb: f64) -> f64 {
    ERB_A * ERB_Q * ((erb / ERB_Q).exp() - 1.0)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Build a triangular filterbank on the ERB or Mel scale spanning
/// `0..sample_rate/2`.
pub fn build_filterbank(kind: FilterbankKind, n_bands: usize, cfg: &StftConfig) -> Result<Filterbank> {
    cfg.validate()?;
    let n_bins = cfg.bins();
    if n_bands == 0 || n_bands > n_bins {
        return Err(Error::InvalidBandCount { n_bands, bins: n_bins });
    }
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let (to_scale, from_scale): (fn(f64) -> f64, fn(f64) -> f64) = match kind {
        FilterbankKind::Erb => (hz_to_erb, erb_to_hz),
        FilterbankKind::Mel => (hz_to_mel, mel_to_hz),
    };

    // n_bands + 2 uniformly spaced points on the perceptual scale.
    let lo = to_scale(0.0);
    let hi = to_scale(nyquist);
    let n_edges = n_bands + 2;
    let edges_scale: Vec<f64> = (0..n_edges)
        .map(|i| lo + (hi - lo) * i as f64 / (n_edges - 1) as f64)
        .collect();
    let band_edges: Vec<f64> = edges_scale.iter().map(|&e| from_scale(e)).collect();

    let bin_hz = cfg.sample_rate as f64 / cfg.fft_len as f64;
    let mut matrix = vec![0.0; n_bands * n_bins];
    for bin in 0..n_bins {
        let s = to_scale(bin_hz * bin as f64);
        for band in 0..n_bands {
            let (left, center, right) = (
                edges_scale[band],
                edges_scale[band + 1],
                edges_scale[band + 2],
            );
            // Triangles rise on [left, center] and fall on [center, right];
            // the outermost bands are flat past their centers so the edge
            // bins stay covered.
            let w = if s <= center {
                if band == 0 {
                    1.0
                } else {
                    ((s - left) / (center - left)).max(0.0)
                }
            } else if band == n_bands - 1 {
                1.0
            } else {
                ((right - s) / (right - center)).max(0.0)
            };
            if w > 0.0 {
                matrix[band * n_bins + bin] = w;
            }
        }
    }

    // Column-normalize; adjacent shoulders already sum to one in the interior,
    // this removes the residual float error and covers the clamped edges.
    for bin in 0..n_bins {
        let col_sum: f64 = (0..n_bands).map(|b| matrix[b * n_bins + bin]).sum();
        debug_assert!(col_sum > 0.0, "bin {bin} uncovered");
        for band in 0..n_bands {
            matrix[band * n_bins + bin] /= col_sum;
        }
    }

    Ok(Filterbank {
        kind,
        matrix,
        n_bands,
        n_bins,
        band_edges,
    })
}

impl Filterbank {
    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        self.matrix[band * self.n_bins + bin]
    }

    /// Collapse per-bin values into bands: `out[band] = sum_bin w * x[bin]`.
    pub fn project_frame(&self, bins: &[f64], out: &mut [f64]) {
        for (band, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[band * self.n_bins..(band + 1) * self.n_bins];
            *o = row.iter().zip(bins).map(|(w, x)| w * x).sum();
        }
    }

    /// Expand per-band values back to bins through the transpose. Because
    /// columns sum to one, constant band values expand to that constant.
    pub fn expand_frame(&self, bands: &[f64], out: &mut [f64]) {
        for (bin, o) in out.iter_mut().enumerate() {
            *o = (0..self.n_bands)
                .map(|b| self.matrix[b * self.n_bins + bin] * bands[b])
                .sum();
        }
    }
}

/// Apply a filterbank to a frame-major `frames x bins` magnitude matrix,
/// producing `frames x bands`.
pub fn apply_filterbank(fb: &Filterbank, magnitudes: &[f64], n_frames: usize) -> Result<Vec<f64>> {
    if magnitudes.len() != n_frames * fb.n_bins {
        return Err(Error::ShapeMismatch {
            context: "apply_filterbank".into(),
            expected: format!("{} values ({n_frames} frames x {} bins)", n_frames * fb.n_bins, fb.n_bins),
            got: format!("{}", magnitudes.len()),
        });
    }
    let mut out = vec![0.0; n_frames * fb.n_bands];
    for k in 0..n_frames {
        let frame = &magnitudes[k * fb.n_bins..(k + 1) * fb.n_bins];
        fb.project_frame(frame, &mut out[k * fb.n_bands..(k + 1) * fb.n_bands]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg48k() -> StftConfig {
        StftConfig::default()
    }

    #[test]
    fn erb_32_bands_columns_sum_to_one() {
        let fb = build_filterbank(FilterbankKind::Erb, 32, &cfg48k()).unwrap();
        assert_eq!(fb.n_bands, 32);
        assert_eq!(fb.n_bins, 481);
        for bin in 0..fb.n_bins {
            let sum: f64 = (0..32).map(|b| fb.weight(b, bin)).sum();
            assert!((sum - 1.0).abs() <= 1e-6, "bin {bin}: {sum}");
            for b in 0..32 {
                assert!(fb.weight(b, bin) >= 0.0);
            }
        }
    }

    #[test]
    fn degenerate_band_count_is_column_dominated() {
        let cfg = cfg48k();
        let fb = build_filterbank(FilterbankKind::Erb, cfg.bins(), &cfg).unwrap();
        for bin in 0..fb.n_bins {
            let max = (0..fb.n_bands).map(|b| fb.weight(b, bin)).fold(0.0, f64::max);
            assert!(max >= 0.5, "bin {bin} max weight {max}");
        }
    }

    #[test]
    fn mel_band_edges_increase() {
        let fb = build_filterbank(FilterbankKind::Mel, 2, &cfg48k()).unwrap();
        for pair in fb.band_edges.windows(2) {
            assert!(pair[1] > pair[0]);
        }
        let fb = build_filterbank(FilterbankKind::Mel, 80, &cfg48k()).unwrap();
        for pair in fb.band_edges.windows(2) {
            assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn out_of_range_band_count_is_rejected() {
        let cfg = cfg48k();
        assert!(build_filterbank(FilterbankKind::Erb, 0, &cfg).is_err());
        assert!(build_filterbank(FilterbankKind::Erb, cfg.bins() + 1, &cfg).is_err());
    }

    #[test]
    fn apply_zero_input_gives_zero() {
        let fb = build_filterbank(FilterbankKind::Erb, 8, &cfg48k()).unwrap();
        let out = apply_filterbank(&fb, &vec![0.0; 3 * fb.n_bins], 3).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn apply_matches_dense_matmul_oracle() {
        let fb = build_filterbank(FilterbankKind::Mel, 12, &cfg48k()).unwrap();
        let mut rng = crate::testutil::rng(3);
        let mags: Vec<f64> = crate::testutil::noise(&mut rng, 2 * fb.n_bins)
            .iter()
            .map(|x| x.abs())
            .collect();
        let out = apply_filterbank(&fb, &mags, 2).unwrap();
        for k in 0..2 {
            for band in 0..fb.n_bands {
                let mut acc = 0.0;
                for bin in 0..fb.n_bins {
                    acc += fb.weight(band, bin) * mags[k * fb.n_bins + bin];
                }
                let got = out[k * fb.n_bands + band];
                assert!((acc - got).abs() < 1e-12);
                assert!(got >= 0.0);
            }
        }
    }

    #[test]
    fn single_bin_impulse_reads_out_the_column() {
        let fb = build_filterbank(FilterbankKind::Erb, 16, &cfg48k()).unwrap();
        let mut mags = vec![0.0; fb.n_bins];
        mags[100] = 1.0;
        let out = apply_filterbank(&fb, &mags, 1).unwrap();
        for band in 0..fb.n_bands {
            assert_eq!(out[band], fb.weight(band, 100));
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let fb = build_filterbank(FilterbankKind::Erb, 8, &cfg48k()).unwrap();
        assert!(apply_filterbank(&fb, &vec![0.0; 10], 1).is_err());
    }

    #[test]
    fn constant_gain_expansion_is_identity() {
        let fb = build_filterbank(FilterbankKind::Erb, 32, &cfg48k()).unwrap();
        let bands = vec![1.0; 32];
        let mut bins = vec![0.0; fb.n_bins];
        fb.expand_frame(&bands, &mut bins);
        for &g in &bins {
            assert!((g - 1.0).abs() < 1e-9);
        }
    }
}
