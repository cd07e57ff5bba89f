//! Differentiable STFT and inverse STFT.
//!
//! Both transforms are linear in their inputs, so the backward passes are the
//! adjoint maps, computed with FFTs rather than materialized matrices. Complex
//! spectra live on the tape as `[2, frames, bins]` tensors (axis 0 = re, im).
//! Forward values are produced by the `dsp` implementations, so the
//! differentiable path can never drift from the inference path.

use num_complex::Complex64;

use crate::dsp::{self, ComplexSpectrogram, StftConfig};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

fn spec_to_tensor(spec: &ComplexSpectrogram) -> Tensor {
    let (frames, bins) = (spec.frames(), spec.bins());
    let mut data = Vec::with_capacity(2 * frames * bins);
    for k in 0..frames {
        for c in spec.frame(k) {
            data.push(c.re);
        }
    }
    for k in 0..frames {
        for c in spec.frame(k) {
            data.push(c.im);
        }
    }
    Tensor::from_vec(data, &[2, frames, bins]).unwrap()
}

fn tensor_to_spec(t: &Tensor, cfg: &StftConfig) -> ComplexSpectrogram {
    let s = t.shape();
    debug_assert!(s.len() == 3 && s[0] == 2 && s[2] == cfg.bins());
    let (frames, bins) = (s[1], s[2]);
    let half = frames * bins;
    let data: Vec<Complex64> = (0..half)
        .map(|i| Complex64::new(t.data()[i], t.data()[half + i]))
        .collect();
    ComplexSpectrogram::from_data(data, frames, cfg.clone()).expect("tensor_to_spec")
}

impl Tape {
    /// Forward STFT as a tape op: `x [n] -> [2, frames, bins]`.
    pub fn stft_op(&self, x: Var, cfg: &StftConfig) -> Var {
        let cfg = cfg.clone();
        let value = self.with_values(&[x], |v| {
            assert_eq!(v[0].shape().len(), 1, "stft_op: x {:?}", v[0].shape());
            assert!(v[0].numel() > 0, "stft_op: empty signal");
            let spec = dsp::stft(v[0].data(), &cfg).expect("stft_op forward");
            spec_to_tensor(&spec)
        });
        let back_cfg = cfg.clone();
        self.push(
            value,
            vec![x.0],
            Some(Box::new(move |g, _, p| {
                let cfg = &back_cfg;
                let n = cfg.fft_len;
                let bins = cfg.bins();
                let len = p[0].numel();
                let frames = cfg.frames_for_len(len);
                let front = cfg.front_pad();
                let window = dsp::hann_window(n);
                let half = frames * bins;

                let ifft = rustfft::FftPlanner::new().plan_fft_inverse(n);
                let mut grad_padded = vec![0.0; (frames - 1) * cfg.hop + n];
                let mut buf = vec![Complex64::ZERO; n];
                for k in 0..frames {
                    // One-sided gradient only: the forward op never emitted the
                    // mirrored bins, so their adjoint contribution is zero.
                    for f in 0..bins {
                        buf[f] = Complex64::new(
                            g.data()[k * bins + f],
                            g.data()[half + k * bins + f],
                        );
                    }
                    for b in buf[bins..].iter_mut() {
                        *b = Complex64::ZERO;
                    }
                    ifft.process(&mut buf);
                    let base = k * cfg.hop;
                    for (i, (b, &w)) in buf.iter().zip(&window).enumerate() {
                        grad_padded[base + i] += w * b.re;
                    }
                }
                let gx = grad_padded[front..front + len].to_vec();
                vec![Tensor::from_vec(gx, &[len]).unwrap()]
            })),
        )
    }

    /// Inverse STFT as a tape op: `[2, frames, bins] -> [(frames+1)*hop - win]`.
    pub fn istft_op(&self, spec: Var, cfg: &StftConfig) -> Var {
        let cfg = cfg.clone();
        let value = self.with_values(&[spec], |v| {
            let s = tensor_to_spec(v[0], &cfg);
            let y = dsp::istft(&s, &cfg).expect("istft_op forward");
            let len = y.len();
            Tensor::from_vec(y, &[len]).unwrap()
        });
        let back_cfg = cfg.clone();
        self.push(
            value,
            vec![spec.0],
            Some(Box::new(move |g, _, p| {
                let cfg = &back_cfg;
                let n = cfg.fft_len;
                let bins = cfg.bins();
                let frames = p[0].shape()[1];
                let front = cfg.front_pad();
                let half = frames * bins;
                let window = dsp::hann_window(n);
                let syn = dsp::synthesis_window(&window, cfg.hop);
                let scale = 1.0 / n as f64;

                // Scatter the output gradient back onto the overlap-add
                // accumulator (the forward pass trimmed the front pad).
                let mut g_acc = vec![0.0; (frames - 1) * cfg.hop + n];
                for (j, &gv) in g.data().iter().enumerate() {
                    g_acc[front + j] = gv;
                }

                let fft = rustfft::FftPlanner::new().plan_fft_forward(n);
                let mut grad = vec![0.0; 2 * half];
                let mut buf = vec![Complex64::ZERO; n];
                for k in 0..frames {
                    let base = k * cfg.hop;
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b = Complex64::new(g_acc[base + i] * syn[i] * scale, 0.0);
                    }
                    fft.process(&mut buf);
                    for f in 0..bins {
                        // Interior bins appear twice in the Hermitian
                        // extension the forward pass built, hence the factor 2.
                        let c = if f == 0 || f == n / 2 { 1.0 } else { 2.0 };
                        grad[k * bins + f] = c * buf[f].re;
                        grad[half + k * bins + f] = c * buf[f].im;
                    }
                }
                vec![Tensor::from_vec(grad, &[2, frames, bins]).unwrap()]
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients_with;

    fn tiny_cfg() -> StftConfig {
        StftConfig {
            fft_len: 8,
            win_len: 8,
            hop: 4,
            lookahead_frames: 0,
            sample_rate: 8000,
        }
    }

    #[test]
    fn stft_op_forward_matches_dsp() {
        let cfg = tiny_cfg();
        let mut rng = crate::testutil::rng(51);
        let x = crate::testutil::noise(&mut rng, 13);
        let spec = dsp::stft(&x, &cfg).unwrap();

        let tape = Tape::new();
        let xv = tape.input(Tensor::from_vec(x.clone(), &[13]).unwrap());
        let sv = tape.stft_op(xv, &cfg);
        let t = tape.value(sv);
        assert_eq!(t.shape(), &[2, spec.frames(), spec.bins()]);
        let half = spec.frames() * spec.bins();
        for k in 0..spec.frames() {
            for (f, c) in spec.frame(k).iter().enumerate() {
                assert!((t.data()[k * spec.bins() + f] - c.re).abs() < 1e-12);
                assert!((t.data()[half + k * spec.bins() + f] - c.im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn istft_op_forward_matches_dsp_and_round_trips() {
        let cfg = tiny_cfg();
        let mut rng = crate::testutil::rng(52);
        let x = crate::testutil::noise(&mut rng, 16);
        let tape = Tape::new();
        let xv = tape.input(Tensor::from_vec(x.clone(), &[16]).unwrap());
        let sv = tape.stft_op(xv, &cfg);
        let yv = tape.istft_op(sv, &cfg);
        let y = tape.value(yv);
        assert!(y.numel() >= x.len());
        for (i, &xi) in x.iter().enumerate() {
            assert!((y.data()[i] - xi).abs() < 1e-10, "sample {i}");
        }
    }

    #[test]
    fn stft_op_gradient_checks() {
        let cfg = tiny_cfg();
        let mut rng = crate::testutil::rng(53);
        let x = Tensor::from_vec(crate::testutil::noise(&mut rng, 10), &[10]).unwrap();
        check_gradients_with("stft_op", &[x], 1e-5, 1e-7, 1e-5, |t, v| {
            let s = t.stft_op(v[0], &cfg);
            let sq = t.mul(s, s);
            t.sum(sq)
        });
    }

    #[test]
    fn istft_op_gradient_checks() {
        let cfg = tiny_cfg();
        let mut rng = crate::testutil::rng(54);
        // 3 frames x 5 bins, re+im.
        let s = Tensor::from_vec(crate::testutil::noise(&mut rng, 2 * 3 * 5), &[2, 3, 5]).unwrap();
        check_gradients_with("istft_op", &[s], 1e-5, 1e-7, 1e-5, |t, v| {
            let y = t.istft_op(v[0], &cfg);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
    }

    #[test]
    fn composed_spectral_loss_gradient_checks() {
        // A miniature of the real use: mean |stft(x)| distance to a target.
        let cfg = tiny_cfg();
        let mut rng = crate::testutil::rng(55);
        let x = Tensor::from_vec(crate::testutil::noise(&mut rng, 12), &[12]).unwrap();
        let target = crate::testutil::noise(&mut rng, 12);
        check_gradients_with("spectral_mag_loss", &[x], 1e-5, 1e-6, 1e-4, |t, v| {
            let s = t.stft_op(v[0], &cfg);
            let frames = t.shape_of(s)[1];
            let bins = t.shape_of(s)[2];
            let re = t.index_axis0(s, 0);
            let im = t.index_axis0(s, 1);
            let re2 = t.mul(re, re);
            let im2 = t.mul(im, im);
            let p = t.add(re2, im2);
            let p_eps = t.add_const(p, 1e-9);
            let mag = t.sqrt(p_eps);

            let ts = t.input(Tensor::from_vec(target.clone(), &[12]).unwrap());
            let tspec = t.stft_op(ts, &cfg);
            let tre = t.index_axis0(tspec, 0);
            let tim = t.index_axis0(tspec, 1);
            let tre2 = t.mul(tre, tre);
            let tim2 = t.mul(tim, tim);
            let tp = t.add(tre2, tim2);
            let tp_eps = t.add_const(tp, 1e-9);
            let tmag = t.sqrt(tp_eps);

            let _ = (frames, bins);
            t.mean_abs_diff(mag, tmag)
        });
    }
}
