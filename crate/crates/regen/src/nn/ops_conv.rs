//! Causal convolutions and pooling.
//!
//! Time axes are left-padded by `kernel - 1` so an output step never reads
//! past its own input step; the frequency axis of the 2-D variant is
//! same-padded. Output length along a strided axis is `ceil(len / stride)`.

use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

fn out_len(len: usize, stride: usize) -> usize {
    if len == 0 {
        0
    } else {
        (len - 1) / stride + 1
    }
}

impl Tape {
    /// `x [c_in, t]`, `w [c_out, c_in, k]`, `b [c_out]` -> `[c_out, ceil(t/stride)]`.
    ///
    /// Output step `j` is aligned with input step `j*stride` and reads inputs
    /// `j*stride - k + 1 ..= j*stride`.
    pub fn conv1d_causal(&self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        assert!(stride >= 1, "conv1d_causal: zero stride");
        let (value, dims) = self.with_values(&[x, w, b], |v| {
            let (sx, sw, sb) = (v[0].shape(), v[1].shape(), v[2].shape());
            assert!(
                sx.len() == 2 && sw.len() == 3 && sx[0] == sw[1] && sb == [sw[0]],
                "conv1d_causal: x {sx:?}, w {sw:?}, b {sb:?}"
            );
            let (c_in, t) = (sx[0], sx[1]);
            let (c_out, k) = (sw[0], sw[2]);
            let t_out = out_len(t, stride);
            let mut out = vec![0.0; c_out * t_out];
            for o in 0..c_out {
                for j in 0..t_out {
                    let end = j * stride; // rightmost input index
                    let mut acc = v[2].data()[o];
                    for ci in 0..c_in {
                        let wrow = &v[1].data()[(o * c_in + ci) * k..(o * c_in + ci + 1) * k];
                        let xrow = &v[0].data()[ci * t..(ci + 1) * t];
                        for (i, &wv) in wrow.iter().enumerate() {
                            // Tap i reads input end - (k - 1) + i.
                            let src = end as isize - (k as isize - 1) + i as isize;
                            if src >= 0 {
                                acc += wv * xrow[src as usize];
                            }
                        }
                    }
                    out[o * t_out + j] = acc;
                }
            }
            (
                Tensor::from_vec(out, &[c_out, t_out]).unwrap(),
                (c_in, t, c_out, k, t_out),
            )
        });
        let (c_in, t, c_out, k, t_out) = dims;
        self.push(
            value,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, _, p| {
                let mut gx = vec![0.0; c_in * t];
                let mut gw = vec![0.0; c_out * c_in * k];
                let mut gb = vec![0.0; c_out];
                for o in 0..c_out {
                    for j in 0..t_out {
                        let gv = g.data()[o * t_out + j];
                        if gv == 0.0 {
                            continue;
                        }
                        gb[o] += gv;
                        let end = j * stride;
                        for ci in 0..c_in {
                            let wrow = &p[1].data()[(o * c_in + ci) * k..(o * c_in + ci + 1) * k];
                            let xrow = &p[0].data()[ci * t..(ci + 1) * t];
                            for i in 0..k {
                                let src = end as isize - (k as isize - 1) + i as isize;
                                if src >= 0 {
                                    let src = src as usize;
                                    gx[ci * t + src] += gv * wrow[i];
                                    gw[(o * c_in + ci) * k + i] += gv * xrow[src];
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_vec(gx, &[c_in, t]).unwrap(),
                    Tensor::from_vec(gw, &[c_out, c_in, k]).unwrap(),
                    Tensor::from_vec(gb, &[c_out]).unwrap(),
                ]
            })),
        )
    }

    /// `x [c_in, t, f]`, `w [c_out, c_in, kt, kf]`, `b [c_out]` ->
    /// `[c_out, t, ceil(f/stride_f)]`. Causal over `t`, same-padded over `f`.
    pub fn conv2d_causal(&self, x: Var, w: Var, b: Var, stride_f: usize) -> Var {
        assert!(stride_f >= 1, "conv2d_causal: zero stride");
        let (value, dims) = self.with_values(&[x, w, b], |v| {
            let (sx, sw, sb) = (v[0].shape(), v[1].shape(), v[2].shape());
            assert!(
                sx.len() == 3 && sw.len() == 4 && sx[0] == sw[1] && sb == [sw[0]],
                "conv2d_causal: x {sx:?}, w {sw:?}, b {sb:?}"
            );
            let (c_in, t, f) = (sx[0], sx[1], sx[2]);
            let (c_out, kt, kf) = (sw[0], sw[2], sw[3]);
            let f_out = out_len(f, stride_f);
            let pad_left = (kf - 1) / 2;
            let mut out = vec![0.0; c_out * t * f_out];
            for o in 0..c_out {
                for j in 0..t {
                    for m in 0..f_out {
                        let mut acc = v[2].data()[o];
                        for ci in 0..c_in {
                            for it in 0..kt {
                                let tj = j as isize - (kt as isize - 1) + it as isize;
                                if tj < 0 {
                                    continue;
                                }
                                let tj = tj as usize;
                                let wrow = &v[1].data()[((o * c_in + ci) * kt + it) * kf..];
                                let xrow = &v[0].data()[(ci * t + tj) * f..(ci * t + tj + 1) * f];
                                for fi in 0..kf {
                                    let fj =
                                        (m * stride_f) as isize - pad_left as isize + fi as isize;
                                    if fj >= 0 && (fj as usize) < f {
                                        acc += wrow[fi] * xrow[fj as usize];
                                    }
                                }
                            }
                        }
                        out[(o * t + j) * f_out + m] = acc;
                    }
                }
            }
            (
                Tensor::from_vec(out, &[c_out, t, f_out]).unwrap(),
                (c_in, t, f, c_out, kt, kf, f_out, pad_left),
            )
        });
        let (c_in, t, f, c_out, kt, kf, f_out, pad_left) = dims;
        self.push(
            value,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, _, p| {
                let mut gx = vec![0.0; c_in * t * f];
                let mut gw = vec![0.0; c_out * c_in * kt * kf];
                let mut gb = vec![0.0; c_out];
                for o in 0..c_out {
                    for j in 0..t {
                        for m in 0..f_out {
                            let gv = g.data()[(o * t + j) * f_out + m];
                            if gv == 0.0 {
                                continue;
                            }
                            gb[o] += gv;
                            for ci in 0..c_in {
                                for it in 0..kt {
                                    let tj = j as isize - (kt as isize - 1) + it as isize;
                                    if tj < 0 {
                                        continue;
                                    }
                                    let tj = tj as usize;
                                    for fi in 0..kf {
                                        let fj = (m * stride_f) as isize - pad_left as isize
                                            + fi as isize;
                                        if fj >= 0 && (fj as usize) < f {
                                            let fj = fj as usize;
                                            let wi = ((o * c_in + ci) * kt + it) * kf + fi;
                                            let xi = (ci * t + tj) * f + fj;
                                            gx[xi] += gv * p[1].data()[wi];
                                            gw[wi] += gv * p[0].data()[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_vec(gx, &[c_in, t, f]).unwrap(),
                    Tensor::from_vec(gw, &[c_out, c_in, kt, kf]).unwrap(),
                    Tensor::from_vec(gb, &[c_out]).unwrap(),
                ]
            })),
        )
    }

    /// Non-overlapping mean pooling along time: `x [c, t] -> [c, t/factor]`
    /// (floor; a trailing partial window is dropped).
    pub fn avg_pool1d(&self, x: Var, factor: usize) -> Var {
        assert!(factor >= 1, "avg_pool1d: zero factor");
        let (value, c, t) = self.with_values(&[x], |v| {
            let s = v[0].shape();
            assert!(s.len() == 2, "avg_pool1d: {s:?}");
            let (c, t) = (s[0], s[1]);
            let t_out = t / factor;
            let mut out = vec![0.0; c * t_out];
            for ci in 0..c {
                for j in 0..t_out {
                    let seg = &v[0].data()[ci * t + j * factor..ci * t + (j + 1) * factor];
                    out[ci * t_out + j] = seg.iter().sum::<f64>() / factor as f64;
                }
            }
            (Tensor::from_vec(out, &[c, t_out]).unwrap(), c, t)
        });
        self.push(
            value,
            vec![x.0],
            Some(Box::new(move |g, _, _| {
                let t_out = t / factor;
                let mut gx = vec![0.0; c * t];
                for ci in 0..c {
                    for j in 0..t_out {
                        let gv = g.data()[ci * t_out + j] / factor as f64;
                        for q in 0..factor {
                            gx[ci * t + j * factor + q] = gv;
                        }
                    }
                }
                vec![Tensor::from_vec(gx, &[c, t]).unwrap()]
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;

    /// Direct scalar-loop oracle for the causal 1-D convolution.
    fn conv1d_oracle(
        x: &[f64],
        w: &[f64],
        b: &[f64],
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Vec<f64> {
        let t_out = if t == 0 { 0 } else { (t - 1) / stride + 1 };
        let mut out = vec![0.0; c_out * t_out];
        for o in 0..c_out {
            for j in 0..t_out {
                let mut acc = b[o];
                for ci in 0..c_in {
                    for i in 0..k {
                        let src = (j * stride) as isize - i as isize;
                        if src >= 0 {
                            // Tap ordering: weight index k-1-i multiplies lag i.
                            acc += w[(o * c_in + ci) * k + (k - 1 - i)]
                                * x[ci * t + src as usize];
                        }
                    }
                }
                out[o * t_out + j] = acc;
            }
        }
        out
    }

    #[test]
    fn conv1d_matches_scalar_oracle() {
        let mut rng = crate::testutil::rng(41);
        let (c_in, t, c_out, k) = (2, 9, 3, 4);
        let x = crate::testutil::noise(&mut rng, c_in * t);
        let w = crate::testutil::noise(&mut rng, c_out * c_in * k);
        let b = crate::testutil::noise(&mut rng, c_out);
        for stride in [1, 2, 3] {
            let tape = Tape::new();
            let xv = tape.input(Tensor::from_vec(x.clone(), &[c_in, t]).unwrap());
            let wv = tape.input(Tensor::from_vec(w.clone(), &[c_out, c_in, k]).unwrap());
            let bv = tape.input(Tensor::from_vec(b.clone(), &[c_out]).unwrap());
            let y = tape.conv1d_causal(xv, wv, bv, stride);
            let want = conv1d_oracle(&x, &w, &b, c_in, t, c_out, k, stride);
            let got = tape.value(y);
            assert_eq!(got.shape(), &[c_out, (t - 1) / stride + 1]);
            for (a, e) in got.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv1d_is_causal() {
        // Changing input at step t0 must not affect outputs before t0.
        let mut rng = crate::testutil::rng(42);
        let (c_in, t, c_out, k) = (1, 8, 2, 3);
        let x0 = crate::testutil::noise(&mut rng, t);
        let w = crate::testutil::noise(&mut rng, c_out * k);
        let b = vec![0.0; c_out];
        let run = |x: &[f64]| {
            let tape = Tape::new();
            let xv = tape.input(Tensor::from_vec(x.to_vec(), &[c_in, t]).unwrap());
            let wv = tape.input(Tensor::from_vec(w.clone(), &[c_out, c_in, k]).unwrap());
            let bv = tape.input(Tensor::from_vec(b.clone(), &[c_out]).unwrap());
            tape.value(tape.conv1d_causal(xv, wv, bv, 1))
        };
        let base = run(&x0);
        let mut bumped = x0.clone();
        let t0 = 5;
        bumped[t0] += 10.0;
        let after = run(&bumped);
        for o in 0..c_out {
            for j in 0..t {
                let same = (base.data()[o * t + j] - after.data()[o * t + j]).abs() < 1e-12;
                assert_eq!(same, j < t0, "output ({o},{j}) causality");
            }
        }
    }

    #[test]
    fn conv1d_gradients_check() {
        let mut rng = crate::testutil::rng(43);
        let (c_in, t, c_out, k) = (2, 6, 2, 3);
        let x = Tensor::from_vec(crate::testutil::noise(&mut rng, c_in * t), &[c_in, t]).unwrap();
        let w =
            Tensor::from_vec(crate::testutil::noise(&mut rng, c_out * c_in * k), &[c_out, c_in, k])
                .unwrap();
        let b = Tensor::from_vec(crate::testutil::noise(&mut rng, c_out), &[c_out]).unwrap();
        for stride in [1, 2] {
            check_gradients("conv1d_causal", &[x.clone(), w.clone(), b.clone()], |t_, v| {
                let y = t_.conv1d_causal(v[0], v[1], v[2], stride);
                let sq = t_.mul(y, y);
                t_.sum(sq)
            });
        }
    }

    #[test]
    fn conv2d_shapes_and_causality() {
        let mut rng = crate::testutil::rng(44);
        let (c_in, t, f, c_out, kt, kf) = (2, 5, 8, 3, 2, 3);
        let x0 = crate::testutil::noise(&mut rng, c_in * t * f);
        let w = crate::testutil::noise(&mut rng, c_out * c_in * kt * kf);
        let b = crate::testutil::noise(&mut rng, c_out);
        let run = |x: &[f64], stride: usize| {
            let tape = Tape::new();
            let xv = tape.input(Tensor::from_vec(x.to_vec(), &[c_in, t, f]).unwrap());
            let wv =
                tape.input(Tensor::from_vec(w.clone(), &[c_out, c_in, kt, kf]).unwrap());
            let bv = tape.input(Tensor::from_vec(b.clone(), &[c_out]).unwrap());
            tape.value(tape.conv2d_causal(xv, wv, bv, stride))
        };
        assert_eq!(run(&x0, 1).shape(), &[c_out, t, f]);
        assert_eq!(run(&x0, 2).shape(), &[c_out, t, 4]);

        // Bump time step 3: outputs at times < 3 must not move.
        let mut bumped = x0.clone();
        for ci in 0..c_in {
            for fj in 0..f {
                bumped[(ci * t + 3) * f + fj] += 5.0;
            }
        }
        let base = run(&x0, 1);
        let after = run(&bumped, 1);
        for o in 0..c_out {
            for j in 0..t {
                for m in 0..f {
                    let same =
                        (base.data()[(o * t + j) * f + m] - after.data()[(o * t + j) * f + m])
                            .abs()
                            < 1e-12;
                    assert_eq!(same, j < 3, "output ({o},{j},{m})");
                }
            }
        }
    }

    #[test]
    fn conv2d_gradients_check() {
        let mut rng = crate::testutil::rng(45);
        let (c_in, t, f, c_out, kt, kf) = (1, 3, 4, 2, 2, 3);
        let x = Tensor::from_vec(crate::testutil::noise(&mut rng, c_in * t * f), &[c_in, t, f])
            .unwrap();
        let w = Tensor::from_vec(
            crate::testutil::noise(&mut rng, c_out * c_in * kt * kf),
            &[c_out, c_in, kt, kf],
        )
        .unwrap();
        let b = Tensor::from_vec(crate::testutil::noise(&mut rng, c_out), &[c_out]).unwrap();
        for stride in [1, 2] {
            check_gradients("conv2d_causal", &[x.clone(), w.clone(), b.clone()], |t_, v| {
                let y = t_.conv2d_causal(v[0], v[1], v[2], stride);
                let sq = t_.mul(y, y);
                t_.sum(sq)
            });
        }
    }

    #[test]
    fn avg_pool_halves_and_averages() {
        let tape = Tape::new();
        let x = tape.input(
            Tensor::from_vec(vec![1.0, 3.0, 5.0, 7.0, 9.0, 0.0, 2.0, 4.0, 6.0, 8.0], &[2, 5])
                .unwrap(),
        );
        let y = tape.avg_pool1d(x, 2);
        let yv = tape.value(y);
        assert_eq!(yv.shape(), &[2, 2]);
        assert_eq!(yv.data(), &[2.0, 6.0, 1.0, 5.0]); // trailing element dropped

        let mut rng = crate::testutil::rng(46);
        let xr = Tensor::from_vec(crate::testutil::noise(&mut rng, 2 * 6), &[2, 6]).unwrap();
        check_gradients("avg_pool1d", &[xr], |t, v| {
            let y = t.avg_pool1d(v[0], 2);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
    }
}
