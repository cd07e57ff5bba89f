//! Reshaping, slicing, stacking, and time-shifting.

use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

impl Tape {
    /// Same data, new shape.
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let value = self.with_values(&[a], |v| {
            v[0].reshaped(shape)
                .unwrap_or_else(|_| panic!("reshape: {:?} -> {shape:?}", v[0].shape()))
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![g.reshaped(p[0].shape()).unwrap()]
            })),
        )
    }

    /// Columns `[start, end)` of a `[t, n]` tensor.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let (value, t, n) = self.with_values(&[a], |v| {
            let s = v[0].shape();
            assert!(
                s.len() == 2 && start < end && end <= s[1],
                "slice_cols: [{start},{end}) of {s:?}"
            );
            let (t, n) = (s[0], s[1]);
            let mut out = Vec::with_capacity(t * (end - start));
            for row in v[0].data().chunks(n) {
                out.extend_from_slice(&row[start..end]);
            }
            (Tensor::from_vec(out, &[t, end - start]).unwrap(), t, n)
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let w = end - start;
                let mut gv = vec![0.0; t * n];
                for (ti, grow) in g.data().chunks(w).enumerate() {
                    gv[ti * n + start..ti * n + end].copy_from_slice(grow);
                }
                vec![Tensor::from_vec(gv, &[t, n]).unwrap()]
            })),
        )
    }

    /// Concatenate `[t, n_i]` tensors along the column axis.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let (value, t, widths) = self.with_values(parts, |vals| {
            let t = vals[0].shape()[0];
            let widths: Vec<usize> = vals
                .iter()
                .map(|v| {
                    let s = v.shape();
                    assert!(s.len() == 2 && s[0] == t, "concat_cols: shapes {s:?} vs t={t}");
                    s[1]
                })
                .collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(t * total);
            for ti in 0..t {
                for (v, &w) in vals.iter().zip(&widths) {
                    out.extend_from_slice(&v.data()[ti * w..(ti + 1) * w]);
                }
            }
            (Tensor::from_vec(out, &[t, total]).unwrap(), t, widths)
        });
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let total: usize = widths.iter().sum();
                let mut grads: Vec<Vec<f64>> =
                    widths.iter().map(|&w| Vec::with_capacity(t * w)).collect();
                for ti in 0..t {
                    let grow = &g.data()[ti * total..(ti + 1) * total];
                    let mut off = 0;
                    for (gv, &w) in grads.iter_mut().zip(&widths) {
                        gv.extend_from_slice(&grow[off..off + w]);
                        off += w;
                    }
                }
                grads
                    .into_iter()
                    .zip(&widths)
                    .map(|(gv, &w)| Tensor::from_vec(gv, &[t, w]).unwrap())
                    .collect()
            })),
        )
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack_new_axis(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_new_axis: no inputs");
        let (value, inner) = self.with_values(parts, |vals| {
            let shape = vals[0].shape().to_vec();
            for v in vals {
                assert_eq!(v.shape(), &shape[..], "stack_new_axis: mixed shapes");
            }
            let inner: usize = shape.iter().product();
            let mut out = Vec::with_capacity(vals.len() * inner);
            for v in vals {
                out.extend_from_slice(v.data());
            }
            let mut full = vec![vals.len()];
            full.extend_from_slice(&shape);
            (Tensor::from_vec(out, &full).unwrap(), inner)
        });
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, p| {
                g.data()
                    .chunks(inner)
                    .zip(p)
                    .map(|(chunk, parent)| {
                        Tensor::from_vec(chunk.to_vec(), parent.shape()).unwrap()
                    })
                    .collect()
            })),
        )
    }

    /// Slice `i` of the leading axis: `[k, ...rest] -> [...rest]`.
    pub fn index_axis0(&self, a: Var, i: usize) -> Var {
        let (value, inner) = self.with_values(&[a], |v| {
            let s = v[0].shape();
            assert!(!s.is_empty() && i < s[0], "index_axis0: {i} of {s:?}");
            let inner: usize = s[1..].iter().product();
            (
                Tensor::from_vec(v[0].data()[i * inner..(i + 1) * inner].to_vec(), &s[1..])
                    .unwrap(),
                inner,
            )
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, p| {
                let mut gv = vec![0.0; p[0].numel()];
                gv[i * inner..(i + 1) * inner].copy_from_slice(g.data());
                vec![Tensor::from_vec(gv, p[0].shape()).unwrap()]
            })),
        )
    }

    /// Rows `[start, end)` of a `[t, n]` tensor.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Var {
        let (value, t, n) = self.with_values(&[a], |v| {
            let s = v[0].shape();
            assert!(
                s.len() == 2 && start < end && end <= s[0],
                "slice_rows: [{start},{end}) of {s:?}"
            );
            let (t, n) = (s[0], s[1]);
            (
                Tensor::from_vec(v[0].data()[start * n..end * n].to_vec(), &[end - start, n])
                    .unwrap(),
                t,
                n,
            )
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut gv = vec![0.0; t * n];
                gv[start * n..end * n].copy_from_slice(g.data());
                vec![Tensor::from_vec(gv, &[t, n]).unwrap()]
            })),
        )
    }

    /// Concatenate `[t_i, n]` tensors along the row axis.
    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let (value, heights) = self.with_values(parts, |vals| {
            let n = vals[0].shape()[1];
            let heights: Vec<usize> = vals
                .iter()
                .map(|v| {
                    let s = v.shape();
                    assert!(s.len() == 2 && s[1] == n, "concat_rows: shapes {s:?} vs n={n}");
                    s[0]
                })
                .collect();
            let total: usize = heights.iter().sum();
            let mut out = Vec::with_capacity(total * n);
            for v in vals {
                out.extend_from_slice(v.data());
            }
            (Tensor::from_vec(out, &[total, n]).unwrap(), heights)
        });
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, p| {
                let n = p[0].shape()[1];
                let mut off = 0;
                heights
                    .iter()
                    .map(|&h| {
                        let t = Tensor::from_vec(g.data()[off..off + h * n].to_vec(), &[h, n])
                            .unwrap();
                        off += h * n;
                        t
                    })
                    .collect()
            })),
        )
    }

    /// Time slice `[start, end)` of a `[c, t, f]` tensor (axis 1).
    pub fn slice_time(&self, a: Var, start: usize, end: usize) -> Var {
        let (value, c, t, f) = self.with_values(&[a], |v| {
            let s = v[0].shape();
            assert!(
                s.len() == 3 && start < end && end <= s[1],
                "slice_time: [{start},{end}) of {s:?}"
            );
            let (c, t, f) = (s[0], s[1], s[2]);
            let w = end - start;
            let mut out = Vec::with_capacity(c * w * f);
            for ci in 0..c {
                out.extend_from_slice(&v[0].data()[(ci * t + start) * f..(ci * t + end) * f]);
            }
            (Tensor::from_vec(out, &[c, w, f]).unwrap(), c, t, f)
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let w = end - start;
                let mut gv = vec![0.0; c * t * f];
                for ci in 0..c {
                    gv[(ci * t + start) * f..(ci * t + end) * f]
                        .copy_from_slice(&g.data()[ci * w * f..(ci + 1) * w * f]);
                }
                vec![Tensor::from_vec(gv, &[c, t, f]).unwrap()]
            })),
        )
    }

    /// Concatenate `[c, t_i, f]` tensors along time (axis 1).
    pub fn concat_time(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_time: no inputs");
        let (value, c, f, lens) = self.with_values(parts, |vals| {
            let s0 = vals[0].shape();
            assert!(s0.len() == 3, "concat_time: {s0:?}");
            let (c, f) = (s0[0], s0[2]);
            let lens: Vec<usize> = vals
                .iter()
                .map(|v| {
                    let s = v.shape();
                    assert!(
                        s.len() == 3 && s[0] == c && s[2] == f,
                        "concat_time: {s:?} vs c={c}, f={f}"
                    );
                    s[1]
                })
                .collect();
            let total: usize = lens.iter().sum();
            let mut out = vec![0.0; c * total * f];
            for ci in 0..c {
                let mut off = 0;
                for (v, &tl) in vals.iter().zip(&lens) {
                    out[(ci * total + off) * f..(ci * total + off + tl) * f]
                        .copy_from_slice(&v.data()[ci * tl * f..(ci + 1) * tl * f]);
                    off += tl;
                }
            }
            (Tensor::from_vec(out, &[c, total, f]).unwrap(), c, f, lens)
        });
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let total: usize = lens.iter().sum();
                let mut grads = Vec::with_capacity(lens.len());
                let mut off = 0;
                for &tl in &lens {
                    let mut gv = vec![0.0; c * tl * f];
                    for ci in 0..c {
                        gv[ci * tl * f..(ci + 1) * tl * f].copy_from_slice(
                            &g.data()[(ci * total + off) * f..(ci * total + off + tl) * f],
                        );
                    }
                    grads.push(Tensor::from_vec(gv, &[c, tl, f]).unwrap());
                    off += tl;
                }
                grads
            })),
        )
    }

    /// `[t, f, c] -> [c, t, f]` (between per-step matrix layout and conv layout).
    pub fn permute_tfc_to_ctf(&self, a: Var) -> Var {
        let (value, t, f, c) = self.with_values(&[a], |v| {
            let s = v[0].shape();
            assert!(s.len() == 3, "permute_tfc_to_ctf: {s:?}");
            let (t, f, c) = (s[0], s[1], s[2]);
            let mut out = vec![0.0; c * t * f];
            for ti in 0..t {
                for fi in 0..f {
                    for ci in 0..c {
                        out[(ci * t + ti) * f + fi] = v[0].data()[(ti * f + fi) * c + ci];
                    }
                }
            }
            (Tensor::from_vec(out, &[c, t, f]).unwrap(), t, f, c)
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut gv = vec![0.0; t * f * c];
                for ti in 0..t {
                    for fi in 0..f {
                        for ci in 0..c {
                            gv[(ti * f + fi) * c + ci] = g.data()[(ci * t + ti) * f + fi];
                        }
                    }
                }
                vec![Tensor::from_vec(gv, &[t, f, c]).unwrap()]
            })),
        )
    }

    /// `[c, t, f] -> [t, f, c]`, inverse of [`Tape::permute_tfc_to_ctf`].
    pub fn permute_ctf_to_tfc(&self, a: Var) -> Var {
        let (value, c, t, f) = self.with_values(&[a], |v| {
            let s = v[0].shape();
            assert!(s.len() == 3, "permute_ctf_to_tfc: {s:?}");
            let (c, t, f) = (s[0], s[1], s[2]);
            let mut out = vec![0.0; t * f * c];
            for ci in 0..c {
                for ti in 0..t {
                    for fi in 0..f {
                        out[(ti * f + fi) * c + ci] = v[0].data()[(ci * t + ti) * f + fi];
                    }
                }
            }
            (Tensor::from_vec(out, &[t, f, c]).unwrap(), c, t, f)
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut gv = vec![0.0; c * t * f];
                for ci in 0..c {
                    for ti in 0..t {
                        for fi in 0..f {
                            gv[(ci * t + ti) * f + fi] = g.data()[(ti * f + fi) * c + ci];
                        }
                    }
                }
                vec![Tensor::from_vec(gv, &[c, t, f]).unwrap()]
            })),
        )
    }

    /// Shift rows of `[t, n]` along time: `out[k] = a[k + offset]`, zeros
    /// where the source index falls outside. `offset > 0` pulls future rows
    /// earlier (lookahead), `offset < 0` delays.
    pub fn shift_rows(&self, a: Var, offset: isize) -> Var {
        let (value, t, n) = self.with_values(&[a], |v| {
            let s = v[0].shape();
            assert!(s.len() == 2, "shift_rows: {s:?}");
            let (t, n) = (s[0], s[1]);
            let mut out = vec![0.0; t * n];
            for k in 0..t {
                let src = k as isize + offset;
                if src >= 0 && (src as usize) < t {
                    let src = src as usize;
                    out[k * n..(k + 1) * n].copy_from_slice(&v[0].data()[src * n..(src + 1) * n]);
                }
            }
            (Tensor::from_vec(out, s).unwrap(), t, n)
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                // Adjoint of a shift is the opposite shift.
                let mut gv = vec![0.0; t * n];
                for k in 0..t {
                    let src = k as isize + offset;
                    if src >= 0 && (src as usize) < t {
                        let src = src as usize;
                        for j in 0..n {
                            gv[src * n + j] += g.data()[k * n + j];
                        }
                    }
                }
                vec![Tensor::from_vec(gv, &[t, n]).unwrap()]
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;

    #[test]
    fn slice_and_concat_are_inverse() {
        let tape = Tape::new();
        let x = tape.input(
            Tensor::from_vec((0..12).map(|i| i as f64).collect(), &[3, 4]).unwrap(),
        );
        let left = tape.slice_cols(x, 0, 1);
        let right = tape.slice_cols(x, 1, 4);
        let back = tape.concat_cols(&[left, right]);
        assert_eq!(tape.value(back).data(), tape.value(x).data());
    }

    #[test]
    fn shift_rows_moves_time() {
        let tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap());
        let ahead = tape.shift_rows(x, 1);
        assert_eq!(tape.value(ahead).data(), &[3.0, 4.0, 5.0, 6.0, 0.0, 0.0]);
        let behind = tape.shift_rows(x, -2);
        assert_eq!(tape.value(behind).data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn stack_and_index_round_trip() {
        let tape = Tape::new();
        let a = tape.input(Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap());
        let b = tape.input(Tensor::from_vec(vec![3.0, 4.0], &[2]).unwrap());
        let s = tape.stack_new_axis(&[a, b]);
        assert_eq!(tape.shape_of(s), vec![2, 2]);
        let back = tape.index_axis0(s, 1);
        assert_eq!(tape.value(back).data(), &[3.0, 4.0]);
    }

    #[test]
    fn shape_op_gradients_check() {
        let mut rng = crate::testutil::rng(31);
        let x = Tensor::from_vec(crate::testutil::noise(&mut rng, 12), &[3, 4]).unwrap();
        check_gradients("reshape", &[x.clone()], |t, v| {
            let y = t.reshape(v[0], &[4, 3]);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
        check_gradients("slice_cols", &[x.clone()], |t, v| {
            let y = t.slice_cols(v[0], 1, 3);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
        check_gradients("shift_rows", &[x.clone()], |t, v| {
            let y = t.shift_rows(v[0], 1);
            let z = t.shift_rows(v[0], -1);
            let m = t.mul(y, z);
            t.sum(m)
        });
        check_gradients("index_axis0", &[x.clone()], |t, v| {
            let y = t.index_axis0(v[0], 2);
            let sq = t.mul(y, y);
            t.sum(sq)
        });

        let y2 = Tensor::from_vec(crate::testutil::noise(&mut rng, 6), &[3, 2]).unwrap();
        check_gradients("concat_cols", &[x.clone(), y2.clone()], |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let sq = t.mul(c, c);
            t.sum(sq)
        });
        check_gradients("stack_new_axis", &[y2.clone(), y2], |t, v| {
            let s = t.stack_new_axis(&[v[0], v[1]]);
            let sq = t.mul(s, s);
            t.mean(sq)
        });
    }

    // [TRIVIAL] Row slice/concat round-trips by construction.
    #[test]
    fn slice_and_concat_rows_are_inverse() {
        let tape = Tape::new();
        let x = tape.input(Tensor::from_vec((0..12).map(f64::from).collect(), &[4, 3]).unwrap());
        let top = tape.slice_rows(x, 0, 1);
        let rest = tape.slice_rows(x, 1, 4);
        assert_eq!(tape.value(top).data(), &[0.0, 1.0, 2.0]);
        let back = tape.concat_rows(&[top, rest]);
        assert_eq!(tape.value(back).data(), tape.value(x).data());
        assert_eq!(tape.shape_of(back), vec![4, 3]);
    }

    // [DERIVED] Time slice of a [c, t, f] tensor picks the same numbers as
    // manual indexing; concat_time restores the original.
    #[test]
    fn slice_and_concat_time_match_manual_indexing() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.input(Tensor::from_vec(data.clone(), &[2, 4, 3]).unwrap());
        let mid = tape.slice_time(x, 1, 3);
        let v = tape.value(mid);
        assert_eq!(v.shape(), &[2, 2, 3]);
        for ci in 0..2 {
            for ti in 0..2 {
                for fi in 0..3 {
                    assert_eq!(v.data()[(ci * 2 + ti) * 3 + fi], data[(ci * 4 + ti + 1) * 3 + fi]);
                }
            }
        }
        let head = tape.slice_time(x, 0, 1);
        let tail = tape.slice_time(x, 3, 4);
        let back = tape.concat_time(&[head, mid, tail]);
        assert_eq!(tape.value(back).data(), data.as_slice());
    }

    // [DERIVED] The two fixed permutes are mutually inverse and match
    // elementwise index arithmetic.
    #[test]
    fn permutes_are_inverse_and_index_correct() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..30).map(f64::from).collect();
        let ctf = tape.input(Tensor::from_vec(data.clone(), &[2, 3, 5]).unwrap());
        let tfc = tape.permute_ctf_to_tfc(ctf);
        let v = tape.value(tfc);
        assert_eq!(v.shape(), &[3, 5, 2]);
        for ci in 0..2 {
            for ti in 0..3 {
                for fi in 0..5 {
                    assert_eq!(v.data()[(ti * 5 + fi) * 2 + ci], data[(ci * 3 + ti) * 5 + fi]);
                }
            }
        }
        let back = tape.permute_tfc_to_ctf(tfc);
        assert_eq!(tape.value(back).data(), data.as_slice());
    }

    #[test]
    fn new_shape_op_gradients_check() {
        let mut rng = crate::testutil::rng(37);
        let x = Tensor::from_vec(crate::testutil::noise(&mut rng, 12), &[4, 3]).unwrap();
        check_gradients("slice_rows", &[x.clone()], |t, v| {
            let y = t.slice_rows(v[0], 1, 3);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
        let y2 = Tensor::from_vec(crate::testutil::noise(&mut rng, 6), &[2, 3]).unwrap();
        check_gradients("concat_rows", &[x.clone(), y2], |t, v| {
            let c = t.concat_rows(&[v[0], v[1]]);
            let sq = t.mul(c, c);
            t.sum(sq)
        });
        let x3 = Tensor::from_vec(crate::testutil::noise(&mut rng, 24), &[2, 4, 3]).unwrap();
        check_gradients("slice_time", &[x3.clone()], |t, v| {
            let y = t.slice_time(v[0], 1, 4);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
        let h3 = Tensor::from_vec(crate::testutil::noise(&mut rng, 6), &[2, 1, 3]).unwrap();
        check_gradients("concat_time", &[x3.clone(), h3], |t, v| {
            let c = t.concat_time(&[v[1], v[0]]);
            let sq = t.mul(c, c);
            t.sum(sq)
        });
        check_gradients("permute_ctf_to_tfc", &[x3.clone()], |t, v| {
            let y = t.permute_ctf_to_tfc(v[0]);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
        check_gradients("permute_tfc_to_ctf", &[x3], |t, v| {
            let y = t.permute_tfc_to_ctf(v[0]);
            let sq = t.mul(y, y);
            t.sum(sq)
        });
    }
}
