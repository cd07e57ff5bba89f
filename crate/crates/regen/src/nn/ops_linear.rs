//! Dense, grouped, and constant-matrix linear ops.

use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

/// `a [m,k] * b [k,n] -> [m,n]`, all row-major.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a [m,k] * b^T where b is [n,k] -> [m,n]`.
fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T where a is [k,m], times b [k,n] -> [m,n]`.
fn matmul_at(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

impl Tape {
    /// `a [m,k] x b [k,n] -> [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (value, m, k, n) = self.with_values(&[a, b], |v| {
            let (sa, sb) = (v[0].shape(), v[1].shape());
            assert!(
                sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
                "matmul: {sa:?} x {sb:?}"
            );
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            (
                Tensor::from_vec(matmul_raw(v[0].data(), v[1].data(), m, k, n), &[m, n]).unwrap(),
                m,
                k,
                n,
            )
        });
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(move |g, _, p| {
                let ga = matmul_bt(g.data(), p[1].data(), m, n, k);
                let gb = matmul_at(p[0].data(), g.data(), m, k, n);
                vec![
                    Tensor::from_vec(ga, &[m, k]).unwrap(),
                    Tensor::from_vec(gb, &[k, n]).unwrap(),
                ]
            })),
        )
    }

    /// Affine map over the trailing axis: `x [t,in] -> x w^T + b`, with
    /// `w [out,in]`, `b [out]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let (value, t, n_in, n_out) = self.with_values(&[x, w, b], |v| {
            let (sx, sw, sb) = (v[0].shape(), v[1].shape(), v[2].shape());
            assert!(
                sx.len() == 2 && sw.len() == 2 && sx[1] == sw[1] && sb == [sw[0]],
                "linear: x {sx:?}, w {sw:?}, b {sb:?}"
            );
            let (t, n_in, n_out) = (sx[0], sx[1], sw[0]);
            let mut out = matmul_bt(v[0].data(), v[1].data(), t, n_in, n_out);
            for row in out.chunks_mut(n_out) {
                for (o, &bv) in row.iter_mut().zip(v[2].data()) {
                    *o += bv;
                }
            }
            (Tensor::from_vec(out, &[t, n_out]).unwrap(), t, n_in, n_out)
        });
        self.push(
            value,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, _, p| {
                let gx = matmul_raw(g.data(), p[1].data(), t, n_out, n_in);
                let gw = matmul_at(g.data(), p[0].data(), t, n_out, n_in);
                let mut gb = vec![0.0; n_out];
                for row in g.data().chunks(n_out) {
                    for (acc, &gv) in gb.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                vec![
                    Tensor::from_vec(gx, &[t, n_in]).unwrap(),
                    Tensor::from_vec(gw, &[n_out, n_in]).unwrap(),
                    Tensor::from_vec(gb, &[n_out]).unwrap(),
                ]
            })),
        )
    }

    /// Blockwise linear map: group `gr` of the input feeds only group `gr` of
    /// the output. `x [t, g*in_g]`, `w [g, out_g, in_g]`, `b [g*out_g]`.
    pub fn grouped_linear(&self, x: Var, w: Var, b: Var) -> Var {
        let (value, dims) = self.with_values(&[x, w, b], |v| {
            let (sx, sw, sb) = (v[0].shape(), v[1].shape(), v[2].shape());
            assert!(sw.len() == 3, "grouped_linear: w {sw:?}");
            let (g, out_g, in_g) = (sw[0], sw[1], sw[2]);
            assert!(
                sx.len() == 2 && sx[1] == g * in_g && sb == [g * out_g],
                "grouped_linear: x {sx:?}, w {sw:?}, b {sb:?}"
            );
            let t = sx[0];
            let mut out = vec![0.0; t * g * out_g];
            for ti in 0..t {
                let xrow = &v[0].data()[ti * g * in_g..(ti + 1) * g * in_g];
                let orow = &mut out[ti * g * out_g..(ti + 1) * g * out_g];
                for gr in 0..g {
                    let xg = &xrow[gr * in_g..(gr + 1) * in_g];
                    for o in 0..out_g {
                        let wrow = &v[1].data()[(gr * out_g + o) * in_g..(gr * out_g + o + 1) * in_g];
                        orow[gr * out_g + o] = v[2].data()[gr * out_g + o]
                            + wrow.iter().zip(xg).map(|(wv, xv)| wv * xv).sum::<f64>();
                    }
                }
            }
            (
                Tensor::from_vec(out, &[t, g * out_g]).unwrap(),
                (t, g, out_g, in_g),
            )
        });
        let (t, g, out_g, in_g) = dims;
        self.push(
            value,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |gout, _, p| {
                let mut gx = vec![0.0; t * g * in_g];
                let mut gw = vec![0.0; g * out_g * in_g];
                let mut gb = vec![0.0; g * out_g];
                for ti in 0..t {
                    let grow = &gout.data()[ti * g * out_g..(ti + 1) * g * out_g];
                    let xrow = &p[0].data()[ti * g * in_g..(ti + 1) * g * in_g];
                    for gr in 0..g {
                        for o in 0..out_g {
                            let gv = grow[gr * out_g + o];
                            if gv == 0.0 {
                                continue;
                            }
                            gb[gr * out_g + o] += gv;
                            let wrow =
                                &p[1].data()[(gr * out_g + o) * in_g..(gr * out_g + o + 1) * in_g];
                            let xg = &xrow[gr * in_g..(gr + 1) * in_g];
                            let gxg = &mut gx[ti * g * in_g + gr * in_g..];
                            for i in 0..in_g {
                                gxg[i] += gv * wrow[i];
                                gw[(gr * out_g + o) * in_g + i] += gv * xg[i];
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_vec(gx, &[t, g * in_g]).unwrap(),
                    Tensor::from_vec(gw, &[g, out_g, in_g]).unwrap(),
                    Tensor::from_vec(gb, &[g * out_g]).unwrap(),
                ]
            })),
        )
    }

    /// Multiply by a fixed (non-learned) matrix: `x [t,n] -> x m^T`, with
    /// `m [rows,n]` captured by value. Used to apply filterbanks inside loss
    /// graphs.
    pub fn apply_const_matrix(&self, x: Var, m: &Tensor) -> Var {
        assert_eq!(m.shape().len(), 2, "apply_const_matrix: m {:?}", m.shape());
        let (rows, n) = (m.shape()[0], m.shape()[1]);
        let value = self.with_values(&[x], |v| {
            let sx = v[0].shape();
            assert!(
                sx.len() == 2 && sx[1] == n,
                "apply_const_matrix: x {sx:?} vs m {:?}",
                m.shape()
            );
            let t = sx[0];
            Tensor::from_vec(matmul_bt(v[0].data(), m.data(), t, n, rows), &[t, rows]).unwrap()
        });
        let m = m.clone();
        self.push(
            value,
            vec![x.0],
            Some(Box::new(move |g, _, p| {
                let t = p[0].shape()[0];
                vec![Tensor::from_vec(matmul_raw(g.data(), m.data(), t, rows, n), &[t, n]).unwrap()]
            })),
        )
    }

    /// Scale each leading-axis slice of `v` by the matching entry of `s`.
    /// `v [r, ...]`, `s [r]`.
    pub fn rows_scale(&self, v: Var, s: Var) -> Var {
        let (value, r, cols) = self.with_values(&[v, s], |vals| {
            let (sv, ss) = (vals[0].shape(), vals[1].shape());
            assert!(
                !sv.is_empty() && ss == [sv[0]],
                "rows_scale: v {sv:?}, s {ss:?}"
            );
            let r = sv[0];
            let cols = vals[0].numel() / r;
            let mut out = vals[0].data().to_vec();
            for (row, &sc) in out.chunks_mut(cols).zip(vals[1].data()) {
                for x in row {
                    *x *= sc;
                }
            }
            (Tensor::from_vec(out, sv).unwrap(), r, cols)
        });
        self.push(
            value,
            vec![v.0, s.0],
            Some(Box::new(move |g, _, p| {
                let mut gv = vec![0.0; p[0].numel()];
                let mut gs = vec![0.0; r];
                for ri in 0..r {
                    let sc = p[1].data()[ri];
                    let grow = &g.data()[ri * cols..(ri + 1) * cols];
                    let vrow = &p[0].data()[ri * cols..(ri + 1) * cols];
                    let gvrow = &mut gv[ri * cols..(ri + 1) * cols];
                    let mut acc = 0.0;
                    for i in 0..cols {
                        gvrow[i] = sc * grow[i];
                        acc += grow[i] * vrow[i];
                    }
                    gs[ri] = acc;
                }
                vec![
                    Tensor::from_vec(gv, p[0].shape()).unwrap(),
                    Tensor::from_vec(gs, &[r]).unwrap(),
                ]
            })),
        )
    }

    /// Column-wise scaling: `x [t, n] * s [n]`, `s` broadcast over rows.
    pub fn scale_cols(&self, x: Var, s: Var) -> Var {
        let (value, t, n) = self.with_values(&[x, s], |vals| {
            let (sx, ss) = (vals[0].shape(), vals[1].shape());
            assert!(
                sx.len() == 2 && ss == [sx[1]],
                "scale_cols: x {sx:?}, s {ss:?}"
            );
            let (t, n) = (sx[0], sx[1]);
            let mut out = vals[0].data().to_vec();
            for row in out.chunks_mut(n) {
                for (xv, &sc) in row.iter_mut().zip(vals[1].data()) {
                    *xv *= sc;
                }
            }
            (Tensor::from_vec(out, sx).unwrap(), t, n)
        });
        self.push(
            value,
            vec![x.0, s.0],
            Some(Box::new(move |g, _, p| {
                let mut gx = vec![0.0; t * n];
                let mut gs = vec![0.0; n];
                for ti in 0..t {
                    for j in 0..n {
                        let gv = g.data()[ti * n + j];
                        gx[ti * n + j] = gv * p[1].data()[j];
                        gs[j] += gv * p[0].data()[ti * n + j];
                    }
                }
                vec![
                    Tensor::from_vec(gx, &[t, n]).unwrap(),
                    Tensor::from_vec(gs, &[n]).unwrap(),
                ]
            })),
        )
    }

    /// L2 norm of each leading-axis slice: `v [r, ...] -> [r]`.
    pub fn row_l2_norms(&self, v: Var) -> Var {
        let (value, cols) = self.with_values(&[v], |vals| {
            let sv = vals[0].shape();
            assert!(!sv.is_empty(), "row_l2_norms: scalar input");
            let r = sv[0];
            let cols = vals[0].numel() / r;
            let norms: Vec<f64> = vals[0]
                .data()
                .chunks(cols)
                .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            (Tensor::from_vec(norms, &[r]).unwrap(), cols)
        });
        self.push(
            value,
            vec![v.0],
            Some(Box::new(move |g, y, p| {
                let mut gv = p[0].data().to_vec();
                for (ri, row) in gv.chunks_mut(cols).enumerate() {
                    let norm = y.data()[ri];
                    let gr = g.data()[ri];
                    let f = if norm > 0.0 { gr / norm } else { 0.0 };
                    for x in row {
                        *x *= f;
                    }
                }
                vec![Tensor::from_vec(gv, p[0].shape()).unwrap()]
            })),
        )
    }
}
