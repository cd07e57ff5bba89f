//! Weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::Tensor;

/// Uniform in `[-bound, bound]`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(data, shape).unwrap()
}

/// Kaiming-uniform for rectifier-family activations:
/// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    assert!(fan_in > 0, "kaiming_uniform: zero fan_in");
    uniform(rng, shape, (6.0 / fan_in as f64).sqrt())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0,1] avoids ln(0).
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gaussian-then-Gram-Schmidt orthogonal init for recurrent weights.
/// For `rows <= cols` the rows come out orthonormal; otherwise the columns do.
pub fn orthogonal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };

    // Modified Gram-Schmidt on the rows of an r x c Gaussian matrix.
    let mut m: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..c).map(|_| standard_normal(rng)).collect())
        .collect();
    for i in 0..r {
        for j in 0..i {
            let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
            for k in 0..c {
                m[i][k] -= dot * m[j][k];
            }
        }
        let norm: f64 = m[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        // A Gaussian row is almost surely independent; fall back to a basis
        // vector if degeneracy ever occurs.
        if norm < 1e-12 {
            for k in 0..c {
                m[i][k] = if k == i % c { 1.0 } else { 0.0 };
            }
        } else {
            for k in 0..c {
                m[i][k] /= norm;
            }
        }
    }

    let mut data = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            data[i * cols + j] = if transpose { m[j][i] } else { m[i][j] };
        }
    }
    Tensor::from_vec(data, &[rows, cols]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kaiming_bound_scales_with_fan_in() {
        let mut rng = crate::testutil::rng(71);
        let t = kaiming_uniform(&mut rng, &[100, 24], 24);
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(t.data().iter().all(|&x| x.abs() <= bound));
        // Values actually spread out (not collapsed near zero).
        let spread = t.data().iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(spread > bound * 0.8);
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = crate::testutil::rng(72);
        let t = orthogonal(&mut rng, 6, 6);
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = (0..6)
                    .map(|k| t.data()[i * 6 + k] * t.data()[j * 6 + k])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "rows {i},{j}: {dot}");
            }
        }
    }

    #[test]
    fn orthogonal_tall_matrix_has_orthonormal_columns() {
        let mut rng = crate::testutil::rng(73);
        let (rows, cols) = (8, 3);
        let t = orthogonal(&mut rng, rows, cols);
        for i in 0..cols {
            for j in 0..cols {
                let dot: f64 = (0..rows)
                    .map(|k| t.data()[k * cols + i] * t.data()[k * cols + j])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "cols {i},{j}: {dot}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = kaiming_uniform(&mut crate::testutil::rng(5), &[4, 4], 4);
        let b = kaiming_uniform(&mut crate::testutil::rng(5), &[4, 4], 4);
        let c = kaiming_uniform(&mut crate::testutil::rng(6), &[4, 4], 4);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }
}
