//! Small dense helpers for the classifier hot loop: in-place Cholesky
//! factorization and triangular solves on flat row-major buffers.

use crate::error::{Error, Result};

/// Factor a symmetric positive-definite d x d matrix (row-major, lower
/// triangle read) into L with A = L L^T, overwriting the lower triangle.
pub fn cholesky_in_place(a: &mut [f64], d: usize) -> Result<()> {
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= a[i * d + k] * a[j * d + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::InvalidParam(
                        "covariance matrix is not positive definite".into(),
                    ));
                }
                a[i * d + i] = sum.sqrt();
            } else {
                a[i * d + j] = sum / a[j * d + j];
            }
        }
    }
    Ok(())
}

/// Solve L L^T x = b in place, with L from [`cholesky_in_place`].
pub fn cholesky_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * b[k];
        }
        b[i] = sum / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut sum = b[i];
        for k in (i + 1)..d {
            sum -= l[k * d + i] * b[k];
        }
        b[i] = sum / l[i * d + i];
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cholesky_solve_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..8usize {
            let x = DMatrix::<f64>::from_fn(d + 3, d, |_, _| rng.gen_range(-1.0..1.0));
            let a = x.transpose() * &x + DMatrix::identity(d, d) * 0.1;
            let b = DVector::<f64>::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));

            let mut flat: Vec<f64> = (0..d * d).map(|i| a[(i / d, i % d)]).collect();
            cholesky_in_place(&mut flat, d).unwrap();
            let mut sol: Vec<f64> = b.iter().copied().collect();
            cholesky_solve(&flat, d, &mut sol);

            let expect = a.clone().cholesky().unwrap().solve(&b);
            for i in 0..d {
                assert!((sol[i] - expect[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn non_positive_definite_rejected() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert!(cholesky_in_place(&mut a, 2).is_err());
    }
}
