//! Two-class linear discriminant analysis with covariance shrinkage.

use serde::{Deserialize, Serialize};

use super::dense::{cholesky_in_place, cholesky_solve, dot};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priors {
    Empirical,
    Equal,
}

impl Default for Priors {
    fn default() -> Self {
        Priors::Empirical
    }
}

/// Fitted LDA: class means, shrunk pooled covariance and log priors. The
/// posterior is the two-class softmax of the Gaussian discriminants with a
/// shared covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub class_means: [Vec<f64>; 2],
    /// Row-major d x d, after shrinkage.
    pub pooled_covariance: Vec<f64>,
    pub log_priors: [f64; 2],
    pub shrinkage: f64,
    /// sigma^-1 mu_c, cached from the fit.
    #[serde(skip)]
    alpha: Option<[Vec<f64>; 2]>,
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.class_means[0].len()
    }

    fn alphas(&self) -> Result<[Vec<f64>; 2]> {
        if let Some(a) = &self.alpha {
            return Ok(a.clone());
        }
        let d = self.dim();
        let mut chol = self.pooled_covariance.clone();
        cholesky_in_place(&mut chol, d)?;
        let mut a0 = self.class_means[0].clone();
        let mut a1 = self.class_means[1].clone();
        cholesky_solve(&chol, d, &mut a0);
        cholesky_solve(&chol, d, &mut a1);
        Ok([a0, a1])
    }

    /// Rebuild the cached solves (after deserialization).
    pub fn prepare(&mut self) -> Result<()> {
        self.alpha = Some(self.alphas()?);
        Ok(())
    }

    /// Difference of the two linear discriminants, delta_1(x) - delta_0(x);
    /// the posterior for class 1 is the logistic of this value.
    pub fn discriminant(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidParam(format!(
                "input has {} dims, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let [a0, a1] = self.alphas()?;
        let d1 = dot(&a1, x) - 0.5 * dot(&a1, &self.class_means[1]) + self.log_priors[1];
        let d0 = dot(&a0, x) - 0.5 * dot(&a0, &self.class_means[0]) + self.log_priors[0];
        Ok(d1 - d0)
    }

    /// Posterior probability of class 1.
    pub fn posterior(&self, x: &[f64]) -> Result<f64> {
        let z = self.discriminant(x)?;
        Ok(logistic(z))
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fit two-class LDA on an n x d row-major matrix. The pooled within-class
/// covariance is shrunk toward a trace-scaled identity:
/// sigma = (1 - lambda) S + lambda (tr S / d) I.
pub fn fit_lda(
    rows: &[f64],
    n: usize,
    d: usize,
    labels: &[u8],
    shrinkage: f64,
    priors: Priors,
) -> Result<LdaModel> {
    if labels.len() != n || rows.len() != n * d {
        return Err(Error::InvalidParam("matrix/label shape mismatch".into()));
    }
    if d == 0 {
        return Err(Error::InvalidParam("LDA needs at least one dimension".into()));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidParam("shrinkage must be in [0, 1]".into()));
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }

    let mut means = [vec![0.0f64; d], vec![0.0f64; d]];
    for (i, &l) in labels.iter().enumerate() {
        let m = &mut means[l as usize];
        for j in 0..d {
            m[j] += rows[i * d + j];
        }
    }
    for j in 0..d {
        means[0][j] /= n0 as f64;
        means[1][j] /= n1 as f64;
    }

    let mut scatter = vec![0.0f64; d * d];
    for (i, &l) in labels.iter().enumerate() {
        let m = &means[l as usize];
        for a in 0..d {
            let da = rows[i * d + a] - m[a];
            for b in a..d {
                scatter[a * d + b] += da * (rows[i * d + b] - m[b]);
            }
        }
    }
    let dof = n.saturating_sub(2);
    if dof > 0 {
        for v in scatter.iter_mut() {
            *v /= dof as f64;
        }
    }
    // mirror the upper triangle
    for a in 0..d {
        for b in (a + 1)..d {
            scatter[b * d + a] = scatter[a * d + b];
        }
    }

    let trace: f64 = (0..d).map(|i| scatter[i * d + i]).sum();
    let target = if trace > 0.0 { trace / d as f64 } else { 1.0 };
    let mut cov = scatter;
    for v in cov.iter_mut() {
        *v *= 1.0 - shrinkage;
    }
    for i in 0..d {
        cov[i * d + i] += shrinkage * target;
    }

    let log_priors = match priors {
        Priors::Empirical => [(n0 as f64 / n as f64).ln(), (n1 as f64 / n as f64).ln()],
        Priors::Equal => [0.5f64.ln(), 0.5f64.ln()],
    };

    let mut model = LdaModel {
        class_means: means,
        pooled_covariance: cov,
        log_priors,
        shrinkage,
        alpha: None,
    };
    model.prepare()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_gaussians(
        rng: &mut ChaCha8Rng,
        n_per_class: usize,
        d: usize,
        sep: f64,
        sigma: f64,
    ) -> (Vec<f64>, Vec<u8>) {
        let mut rows = Vec::with_capacity(2 * n_per_class * d);
        let mut labels = Vec::with_capacity(2 * n_per_class);
        for c in 0..2u8 {
            let shift = if c == 1 { sep } else { 0.0 };
            for _ in 0..n_per_class {
                for j in 0..d {
                    let g: f64 = {
                        // Box-Muller
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    };
                    rows.push(g * sigma + if j == 0 { shift } else { 0.0 });
                }
                labels.push(c);
            }
        }
        (rows, labels)
    }

    #[test]
    fn symmetric_1d_classes_give_half_at_midpoint() {
        let rows = vec![-1.5, -1.0, -0.5, 0.5, 1.0, 1.5];
        let labels = vec![0, 0, 0, 1, 1, 1];
        let model = fit_lda(&rows, 6, 1, &labels, 0.1, Priors::Empirical).unwrap();
        let p = model.posterior(&[0.0]).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn well_separated_classes_classify_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = 0.5;
        let (rows, labels) = two_gaussians(&mut rng, 50, 2, 6.0 * sigma, sigma);
        let model = fit_lda(&rows, 100, 2, &labels, 0.1, Priors::Empirical).unwrap();
        let mut correct = 0;
        for i in 0..100 {
            let p = model.posterior(&rows[i * 2..i * 2 + 2]).unwrap();
            if (p > 0.5) == (labels[i] == 1) {
                correct += 1;
            }
        }
        assert_eq!(correct, 100);

        // independent density-ratio check at a few points: with equal
        // empirical covariances the model's posterior must match the
        // explicit two-Gaussian ratio computed from its own parameters
        for probe in [[0.1, 0.2], [1.4, -0.3], [3.0, 0.0]] {
            let quad = |m: &[f64]| -> f64 {
                // (x-m)^T cov^{-1} (x-m) via the 2x2 inverse
                let c = &model.pooled_covariance;
                let det = c[0] * c[3] - c[1] * c[2];
                let dx = [probe[0] - m[0], probe[1] - m[1]];
                (c[3] * dx[0] * dx[0] - 2.0 * c[1] * dx[0] * dx[1] + c[0] * dx[1] * dx[1]) / det
            };
            let log_ratio = model.log_priors[1] - model.log_priors[0]
                + 0.5 * (quad(&model.class_means[0]) - quad(&model.class_means[1]));
            let expect = logistic(log_ratio);
            let got = model.posterior(&probe).unwrap();
            assert!((got - expect).abs() < 1e-9, "probe {probe:?}: {got} vs {expect}");
        }
    }

    #[test]
    fn prior_shift_moves_the_boundary_away_from_class_one() {
        let rows = vec![-2.0, -1.0, 1.0, 2.0];
        let labels = vec![0, 0, 1, 1];
        let balanced = fit_lda(&rows, 4, 1, &labels, 0.0, Priors::Equal).unwrap();
        // doubling the class-1 prior: tweak log priors directly
        let mut tilted = balanced.clone();
        tilted.log_priors = [(1.0f64 / 3.0).ln(), (2.0f64 / 3.0).ln()];
        tilted.prepare().unwrap();

        let boundary = |m: &LdaModel| -> f64 {
            // bisect the point where posterior crosses 0.5
            let mut lo = -5.0;
            let mut hi = 5.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if m.posterior(&[mid]).unwrap() > 0.5 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let b0 = boundary(&balanced);
        let b1 = boundary(&tilted);
        assert!((b0 - 0.0).abs() < 1e-6);
        // class-1 mean is at +1.5; the boundary must move away from it
        assert!(b1 < b0);
    }

    #[test]
    fn posterior_at_class_mean_is_confident() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, labels) = two_gaussians(&mut rng, 40, 3, 8.0, 1.0);
        let model = fit_lda(&rows, 80, 3, &labels, 0.05, Priors::Empirical).unwrap();
        let p1 = model.posterior(&model.class_means[1].clone()).unwrap();
        assert!(p1 > 0.99, "posterior at class-1 mean: {p1}");
        // closed-form check: at the class-1 mean the log-ratio is
        // 0.5 * Mahalanobis(mu1, mu0) + prior offset
        let z = model.discriminant(&model.class_means[1].clone()).unwrap();
        let a = {
            let mut chol = model.pooled_covariance.clone();
            cholesky_in_place(&mut chol, 3).unwrap();
            let mut diff: Vec<f64> = (0..3)
                .map(|j| model.class_means[1][j] - model.class_means[0][j])
                .collect();
            cholesky_solve(&chol, 3, &mut diff);
            let maha: f64 = (0..3)
                .map(|j| diff[j] * (model.class_means[1][j] - model.class_means[0][j]))
                .sum();
            0.5 * maha + model.log_priors[1] - model.log_priors[0]
        };
        assert!((z - a).abs() < 1e-9);
    }

    #[test]
    fn posteriors_normalize() {
        let rows = vec![-1.0, 0.2, 1.0, 1.4, -0.6, 0.9];
        let labels = vec![0, 1, 1, 1, 0, 1];
        let model = fit_lda(&rows, 6, 1, &labels, 0.2, Priors::Empirical).unwrap();
        for x in [-2.0, -0.3, 0.0, 0.7, 5.0] {
            let p1 = model.posterior(&[x]).unwrap();
            let p0 = 1.0 - logistic(model.discriminant(&[x]).unwrap());
            assert!((p1 + p0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let rows = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            fit_lda(&rows, 3, 1, &[1, 1, 1], 0.1, Priors::Empirical),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn posterior_monotone_along_discriminant_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (rows, labels) = two_gaussians(&mut rng, 30, 2, 2.0, 1.0);
        let model = fit_lda(&rows, 60, 2, &labels, 0.1, Priors::Empirical).unwrap();
        // w = sigma^{-1} (mu1 - mu0)
        let mut chol = model.pooled_covariance.clone();
        cholesky_in_place(&mut chol, 2).unwrap();
        let mut w: Vec<f64> = (0..2)
            .map(|j| model.class_means[1][j] - model.class_means[0][j])
            .collect();
        cholesky_solve(&chol, 2, &mut w);
        let base = [0.3, -0.4];
        let mut prev = -f64::INFINITY;
        for step in 0..10 {
            let t = step as f64 * 0.5;
            let x = [base[0] + t * w[0], base[1] + t * w[1]];
            let p = model.posterior(&x).unwrap();
            assert!(p > prev, "posterior must strictly increase along w");
            prev = p;
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let rows = vec![-1.0, 1.0];
        let model = fit_lda(&rows, 2, 1, &[0, 1], 0.5, Priors::Empirical).unwrap();
        assert!(model.posterior(&[0.0, 0.0]).is_err());
    }
}
