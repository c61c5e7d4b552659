//! Principal component analysis with a deterministic sign convention.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted PCA: centering vector, orthonormal component rows and the
/// variance captured by each component. An optional per-column scale is
/// applied between centering and projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub center: Vec<f64>,
    /// d rows of length center.len(), orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Nonincreasing, nonnegative.
    pub explained_variance: Vec<f64>,
    /// Per-column inverse-standard-deviation factors, when standardizing.
    pub scale: Option<Vec<f64>>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.center.len()
    }

    /// Project one row onto the components: components . ((x - center) * scale).
    pub fn project_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.center.len() {
            return Err(Error::InvalidParam(format!(
                "row has {} columns, model expects {}",
                row.len(),
                self.center.len()
            )));
        }
        let centered: Vec<f64> = match &self.scale {
            None => row.iter().zip(&self.center).map(|(x, c)| x - c).collect(),
            Some(scale) => row
                .iter()
                .zip(&self.center)
                .zip(scale)
                .map(|((x, c), s)| (x - c) * s)
                .collect(),
        };
        Ok(self
            .components
            .iter()
            .map(|comp| comp.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Project an n x input_dim row-major matrix; returns n x d row-major.
    pub fn project(&self, rows: &[f64], n: usize) -> Result<Vec<f64>> {
        if rows.len() != n * self.center.len() {
            return Err(Error::InvalidParam("matrix shape mismatch".into()));
        }
        let mut out = Vec::with_capacity(n * self.dim());
        for i in 0..n {
            out.extend(self.project_row(&rows[i * self.center.len()..(i + 1) * self.center.len()])?);
        }
        Ok(out)
    }
}

/// Centered PCA without the sign convention: top-k eigenpairs of the sample
/// covariance of an n x p row-major matrix. Uses the covariance eigenproblem
/// when p <= n and the Gram-matrix route otherwise.
pub(crate) fn pca_eigen(rows: &[f64], n: usize, p: usize, k: usize) -> Result<PcaModel> {
    if n < 2 {
        return Err(Error::InvalidParam("PCA needs at least 2 rows".into()));
    }
    let mut center = vec![0.0f64; p];
    for i in 0..n {
        for j in 0..p {
            center[j] += rows[i * p + j];
        }
    }
    for c in center.iter_mut() {
        *c /= n as f64;
    }
    // centered matrix, n x p column-major for nalgebra
    let xc = DMatrix::<f64>::from_fn(n, p, |i, j| rows[i * p + j] - center[j]);
    let denom = (n - 1) as f64;

    let (mut values, mut vectors): (Vec<f64>, Vec<Vec<f64>>) = if p <= n {
        let cov = xc.transpose() * &xc / denom;
        let se = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
        let values = order.iter().map(|&i| se.eigenvalues[i].max(0.0)).collect();
        let vectors = order
            .iter()
            .map(|&i| se.eigenvectors.column(i).iter().copied().collect())
            .collect();
        (values, vectors)
    } else {
        let gram = &xc * xc.transpose();
        let se = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
        let top = se.eigenvalues[order[0]].max(0.0);
        let mut values = Vec::new();
        let mut vectors = Vec::new();
        for &i in &order {
            let g = se.eigenvalues[i];
            if g <= top * 1e-12 || g <= 0.0 {
                break;
            }
            let u = se.eigenvectors.column(i);
            let v = xc.transpose() * u / g.sqrt();
            values.push(g / denom);
            vectors.push(v.iter().copied().collect());
        }
        (values, vectors)
    };

    if k > vectors.len() {
        return Err(Error::InvalidParam(format!(
            "requested {k} components but the data supports only {}",
            vectors.len()
        )));
    }
    values.truncate(k);
    vectors.truncate(k);
    Ok(PcaModel {
        center,
        components: vectors,
        explained_variance: values,
        scale: None,
    })
}

/// Flip each component so its largest-magnitude entry is positive; ties go
/// to the first such entry.
pub(crate) fn fix_signs(model: &mut PcaModel) {
    for comp in &mut model.components {
        let mut best = 0usize;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[best].abs() {
                best = i;
            }
        }
        if comp[best] < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Fit PCA with `d` components on an n x p row-major matrix: center equals
/// the column means, components are the leading principal directions with
/// the deterministic sign convention.
pub fn fit_pca(rows: &[f64], n: usize, p: usize, d: usize) -> Result<PcaModel> {
    if n < 2 {
        return Err(Error::InvalidParam("PCA needs at least 2 rows".into()));
    }
    if d == 0 || d > (n - 1).min(p) {
        return Err(Error::InvalidParam(format!(
            "PCA dimension {d} outside 1..={}",
            (n - 1).min(p)
        )));
    }
    let mut model = pca_eigen(rows, n, p, d)?;
    fix_signs(&mut model);
    Ok(model)
}

/// Fit PCA on per-column standardized data; the scale vector is stored in
/// the model and applied on projection. Zero-variance columns are passed
/// through unscaled.
pub fn fit_pca_standardized(rows: &[f64], n: usize, p: usize, d: usize) -> Result<PcaModel> {
    if n < 2 {
        return Err(Error::InvalidParam("PCA needs at least 2 rows".into()));
    }
    let (scaled, _center, inv_scale) = standardize_rows(rows, n, p);
    let mut model = fit_pca(&scaled, n, p, d)?;
    // the centering of the scaled data is ~0; express center in raw units
    let mut raw_center = vec![0.0f64; p];
    for i in 0..n {
        for j in 0..p {
            raw_center[j] += rows[i * p + j];
        }
    }
    for c in raw_center.iter_mut() {
        *c /= n as f64;
    }
    model.center = raw_center;
    model.scale = Some(inv_scale);
    Ok(model)
}

/// (scaled rows, column means, inverse scales). Scaled rows are centered and
/// divided by the sample standard deviation per column.
pub(crate) fn standardize_rows(rows: &[f64], n: usize, p: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut center = vec![0.0f64; p];
    for i in 0..n {
        for j in 0..p {
            center[j] += rows[i * p + j];
        }
    }
    for c in center.iter_mut() {
        *c /= n as f64;
    }
    let mut var = vec![0.0f64; p];
    for i in 0..n {
        for j in 0..p {
            let d = rows[i * p + j] - center[j];
            var[j] += d * d;
        }
    }
    let denom = (n.max(2) - 1) as f64;
    let inv_scale: Vec<f64> = var
        .iter()
        .map(|&v| {
            let sd = (v / denom).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = vec![0.0f64; n * p];
    for i in 0..n {
        for j in 0..p {
            scaled[i * p + j] = (rows[i * p + j] - center[j]) * inv_scale[j];
        }
    }
    (scaled, center, inv_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn total_variance(rows: &[f64], n: usize, p: usize) -> f64 {
        let mut center = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                center[j] += rows[i * p + j];
            }
        }
        for c in center.iter_mut() {
            *c /= n as f64;
        }
        let mut tv = 0.0;
        for i in 0..n {
            for j in 0..p {
                let d = rows[i * p + j] - center[j];
                tv += d * d;
            }
        }
        tv / (n - 1) as f64
    }

    #[test]
    fn rank_one_line_is_recovered() {
        // points on the line t * (3, 4) / 5
        let ts = [-2.0, -1.0, 0.5, 1.0, 3.0];
        let rows: Vec<f64> = ts.iter().flat_map(|t| [t * 0.6, t * 0.8]).collect();
        let model = fit_pca(&rows, 5, 2, 1).unwrap();
        assert_eq!(model.explained_variance.len(), 1);
        assert!(model.explained_variance[0] > 0.0);
        // project then reconstruct reproduces the data
        for i in 0..5 {
            let z = model.project_row(&rows[i * 2..i * 2 + 2]).unwrap();
            let rec = [
                model.center[0] + z[0] * model.components[0][0],
                model.center[1] + z[0] * model.components[0][1],
            ];
            assert!((rec[0] - rows[i * 2]).abs() < 1e-8);
            assert!((rec[1] - rows[i * 2 + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn full_dimension_captures_total_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, p) = (12, 5);
        let rows: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let model = fit_pca(&rows, n, p, p.min(n - 1)).unwrap();
        let sum: f64 = model.explained_variance.iter().sum();
        assert!((sum - total_variance(&rows, n, p)).abs() < 1e-8);
    }

    /// Cyclic Jacobi eigensolver, independent of nalgebra.
    pub(crate) fn jacobi_eigen(mat: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut a = mat.to_vec();
        let mut v = vec![0.0f64; d * d];
        for i in 0..d {
            v[i * d + i] = 1.0;
        }
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[i * d + j] * a[i * d + j];
                }
            }
            if off < 1e-24 {
                break;
            }
            for pp in 0..d {
                for qq in (pp + 1)..d {
                    let apq = a[pp * d + qq];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = a[pp * d + pp];
                    let aqq = a[qq * d + qq];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k * d + pp];
                        let akq = a[k * d + qq];
                        a[k * d + pp] = c * akp - s * akq;
                        a[k * d + qq] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[pp * d + k];
                        let aqk = a[qq * d + k];
                        a[pp * d + k] = c * apk - s * aqk;
                        a[qq * d + k] = s * apk + c * aqk;
                    }
                    for k in 0..d {
                        let vkp = v[k * d + pp];
                        let vkq = v[k * d + qq];
                        v[k * d + pp] = c * vkp - s * vkq;
                        v[k * d + qq] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
            .map(|i| (a[i * d + i], (0..d).map(|k| v[k * d + i]).collect()))
            .collect();
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
        (
            pairs.iter().map(|p| p.0).collect(),
            pairs.into_iter().map(|p| p.1).collect(),
        )
    }

    #[test]
    fn matches_jacobi_covariance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, p) = (20, 7);
        let rows: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d = 4;
        let model = fit_pca(&rows, n, p, d).unwrap();

        // independent oracle: covariance by hand + Jacobi rotations
        let mut center = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                center[j] += rows[i * p + j];
            }
        }
        for c in center.iter_mut() {
            *c /= n as f64;
        }
        let mut cov = vec![0.0f64; p * p];
        for i in 0..n {
            for a in 0..p {
                for b in 0..p {
                    cov[a * p + b] +=
                        (rows[i * p + a] - center[a]) * (rows[i * p + b] - center[b]);
                }
            }
        }
        for v in cov.iter_mut() {
            *v /= (n - 1) as f64;
        }
        let (vals, vecs) = jacobi_eigen(&cov, p);
        for k in 0..d {
            assert!((model.explained_variance[k] - vals[k]).abs() < 1e-9);
            let cosine: f64 = model.components[k]
                .iter()
                .zip(&vecs[k])
                .map(|(a, b)| a * b)
                .sum();
            assert!(cosine.abs() > 1.0 - 1e-8, "component {k}: |cos| = {}", cosine.abs());
        }
    }

    #[test]
    fn gram_route_agrees_with_covariance_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, p) = (9, 20); // p > n forces the Gram route
        let rows: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let model = fit_pca(&rows, n, p, 5).unwrap();
        // orthonormality
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = model.components[i]
                    .iter()
                    .zip(&model.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
        }
        // variances nonincreasing and projections reproduce variances
        for k in 1..5 {
            assert!(model.explained_variance[k] <= model.explained_variance[k - 1] + 1e-12);
        }
        let proj = model.project(&rows, n).unwrap();
        for k in 0..5 {
            let var: f64 = (0..n).map(|i| proj[i * 5 + k] * proj[i * 5 + k]).sum::<f64>()
                / (n - 1) as f64;
            assert!((var - model.explained_variance[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, p) = (10, 4);
        let rows: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let model = fit_pca(&rows, n, p, 2).unwrap();
        let z = model.project_row(&model.center.clone()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn projection_contracts_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (n, p) = (15, 6);
        let rows: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let model = fit_pca(&rows, n, p, 3).unwrap();
        for i in 0..n {
            let row = &rows[i * p..(i + 1) * p];
            let centered_norm: f64 = row
                .iter()
                .zip(&model.center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt();
            let z = model.project_row(row).unwrap();
            let proj_norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(proj_norm <= centered_norm + 1e-10);
        }
    }

    #[test]
    fn identity_like_pca_preserves_axes() {
        let model = PcaModel {
            center: vec![0.0, 0.0, 0.0],
            components: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            explained_variance: vec![1.0, 1.0],
            scale: None,
        };
        let z = model.project_row(&[2.5, -3.5, 9.0]).unwrap();
        assert_eq!(z, vec![2.5, -3.5]);
    }

    #[test]
    fn d_out_of_range_errors() {
        let rows = vec![0.0, 1.0, 2.0, 3.0];
        assert!(fit_pca(&rows, 2, 2, 2).is_err()); // d > n-1
        assert!(fit_pca(&rows, 2, 2, 0).is_err());
        assert!(fit_pca(&rows[..2], 1, 2, 1).is_err()); // fewer than 2 rows
    }

    #[test]
    fn sign_convention_is_applied() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (n, p) = (14, 5);
        let rows: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let model = fit_pca(&rows, n, p, 3).unwrap();
        for comp in &model.components {
            let max = comp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = comp.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(max >= -min, "largest-magnitude entry must be positive");
        }
    }

    #[test]
    fn standardized_fit_scales_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, p) = (30, 3);
        let mut rows = vec![0.0f64; n * p];
        for i in 0..n {
            rows[i * p] = rng.gen_range(-1.0..1.0) * 100.0;
            rows[i * p + 1] = rng.gen_range(-1.0..1.0) * 0.01;
            rows[i * p + 2] = rng.gen_range(-1.0..1.0);
        }
        let model = fit_pca_standardized(&rows, n, p, 2).unwrap();
        assert!(model.scale.is_some());
        // in standardized space no column dominates: the leading variance is
        // bounded by p
        assert!(model.explained_variance[0] <= p as f64 + 1e-9);
    }
}
