//! Nested leave-one-out cross-validation: the inner loop selects the PCA
//! dimension by misclassification error, the outer loop scores each held-out
//! sample with a model refit on everything else.
//!
//! The hot path avoids refitting a dense PCA per fold: rows are expressed
//! once in the orthonormal basis of the full data's principal directions,
//! where the scatter matrix of any leave-one/two-out subset is diagonal
//! minus a rank-one/two correction. Top eigenpairs of that structured
//! operator come from a Lanczos iteration with O(n) matrix-vector products,
//! with a dense fallback when the residual check fails.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dense::{cholesky_in_place, cholesky_solve, dot};
use super::knn::knn_decision;
use super::lda::{logistic, Priors};
use super::pca::standardize_rows;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Lda { shrinkage: f64, priors: Priors },
    Knn { k: usize, l: usize },
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::Lda {
            shrinkage: 0.1,
            priors: Priors::Empirical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PcaStrategy {
    /// Pick the dimension minimizing leave-one-out misclassification error.
    CvError,
    /// Pick the smallest dimension whose eigenvalues capture the given
    /// fraction of the total variance.
    VarianceThreshold { fraction: f64 },
}

impl Default for PcaStrategy {
    fn default() -> Self {
        PcaStrategy::CvError
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    /// Cap on candidate PCA dimensions; None picks min(n-2, 60).
    pub d_max: Option<usize>,
    /// Use the largest feasible candidate range instead of the default cap.
    pub literal_d_max: bool,
    pub classifier: ClassifierSpec,
    pub strategy: PcaStrategy,
    /// Standardize columns per fold before PCA (slower reference path).
    pub standardize: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            d_max: None,
            literal_d_max: false,
            classifier: ClassifierSpec::default(),
            strategy: PcaStrategy::default(),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedCvResult {
    /// One posterior-style score per row, from the model fit without it.
    pub scores: Vec<f64>,
    /// Selected PCA dimension per outer fold.
    pub d_stars: Vec<usize>,
    /// Per outer fold, inner misclassification error per candidate dimension
    /// (empty under the variance-threshold strategy).
    pub cv_errors: Vec<Vec<f64>>,
    /// Rejection flags ((k,l)-NN only; always false for LDA).
    pub rejected: Vec<bool>,
    pub warnings: Vec<String>,
}

/// LOOCV result used for dimension selection on a full training set.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSelection {
    pub d_star: usize,
    pub cv_errors: Vec<f64>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// global coordinates
// ---------------------------------------------------------------------------

/// Rows expressed in the orthonormal basis of the full data's principal
/// directions; the scatter of all rows is diag(lambdas) and the coordinate
/// rows sum to zero.
struct GlobalCoords {
    /// n x r row-major.
    z: Vec<f64>,
    lambdas: Vec<f64>,
    r: usize,
    n: usize,
}

impl GlobalCoords {
    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.r..(i + 1) * self.r]
    }
}

fn global_coords(rows: &[f64], n: usize, p: usize) -> Result<GlobalCoords> {
    let mut center = vec![0.0f64; p];
    for i in 0..n {
        for j in 0..p {
            center[j] += rows[i * p + j];
        }
    }
    for c in center.iter_mut() {
        *c /= n as f64;
    }
    let xc = DMatrix::<f64>::from_fn(n, p, |i, j| rows[i * p + j] - center[j]);
    let gram = &xc * xc.transpose();
    let se = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let top = se.eigenvalues[order[0]];
    if !(top > 0.0) {
        return Err(Error::InvalidParam(
            "features have zero variance; nothing to fit".into(),
        ));
    }
    let mut lambdas = Vec::new();
    for &i in &order {
        let l = se.eigenvalues[i];
        if l > top * 1e-12 && l > 0.0 {
            lambdas.push(l);
        } else {
            break;
        }
    }
    let r = lambdas.len();
    let mut z = vec![0.0f64; n * r];
    for (j, &oi) in order.iter().take(r).enumerate() {
        let s = lambdas[j].sqrt();
        let u = se.eigenvectors.column(oi);
        for i in 0..n {
            z[i * r + j] = s * u[i];
        }
    }
    Ok(GlobalCoords { z, lambdas, r, n })
}

// ---------------------------------------------------------------------------
// structured eigensolver: diag(d) - W B W^T
// ---------------------------------------------------------------------------

struct FoldOp<'a> {
    diag: &'a [f64],
    w: Vec<&'a [f64]>,
    b: [[f64; 2]; 2],
}

impl FoldOp<'_> {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let r = self.w.len();
        let mut t = [0.0f64; 2];
        for (j, wj) in self.w.iter().enumerate() {
            t[j] = dot(wj, x);
        }
        let mut bt = [0.0f64; 2];
        for i in 0..r {
            for j in 0..r {
                bt[i] += self.b[i][j] * t[j];
            }
        }
        for (i, v) in y.iter_mut().enumerate() {
            *v = self.diag[i] * x[i];
        }
        for (j, wj) in self.w.iter().enumerate() {
            let c = bt[j];
            if c != 0.0 {
                for (v, &w) in y.iter_mut().zip(*wj) {
                    *v -= c * w;
                }
            }
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let r = self.w.len();
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            a[(i, i)] = self.diag[i];
        }
        for p in 0..r {
            for q in 0..r {
                let c = self.b[p][q];
                if c == 0.0 {
                    continue;
                }
                for i in 0..dim {
                    let wi = self.w[p][i];
                    if wi == 0.0 {
                        continue;
                    }
                    for j in 0..dim {
                        a[(i, j)] -= c * wi * self.w[q][j];
                    }
                }
            }
        }
        a
    }
}

/// Top-k eigenpairs of the structured operator, eigenvalues nonincreasing.
fn structured_topk(op: &FoldOp, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dim = op.dim();
    let k = k.min(dim);
    if k == 0 {
        return (Vec::new(), Vec::new());
    }
    for budget in [k + 28, k + 60] {
        if let Some(out) = lanczos_attempt(op, k, budget.min(dim)) {
            return out;
        }
        if budget >= dim {
            break;
        }
    }
    // dense fallback, exact
    let se = op.dense().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let vals = order.iter().take(k).map(|&i| se.eigenvalues[i]).collect();
    let vecs = order
        .iter()
        .take(k)
        .map(|&i| se.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (vals, vecs)
}

fn lanczos_attempt(op: &FoldOp, k: usize, max_steps: usize) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let dim = op.dim();
    let steps = max_steps.min(dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha: Vec<f64> = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);

    let mut v = vec![0.0f64; dim];
    for (i, e) in v.iter_mut().enumerate() {
        *e = 1.0 / (i as f64 + 1.0);
    }
    let nrm = dot(&v, &v).sqrt();
    for e in v.iter_mut() {
        *e /= nrm;
    }
    let mut w = vec![0.0f64; dim];
    // residual norm of the final step; zero when the Krylov space closed
    let mut last_beta = 0.0f64;
    for j in 0..steps {
        op.matvec(&v, &mut w);
        let a = dot(&v, &w);
        alpha.push(a);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= a * vi;
        }
        if j > 0 {
            let b = beta[j - 1];
            for (wi, vp) in w.iter_mut().zip(&basis[j - 1]) {
                *wi -= b * vp;
            }
        }
        basis.push(std::mem::replace(&mut v, vec![0.0f64; dim]));
        // full reorthogonalization, two passes
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        if b < 1e-300 {
            last_beta = 0.0;
            break;
        }
        if j + 1 == steps {
            last_beta = b;
            break;
        }
        beta.push(b);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / b;
        }
    }

    let m = alpha.len();
    let mut tri = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        tri[(i, i)] = alpha[i];
        if i + 1 < m {
            tri[(i, i + 1)] = beta[i];
            tri[(i + 1, i)] = beta[i];
        }
    }
    let se = tri.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));

    if m < k {
        return None;
    }
    let scale = se.eigenvalues[order[0]].abs().max(1e-300);
    let converged = m == dim
        || order.iter().take(k).all(|&i| {
            let res = (last_beta * se.eigenvectors[(m - 1, i)]).abs();
            res <= scale * 1e-10 || se.eigenvalues[i].abs() <= scale * 1e-12
        });
    if !converged {
        return None;
    }

    let mut vals = Vec::with_capacity(k);
    let mut vecs = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        vals.push(se.eigenvalues[i]);
        let y = se.eigenvectors.column(i);
        let mut q = vec![0.0f64; dim];
        for (j, bv) in basis.iter().enumerate() {
            let c = y[j];
            if c != 0.0 {
                for (qi, bi) in q.iter_mut().zip(bv) {
                    *qi += c * bi;
                }
            }
        }
        vecs.push(q);
    }
    Some((vals, vecs))
}

/// Principal-direction coordinates of a leave-out fold: the removed rows'
/// indices define the subset; mean and top-k eigenpairs are in the global
/// coordinate system.
struct FoldEigen {
    mean: Vec<f64>,
    vals: Vec<f64>,
    vecs: Vec<Vec<f64>>,
}

fn fold_eigen(global: &GlobalCoords, removed: &[usize], k: usize) -> FoldEigen {
    let m = (global.n - removed.len()) as f64;
    let mut mean = vec![0.0f64; global.r];
    for &t in removed {
        for (mi, zi) in mean.iter_mut().zip(global.row(t)) {
            *mi -= zi / m;
        }
    }
    let (b, w): ([[f64; 2]; 2], Vec<&[f64]>) = match removed {
        [t] => ([[1.0 + 1.0 / m, 0.0], [0.0, 0.0]], vec![global.row(*t)]),
        [s, t] => (
            [[1.0 + 1.0 / m, 1.0 / m], [1.0 / m, 1.0 + 1.0 / m]],
            vec![global.row(*s), global.row(*t)],
        ),
        _ => unreachable!("folds remove one or two rows"),
    };
    let op = FoldOp { diag: &global.lambdas, w, b };
    let (vals, vecs) = structured_topk(&op, k);
    FoldEigen { mean, vals, vecs }
}

impl FoldEigen {
    /// Project one global-coordinate row onto the first `d` fold components.
    fn project(&self, z_row: &[f64], d: usize, out: &mut Vec<f64>) {
        out.clear();
        for q in self.vecs.iter().take(d) {
            let mut acc = 0.0;
            for ((&zi, &mi), &qi) in z_row.iter().zip(&self.mean).zip(q) {
                acc += (zi - mi) * qi;
            }
            out.push(acc);
        }
    }
}

// ---------------------------------------------------------------------------
// per-fold classifier evaluation over nested dimension prefixes
// ---------------------------------------------------------------------------

/// LDA predictions of a single test vector for every dimension prefix
/// d = 1..=k. `train` is m x k row-major.
fn lda_predictions_per_dim(
    train: &[f64],
    m: usize,
    k: usize,
    y: &[u8],
    test: &[f64],
    shrinkage: f64,
    priors: Priors,
) -> Result<Vec<i8>> {
    let n1 = y.iter().filter(|&&l| l == 1).count();
    let n0 = m - n1;
    debug_assert!(n0 > 0 && n1 > 0);

    let mut mean0 = vec![0.0f64; k];
    let mut mean1 = vec![0.0f64; k];
    for (i, &l) in y.iter().enumerate() {
        let row = &train[i * k..(i + 1) * k];
        let mean = if l == 1 { &mut mean1 } else { &mut mean0 };
        for (mj, &v) in mean.iter_mut().zip(row) {
            *mj += v;
        }
    }
    for v in mean0.iter_mut() {
        *v /= n0 as f64;
    }
    for v in mean1.iter_mut() {
        *v /= n1 as f64;
    }

    let mut scatter = vec![0.0f64; k * k];
    for (i, &l) in y.iter().enumerate() {
        let row = &train[i * k..(i + 1) * k];
        let mean = if l == 1 { &mean1 } else { &mean0 };
        for a in 0..k {
            let da = row[a] - mean[a];
            for b in a..k {
                scatter[a * k + b] += da * (row[b] - mean[b]);
            }
        }
    }
    let dof = m.saturating_sub(2);
    if dof > 0 {
        for v in scatter.iter_mut() {
            *v /= dof as f64;
        }
    }

    let (lp0, lp1) = match priors {
        Priors::Empirical => (
            (n0 as f64 / m as f64).ln(),
            (n1 as f64 / m as f64).ln(),
        ),
        Priors::Equal => (0.5f64.ln(), 0.5f64.ln()),
    };

    let mut preds = Vec::with_capacity(k);
    let mut cov = vec![0.0f64; k * k];
    let mut a0 = vec![0.0f64; k];
    let mut a1 = vec![0.0f64; k];
    for d in 1..=k {
        // shrunk leading block
        let trace: f64 = (0..d).map(|i| scatter[i * k + i]).sum();
        let target = if trace > 0.0 { trace / d as f64 } else { 1.0 };
        for a in 0..d {
            for b in 0..d {
                let s = if a <= b { scatter[a * k + b] } else { scatter[b * k + a] };
                cov[a * d + b] = (1.0 - shrinkage) * s;
            }
            cov[a * d + a] += shrinkage * target;
        }
        cholesky_in_place(&mut cov[..d * d], d)?;
        a0[..d].copy_from_slice(&mean0[..d]);
        a1[..d].copy_from_slice(&mean1[..d]);
        cholesky_solve(&cov[..d * d], d, &mut a0[..d]);
        cholesky_solve(&cov[..d * d], d, &mut a1[..d]);
        let d1 = dot(&a1[..d], &test[..d]) - 0.5 * dot(&a1[..d], &mean1[..d]) + lp1;
        let d0 = dot(&a0[..d], &test[..d]) - 0.5 * dot(&a0[..d], &mean0[..d]) + lp0;
        preds.push(if d1 > d0 { 1 } else { 0 });
    }
    Ok(preds)
}

/// Posterior-style score of a single test vector at one dimension.
fn lda_fold_score(
    train: &[f64],
    m: usize,
    d: usize,
    y: &[u8],
    test: &[f64],
    shrinkage: f64,
    priors: Priors,
) -> Result<f64> {
    let model = super::lda::fit_lda(train, m, d, y, shrinkage, priors)?;
    Ok(logistic(model.discriminant(test)?))
}

/// (k,l)-NN predictions per dimension prefix, using incremental distances.
fn knn_predictions_per_dim(
    train: &[f64],
    m: usize,
    kdim: usize,
    y: &[u8],
    test: &[f64],
    kk: usize,
    ll: usize,
) -> Vec<i8> {
    let kk = kk.min(m);
    let ll = ll.min(kk);
    let mut dist2 = vec![0.0f64; m];
    let mut preds = Vec::with_capacity(kdim);
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for d in 0..kdim {
        for i in 0..m {
            let diff = train[i * kdim + d] - test[d];
            dist2[i] += diff * diff;
        }
        order.clear();
        order.extend(0..m);
        order.sort_by(|&a, &b| dist2[a].total_cmp(&dist2[b]).then(a.cmp(&b)));
        let votes = order[..kk].iter().filter(|&&i| y[i] == 1).count();
        preds.push(knn_decision(votes, kk, ll));
    }
    preds
}

fn knn_fold_score(
    train: &[f64],
    m: usize,
    d: usize,
    y: &[u8],
    test: &[f64],
    kk: usize,
    ll: usize,
) -> (f64, bool) {
    let kk = kk.min(m);
    let ll = ll.min(kk);
    let mut order: Vec<(f64, usize)> = (0..m)
        .map(|i| {
            let row = &train[i * d..(i + 1) * d];
            (
                row.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                i,
            )
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let votes = order[..kk].iter().filter(|&&(_, i)| y[i] == 1).count();
    (
        votes as f64 / kk as f64,
        knn_decision(votes, kk, ll) == -1,
    )
}

fn majority_class(y: &[u8]) -> u8 {
    let n1 = y.iter().filter(|&&l| l == 1).count();
    // ties go to class 0
    if n1 * 2 > y.len() {
        1
    } else {
        0
    }
}

fn smallest_argmin(errors: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = i;
        }
    }
    best + 1 // dimensions are 1-based
}

fn resolve_d_max(
    opts: &CvOptions,
    n: usize,
    p: usize,
    rank: usize,
    fold_train: usize,
    warnings: &mut Vec<String>,
) -> usize {
    let base = if opts.literal_d_max {
        fold_train.saturating_sub(1).max(1)
    } else {
        opts.d_max.unwrap_or_else(|| (n.saturating_sub(2)).min(60)).max(1)
    };
    let feasible = fold_train
        .saturating_sub(1)
        .max(1)
        .min(p)
        .min(rank.max(1));
    let eff = base.min(feasible);
    if eff < base {
        warnings.push(format!(
            "d_max capped from {base} to {eff} (inner training size {fold_train}, {p} features, rank {rank})"
        ));
    }
    eff
}

// ---------------------------------------------------------------------------
// fold evaluation shared by the fast and reference paths
// ---------------------------------------------------------------------------

trait FoldProjector: Sync {
    /// Training scores (m x d_eff) of the retained rows in original order,
    /// plus the projected test row, for the subset excluding `removed`.
    /// Returns None when the fold has no usable PCA (degenerate).
    fn fold_scores(
        &self,
        removed: &[usize],
        test: usize,
        d_eff: usize,
    ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)>;
}

struct FastProjector {
    global: GlobalCoords,
}

impl FoldProjector for FastProjector {
    fn fold_scores(
        &self,
        removed: &[usize],
        test: usize,
        d_eff: usize,
    ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let fold = fold_eigen(&self.global, removed, d_eff);
        if fold.vecs.len() < d_eff {
            return None;
        }
        let m = self.global.n - removed.len();
        let mut train = Vec::with_capacity(m * d_eff);
        let mut buf = Vec::with_capacity(d_eff);
        for i in 0..self.global.n {
            if removed.contains(&i) {
                continue;
            }
            fold.project(self.global.row(i), d_eff, &mut buf);
            train.extend_from_slice(&buf);
        }
        fold.project(self.global.row(test), d_eff, &mut buf);
        Some((train, buf.clone(), fold.vals))
    }
}

impl FastProjector {
    fn new(rows: &[f64], n: usize, p: usize) -> Result<Self> {
        Ok(FastProjector {
            global: global_coords(rows, n, p)?,
        })
    }
}

struct ReferenceProjector<'a> {
    rows: &'a [f64],
    n: usize,
    p: usize,
    standardize: bool,
}

impl FoldProjector for ReferenceProjector<'_> {
    fn fold_scores(
        &self,
        removed: &[usize],
        test: usize,
        d_eff: usize,
    ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let m = self.n - removed.len();
        let mut sub = Vec::with_capacity(m * self.p);
        for i in 0..self.n {
            if removed.contains(&i) {
                continue;
            }
            sub.extend_from_slice(&self.rows[i * self.p..(i + 1) * self.p]);
        }
        let model = if self.standardize {
            let (scaled, center, inv_scale) = standardize_rows(&sub, m, self.p);
            let mut pca = super::pca::pca_eigen(&scaled, m, self.p, d_eff).ok()?;
            pca.center = center;
            pca.scale = Some(inv_scale);
            pca
        } else {
            super::pca::pca_eigen(&sub, m, self.p, d_eff).ok()?
        };
        let train = model.project(&sub, m).ok()?;
        let test_scores = model
            .project_row(&self.rows[test * self.p..(test + 1) * self.p])
            .ok()?;
        Some((train, test_scores, model.explained_variance.clone()))
    }
}

struct FoldOutcome {
    score: f64,
    d_star: usize,
    cv_errors: Vec<f64>,
    rejected: bool,
}

fn run_outer_fold<P: FoldProjector>(
    proj: &P,
    labels: &[u8],
    n: usize,
    s: usize,
    d_eff: usize,
    opts: &CvOptions,
) -> Result<FoldOutcome> {
    // base training set: everything except s
    let y_base: Vec<u8> = (0..n).filter(|&i| i != s).map(|i| labels[i]).collect();
    if y_base.iter().all(|&l| l == y_base[0]) {
        return Err(Error::SingleClass);
    }

    let (d_star, cv_errors) = match opts.strategy {
        PcaStrategy::CvError => {
            let mut err_counts = vec![0u32; d_eff];
            for t in 0..n {
                if t == s {
                    continue;
                }
                let y_fold: Vec<u8> = (0..n)
                    .filter(|&i| i != s && i != t)
                    .map(|i| labels[i])
                    .collect();
                let preds = evaluate_inner_fold(proj, &y_fold, &[s, t], t, d_eff, opts)?;
                for (d, &pred) in preds.iter().enumerate() {
                    if pred != labels[t] as i8 {
                        err_counts[d] += 1;
                    }
                }
            }
            let errors: Vec<f64> = err_counts
                .iter()
                .map(|&c| c as f64 / (n - 1) as f64)
                .collect();
            (smallest_argmin(&errors), errors)
        }
        PcaStrategy::VarianceThreshold { fraction } => {
            let d = select_by_variance(proj, &[s], s, d_eff, fraction)?;
            (d, Vec::new())
        }
    };

    let (train, test, _vals) = proj
        .fold_scores(&[s], s, d_star)
        .ok_or_else(|| Error::InvalidParam("degenerate outer fold".into()))?;
    let m = n - 1;
    let (score, rejected) = match opts.classifier {
        ClassifierSpec::Lda { shrinkage, priors } => (
            lda_fold_score(&train, m, d_star, &y_base, &test, shrinkage, priors)?,
            false,
        ),
        ClassifierSpec::Knn { k, l } => knn_fold_score(&train, m, d_star, &y_base, &test, k, l),
    };
    Ok(FoldOutcome {
        score,
        d_star,
        cv_errors,
        rejected,
    })
}

/// Predictions of the test row per candidate dimension, from a model fit on
/// everything except `removed`.
fn evaluate_inner_fold<P: FoldProjector>(
    proj: &P,
    y_fold: &[u8],
    removed: &[usize],
    test: usize,
    d_eff: usize,
    opts: &CvOptions,
) -> Result<Vec<i8>> {
    let single_class = y_fold.iter().all(|&l| l == y_fold[0]) || y_fold.len() < 2;
    if single_class {
        let c = if y_fold.is_empty() { 0 } else { majority_class(y_fold) };
        return Ok(vec![c as i8; d_eff]);
    }
    let Some((train, test_scores, _vals)) = proj.fold_scores(removed, test, d_eff) else {
        // PCA unavailable (e.g. identical rows): fall back to the prior vote
        let c = majority_class(y_fold);
        return Ok(vec![c as i8; d_eff]);
    };
    let m = y_fold.len();
    match opts.classifier {
        ClassifierSpec::Lda { shrinkage, priors } => {
            lda_predictions_per_dim(&train, m, d_eff, y_fold, &test_scores, shrinkage, priors)
        }
        ClassifierSpec::Knn { k, l } => Ok(knn_predictions_per_dim(
            &train,
            m,
            d_eff,
            y_fold,
            &test_scores,
            k,
            l,
        )),
    }
}

fn select_by_variance<P: FoldProjector>(
    proj: &P,
    removed: &[usize],
    test: usize,
    d_eff: usize,
    fraction: f64,
) -> Result<usize> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::InvalidParam(
            "variance threshold must be in (0, 1]".into(),
        ));
    }
    let (_train, _test, vals) = proj
        .fold_scores(removed, test, d_eff)
        .ok_or_else(|| Error::InvalidParam("degenerate fold".into()))?;
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Ok(1);
    }
    let mut acc = 0.0;
    for (i, v) in vals.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total {
            return Ok(i + 1);
        }
    }
    Ok(d_eff)
}

// ---------------------------------------------------------------------------
// public entry points
// ---------------------------------------------------------------------------

/// Nested leave-one-out cross-validation over an n x p row-major feature
/// matrix. For each held-out row, the remaining n-1 rows drive an inner
/// LOOCV over candidate PCA dimensions; the best dimension's model is refit
/// on all n-1 rows and applied to the held-out row. The held-out row never
/// influences its own centering, components or classifier fit.
pub fn nested_loocv(
    rows: &[f64],
    n: usize,
    p: usize,
    labels: &[u8],
    opts: &CvOptions,
) -> Result<NestedCvResult> {
    validate_cv_inputs(rows, n, p, labels, opts)?;
    if n < 3 {
        return Err(Error::InvalidParam("nested LOOCV needs at least 3 rows".into()));
    }
    let mut warnings = Vec::new();

    let outcomes: Vec<Result<FoldOutcome>> = if opts.standardize {
        let proj = ReferenceProjector { rows, n, p, standardize: true };
        let d_eff = resolve_d_max(opts, n, p, (n - 1).min(p), n - 2, &mut warnings);
        (0..n)
            .into_par_iter()
            .map(|s| run_outer_fold(&proj, labels, n, s, d_eff, opts))
            .collect()
    } else {
        let proj = FastProjector::new(rows, n, p)?;
        let d_eff = resolve_d_max(opts, n, p, proj.global.r, n - 2, &mut warnings);
        (0..n)
            .into_par_iter()
            .map(|s| run_outer_fold(&proj, labels, n, s, d_eff, opts))
            .collect()
    };

    let mut scores = Vec::with_capacity(n);
    let mut d_stars = Vec::with_capacity(n);
    let mut cv_errors = Vec::with_capacity(n);
    let mut rejected = Vec::with_capacity(n);
    for outcome in outcomes {
        let o = outcome?;
        scores.push(o.score);
        d_stars.push(o.d_star);
        cv_errors.push(o.cv_errors);
        rejected.push(o.rejected);
    }
    Ok(NestedCvResult {
        scores,
        d_stars,
        cv_errors,
        rejected,
        warnings,
    })
}

/// Reference implementation of [`nested_loocv`] that refits a dense PCA in
/// every fold; used to cross-check the structured fast path.
pub(crate) fn nested_loocv_reference(
    rows: &[f64],
    n: usize,
    p: usize,
    labels: &[u8],
    opts: &CvOptions,
) -> Result<NestedCvResult> {
    validate_cv_inputs(rows, n, p, labels, opts)?;
    if n < 3 {
        return Err(Error::InvalidParam("nested LOOCV needs at least 3 rows".into()));
    }
    let mut warnings = Vec::new();
    let proj = ReferenceProjector { rows, n, p, standardize: opts.standardize };
    let d_eff = resolve_d_max(opts, n, p, (n - 1).min(p), n - 2, &mut warnings);
    let outcomes: Vec<Result<FoldOutcome>> = (0..n)
        .into_par_iter()
        .map(|s| run_outer_fold(&proj, labels, n, s, d_eff, opts))
        .collect();
    let mut scores = Vec::with_capacity(n);
    let mut d_stars = Vec::with_capacity(n);
    let mut cv_errors = Vec::with_capacity(n);
    let mut rejected = Vec::with_capacity(n);
    for outcome in outcomes {
        let o = outcome?;
        scores.push(o.score);
        d_stars.push(o.d_star);
        cv_errors.push(o.cv_errors);
        rejected.push(o.rejected);
    }
    Ok(NestedCvResult {
        scores,
        d_stars,
        cv_errors,
        rejected,
        warnings,
    })
}

/// Single-level LOOCV over the whole matrix, selecting one PCA dimension
/// for a final fit on all rows.
pub fn select_dimension(
    rows: &[f64],
    n: usize,
    p: usize,
    labels: &[u8],
    opts: &CvOptions,
) -> Result<DimensionSelection> {
    validate_cv_inputs(rows, n, p, labels, opts)?;
    if n < 3 {
        return Err(Error::InvalidParam("LOOCV needs at least 3 rows".into()));
    }
    let mut warnings = Vec::new();

    enum AnyProjector<'a> {
        Fast(FastProjector<'a>),
        Reference(ReferenceProjector<'a>),
    }
    impl FoldProjector for AnyProjector<'_> {
        fn fold_scores(
            &self,
            removed: &[usize],
            test: usize,
            d_eff: usize,
        ) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            match self {
                AnyProjector::Fast(f) => f.fold_scores(removed, test, d_eff),
                AnyProjector::Reference(r) => r.fold_scores(removed, test, d_eff),
            }
        }
    }

    let (proj, rank) = if opts.standardize {
        (
            AnyProjector::Reference(ReferenceProjector { rows, n, p, standardize: true }),
            (n - 1).min(p),
        )
    } else {
        let fast = FastProjector::new(rows, n, p)?;
        let rank = fast.global.r;
        (AnyProjector::Fast(fast), rank)
    };
    let d_eff = resolve_d_max(opts, n, p, rank, n - 1, &mut warnings);

    match opts.strategy {
        PcaStrategy::CvError => {
            let err_counts: Vec<Result<Vec<u32>>> = (0..n)
                .into_par_iter()
                .map(|t| {
                    let y_fold: Vec<u8> =
                        (0..n).filter(|&i| i != t).map(|i| labels[i]).collect();
                    let preds = evaluate_inner_fold(&proj, &y_fold, &[t], t, d_eff, opts)?;
                    Ok(preds
                        .iter()
                        .map(|&pred| u32::from(pred != labels[t] as i8))
                        .collect())
                })
                .collect();
            let mut totals = vec![0u32; d_eff];
            for c in err_counts {
                for (tot, v) in totals.iter_mut().zip(c?) {
                    *tot += v;
                }
            }
            let cv_errors: Vec<f64> = totals.iter().map(|&c| c as f64 / n as f64).collect();
            Ok(DimensionSelection {
                d_star: smallest_argmin(&cv_errors),
                cv_errors,
                warnings,
            })
        }
        PcaStrategy::VarianceThreshold { fraction } => {
            if !(0.0 < fraction && fraction <= 1.0) {
                return Err(Error::InvalidParam(
                    "variance threshold must be in (0, 1]".into(),
                ));
            }
            let (spectrum, total) = super::pca::pca_spectrum(rows, n, p, d_eff)?;
            let mut acc = 0.0;
            let mut d_star = d_eff;
            for (i, v) in spectrum.iter().enumerate() {
                acc += v.max(0.0);
                if acc >= fraction * total {
                    d_star = i + 1;
                    break;
                }
            }
            Ok(DimensionSelection {
                d_star,
                cv_errors: Vec::new(),
                warnings,
            })
        }
    }
}

fn validate_cv_inputs(
    rows: &[f64],
    n: usize,
    p: usize,
    labels: &[u8],
    opts: &CvOptions,
) -> Result<()> {
    if rows.len() != n * p || labels.len() != n {
        return Err(Error::InvalidParam("matrix/label shape mismatch".into()));
    }
    if p == 0 {
        return Err(Error::InvalidParam("need at least one feature".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidParam("labels must be 0 or 1".into()));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::SingleClass);
    }
    if let ClassifierSpec::Lda { shrinkage, .. } = opts.classifier {
        if !(0.0..=1.0).contains(&shrinkage) {
            return Err(Error::InvalidParam("shrinkage must be in [0, 1]".into()));
        }
    }
    if let ClassifierSpec::Knn { k, l } = opts.classifier {
        if l < 1 || l > k {
            return Err(Error::InvalidParam("need 1 <= l <= k".into()));
        }
    }
    Ok(())
}
