//! (k, l)-nearest-neighbor rule with a rejection option.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training rows (post-PCA scores), their labels and the (k, l) vote rule:
/// class 1 when at least l of the k nearest neighbors are positive, class 0
/// when at most k - l are, otherwise reject (-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    /// Row-major n x dim.
    pub train: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<u8>,
    pub k: usize,
    pub l: usize,
}

impl KnnModel {
    pub fn new(train: Vec<f64>, dim: usize, labels: Vec<u8>, k: usize, l: usize) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || train.len() != n * dim {
            return Err(Error::InvalidParam("knn matrix shape mismatch".into()));
        }
        if !(1 <= l && l <= k && k <= n) {
            return Err(Error::InvalidParam(format!(
                "need 1 <= l <= k <= n, got l={l}, k={k}, n={n}"
            )));
        }
        Ok(KnnModel { train, dim, labels, k, l })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of label-1 points among the k nearest training rows; distance
    /// ties are broken by training row index.
    pub fn votes(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::InvalidParam(format!(
                "input has {} dims, model expects {}",
                x.len(),
                self.dim
            )));
        }
        let n = self.len();
        let mut order: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let row = &self.train[i * self.dim..(i + 1) * self.dim];
                let d2: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(order[..self.k]
            .iter()
            .filter(|&&(_, i)| self.labels[i] == 1)
            .count())
    }

    /// Vote share in [0, 1], used as a score for ROC analysis.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.votes(x)? as f64 / self.k as f64)
    }

    /// Hard decision: 1, 0 or -1 (reject).
    pub fn classify(&self, x: &[f64]) -> Result<i8> {
        let v = self.votes(x)?;
        Ok(knn_decision(v, self.k, self.l))
    }
}

/// The (k, l) rule on a vote count.
pub fn knn_decision(votes: usize, k: usize, l: usize) -> i8 {
    if votes >= l {
        1
    } else if votes <= k - l {
        0
    } else {
        -1
    }
}
