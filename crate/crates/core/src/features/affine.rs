//! Least-squares affine alignment between two embeddings.
//!
//! Minimizes `cost(mu, M) = (1/n) sum |mu + M a_i - b_i|^2`. Setting the
//! gradient to zero gives `Cov(a) M^T = Cov(a, b)` on centered data and
//! `mu = mean(b) - M mean(a)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::diffusion::DiffusionModel;
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which `Cov(a)` counts as singular.
const SINGULAR_RTOL: f64 = 1e-12;

/// `v -> mu + M v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub mu: Vec<f64>,
    /// Row-major `d × d`.
    pub matrix: Vec<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            matrix[i * d + i] = 1.0;
        }
        Self { mu: vec![0.0; d], matrix }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn m(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.dim() + col]
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: v.len(),
            });
        }
        Ok((0..d)
            .map(|i| self.mu[i] + (0..d).map(|j| self.matrix[i * d + j] * v[j]).sum::<f64>())
            .collect())
    }

    /// Mean squared residual over the pairs.
    pub fn cost(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for (ai, bi) in a.iter().zip(b) {
            let p = self.apply(ai)?;
            total += p.iter().zip(bi).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok(total / a.len().max(1) as f64)
    }

    /// Analytic gradient of `cost`: `(d/dmu, d/dM)` with `d/dM` row-major.
    pub fn cost_gradient(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let n = a.len().max(1) as f64;
        let mut g_mu = vec![0.0; d];
        let mut g_m = vec![0.0; d * d];
        for (ai, bi) in a.iter().zip(b) {
            let p = self.apply(ai)?;
            for i in 0..d {
                let r = 2.0 * (p[i] - bi[i]) / n;
                g_mu[i] += r;
                for j in 0..d {
                    g_m[i * d + j] += r * ai[j];
                }
            }
        }
        Ok((g_mu, g_m))
    }
}

/// Closed-form fit of `mu`, `M` from paired points `a_i -> b_i`.
pub fn fit_affine_alignment(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<AffineMap> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    let d = a.first().map_or(0, |v| v.len());
    if d == 0 {
        return Err(Error::EmptyInput("no pairs to align".into()));
    }
    if n < d + 1 {
        return Err(Error::invalid(format!("need at least d + 1 = {} pairs, got {n}", d + 1)));
    }
    for v in a.iter().chain(b) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: v.len(),
            });
        }
    }

    let nf = n as f64;
    let mean = |vs: &[Vec<f64>]| -> DVector<f64> {
        DVector::from_fn(d, |j, _| vs.iter().map(|v| v[j]).sum::<f64>() / nf)
    };
    let (ma, mb) = (mean(a), mean(b));
    let ac = DMatrix::from_fn(n, d, |i, j| a[i][j] - ma[j]);
    let bc = DMatrix::from_fn(n, d, |i, j| b[i][j] - mb[j]);
    let cov_a = ac.transpose() * &ac / nf;
    let cov_ab = ac.transpose() * &bc / nf;

    let eig = cov_a.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = SINGULAR_RTOL * max_ev.max(f64::MIN_POSITIVE);
    let deficient: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] <= floor).collect();
    if max_ev <= 0.0 || !deficient.is_empty() {
        let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::SingularCovariance {
            deficient: deficient.len().max(1),
            min_eigenvalue,
            directions: deficient
                .iter()
                .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
                .collect(),
        });
    }

    // Cov(a) is symmetric positive definite here
    let mt = match cov_a.clone().cholesky() {
        Some(ch) => ch.solve(&cov_ab),
        None => cov_a
            .lu()
            .solve(&cov_ab)
            .ok_or_else(|| Error::invalid("covariance solve failed"))?,
    };
    let m = mt.transpose();
    let mu = &mb - &m * &ma;

    Ok(AffineMap {
        mu: mu.iter().copied().collect(),
        matrix: (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect(),
    })
}

/// Matched rows `(a, b)`: a point set in the source and target coordinates.
pub type PointPairs = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Builds `(a_i, b_i)` by embedding the reference model's representatives
/// under both models, then fits the map from the new model's coordinates to
/// the reference's.
pub fn alignment_pairs(new_model: &DiffusionModel, reference: &DiffusionModel) -> Result<PointPairs> {
    if new_model.patch_size != reference.patch_size || new_model.dim() != reference.dim() {
        return Err(Error::invalid(format!(
            "models disagree on patch size ({} vs {})",
            new_model.patch_size, reference.patch_size
        )));
    }
    if new_model.params.m != reference.params.m {
        return Err(Error::invalid(format!(
            "models disagree on embedding dimension ({} vs {})",
            new_model.params.m, reference.params.m
        )));
    }
    let mut a = Vec::with_capacity(reference.n_representatives());
    let mut b = Vec::with_capacity(reference.n_representatives());
    for r in &reference.representatives {
        a.push(new_model.embed(r)?);
        b.push(reference.embed(r)?);
    }
    Ok((a, b))
}

pub fn align_brain_features(new_model: &DiffusionModel, reference: &DiffusionModel) -> Result<AffineMap> {
    let (a, b) = alignment_pairs(new_model, reference)?;
    fit_affine_alignment(&a, &b)
}
