//! Diffusion-map embedding of representative patches with Nyström
//! out-of-sample extension.
//!
//! Kernel `k(x, y) = exp(-|x - y|^2 / epsilon)`, density normalization with
//! exponent `alpha` (1 gives the Laplace–Beltrami limit), then row-stochastic
//! normalization `P = D^-1 K_alpha`. The spectrum is taken from the symmetric
//! conjugate `D^-1/2 K_alpha D^-1/2`; right eigenvectors of `P` are recovered as
//! `psi = phi / phi_0`, so the trivial eigenvector is the constant 1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 5000.0;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_N_EVECS: usize = 100;
pub const EMBED_DIM: usize = 10;

/// Kernel weights below this count as no mass.
const MIN_KERNEL_MASS: f64 = 1e-300;
const EIGEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub n_evecs: usize,
    /// Retained embedding dimension.
    pub m: usize,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            alpha: DEFAULT_ALPHA,
            n_evecs: DEFAULT_N_EVECS,
            m: EMBED_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub params: DiffusionParams,
    /// Side length of the patches the representatives were flattened from.
    pub patch_size: usize,
    /// Flattened representative vectors, one per row.
    pub representatives: Vec<Vec<f64>>,
    /// Kernel degree `q_i = sum_j k(r_i, r_j)` of each representative.
    pub degrees: Vec<f64>,
    /// Nontrivial eigenvalues of `P`, descending, `n_evecs` of them.
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors of `P`, `eigenvectors[i][k]` = component `k` at representative `i`.
    pub eigenvectors: Vec<Vec<f64>>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl DiffusionModel {
    pub fn n_representatives(&self) -> usize {
        self.representatives.len()
    }

    pub fn dim(&self) -> usize {
        self.representatives.first().map_or(0, |r| r.len())
    }

    /// Training embedding of representative `i`: `lambda_k * psi_k(i)` for the first `m` axes.
    pub fn training_embedding(&self, i: usize) -> Vec<f64> {
        (0..self.params.m)
            .map(|k| self.eigenvalues[k] * self.eigenvectors[i][k])
            .collect()
    }

    /// Nyström extension of an arbitrary flattened patch.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let eps = self.params.epsilon;
        let weights: Vec<f64> = self
            .representatives
            .iter()
            .map(|r| (-sq_dist(x, r) / eps).exp())
            .collect();
        let max_weight = weights.iter().cloned().fold(0.0, f64::max);
        if max_weight < MIN_KERNEL_MASS || x.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateKernel { max_weight });
        }
        let q_x: f64 = weights.iter().sum();
        let alpha = self.params.alpha;
        let qa = q_x.powf(alpha);
        let normalized: Vec<f64> = weights
            .iter()
            .zip(&self.degrees)
            .map(|(w, q)| w / (qa * q.powf(alpha)))
            .collect();
        let d_x: f64 = normalized.iter().sum();
        let mut out = vec![0.0; self.params.m];
        for (p, psi) in normalized.iter().zip(&self.eigenvectors) {
            let p = p / d_x;
            for (o, v) in out.iter_mut().zip(psi) {
                *o += p * v;
            }
        }
        Ok(out)
    }

    /// Reorders and flips embedding axes: new axis `k` is old axis `perm[k]`
    /// times `signs[k]`. Used to simulate models that differ only in axis order
    /// and orientation.
    pub fn with_permuted_axes(&self, perm: &[usize], signs: &[f64]) -> Result<Self> {
        let n = self.eigenvalues.len();
        if perm.len() != n || signs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: perm.len(),
            });
        }
        let mut out = self.clone();
        for k in 0..n {
            out.eigenvalues[k] = self.eigenvalues[perm[k]];
            for i in 0..self.eigenvectors.len() {
                out.eigenvectors[i][k] = signs[k] * self.eigenvectors[i][perm[k]];
            }
        }
        Ok(out)
    }
}

/// Fits the diffusion map on K-means representatives.
pub fn fit_diffusion_map(representatives: &[Vec<f64>], patch_size: usize, params: DiffusionParams) -> Result<DiffusionModel> {
    let n = representatives.len();
    if params.epsilon <= 0.0 || !params.epsilon.is_finite() {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if params.m > params.n_evecs {
        return Err(Error::invalid(format!("m ({}) exceeds n_evecs ({})", params.m, params.n_evecs)));
    }
    if n < params.n_evecs + 1 {
        return Err(Error::invalid(format!(
            "need at least n_evecs + 1 = {} representatives, got {n}",
            params.n_evecs + 1
        )));
    }
    let dim = representatives[0].len();
    if let Some(bad) = representatives.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }

    let mut kernel = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        kernel[(i, i)] = 1.0;
        for j in i + 1..n {
            let k = (-sq_dist(&representatives[i], &representatives[j]) / params.epsilon).exp();
            kernel[(i, j)] = k;
            kernel[(j, i)] = k;
        }
    }
    // row sums in index order, the same order `embed` uses
    let degrees: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kernel[(i, j)]).sum()).collect();
    let qa: Vec<f64> = degrees.iter().map(|q| q.powf(params.alpha)).collect();
    for i in 0..n {
        for j in 0..n {
            kernel[(i, j)] /= qa[i] * qa[j];
        }
    }
    let d: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kernel[(i, j)]).sum()).collect();
    let inv_sqrt_d: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut sym = kernel;
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] *= inv_sqrt_d[i] * inv_sqrt_d[j];
        }
    }
    let sym_for_residual = sym.clone();
    let eig = sym
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or(Error::EigenNonConvergence { max_residual: f64::NAN })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut max_residual = 0.0f64;
    for &idx in order.iter().take(params.n_evecs + 1) {
        let v = eig.eigenvectors.column(idx);
        let r = (&sym_for_residual * v - v * eig.eigenvalues[idx]).norm();
        max_residual = max_residual.max(r);
    }
    if max_residual.is_nan() || max_residual > EIGEN_TOL {
        return Err(Error::EigenNonConvergence { max_residual });
    }

    // phi_0 = sqrt(d / sum d) exactly, so psi_0 = 1
    let d_total: f64 = d.iter().sum();
    let phi0: Vec<f64> = d.iter().map(|v| (v / d_total).sqrt()).collect();

    let mut eigenvalues = Vec::with_capacity(params.n_evecs);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(params.n_evecs);
    for &idx in order.iter().skip(1).take(params.n_evecs) {
        let phi = eig.eigenvectors.column(idx);
        let mut psi: Vec<f64> = (0..n).map(|i| phi[i] / phi0[i]).collect();
        // largest-magnitude entry positive; earliest index wins ties
        let pivot = psi
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1.abs() { (i, v) } else { best });
        if pivot.1 < 0.0 {
            psi.iter_mut().for_each(|v| *v = -*v);
        }
        eigenvalues.push(eig.eigenvalues[idx]);
        columns.push(psi);
    }
    let eigenvectors = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();

    Ok(DiffusionModel {
        params,
        patch_size,
        representatives: representatives.to_vec(),
        degrees,
        eigenvalues,
        eigenvectors,
    })
}
