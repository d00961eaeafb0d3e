//! Power-iteration spectral norms and a two-component PCA.
//!
//! Both are deterministic: iteration starts from a fixed-seed random vector
//! and runs to a tolerance of 1e-10 (at most 1000 iterations).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{l2_norm, Matrix};

/// Fixed seed for iteration start vectors.
const START_SEED: u64 = 0x5eed_0f_9a11;

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 1000;

/// Result of a spectral-norm estimate.
#[derive(Debug, Clone, Copy)]
pub struct SpectralNorm {
    pub value: f64,
    /// False when power iteration hit the iteration cap; the caller may fall
    /// back to the Frobenius norm.
    pub converged: bool,
}

fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = l2_norm(&v);
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Largest singular value of `a` by power iteration on the Gram operator
/// `v ↦ Aᵀ(Av)`.
pub fn spectral_norm(a: &Matrix) -> SpectralNorm {
    let (rows, cols) = (a.rows(), a.cols());
    if rows == 0 || cols == 0 || a.data().iter().all(|&v| v == 0.0) {
        return SpectralNorm {
            value: 0.0,
            converged: true,
        };
    }
    let mut v = random_unit(cols, START_SEED);
    let mut sigma = 0.0;
    for _ in 0..POWER_MAX_ITER {
        // u = A v
        let mut u = vec![0.0; rows];
        for (i, ui) in u.iter_mut().enumerate() {
            let row = a.row(i);
            *ui = row.iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let new_sigma = l2_norm(&u);
        if new_sigma == 0.0 {
            return SpectralNorm {
                value: 0.0,
                converged: true,
            };
        }
        // w = Aᵀ u
        let mut w = vec![0.0; cols];
        for (i, &ui) in u.iter().enumerate() {
            let row = a.row(i);
            for (j, &x) in row.iter().enumerate() {
                w[j] += x * ui;
            }
        }
        let w_norm = l2_norm(&w);
        for (x, y) in v.iter_mut().zip(&w) {
            *x = y / w_norm;
        }
        if (new_sigma - sigma).abs() <= POWER_TOL * new_sigma.max(1.0) {
            return SpectralNorm {
                value: new_sigma,
                converged: true,
            };
        }
        sigma = new_sigma;
    }
    SpectralNorm {
        value: sigma,
        converged: false,
    }
}

/// A two-component principal projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaProjection {
    /// `N×2` coordinates in the principal plane.
    pub coords: Matrix,
    /// The two orthonormal axes, rows of length `K`.
    pub axes: [Vec<f64>; 2],
    /// Variance captured by each axis, sorted descending.
    pub explained_variance: [f64; 2],
    /// Column means removed before projecting.
    pub mean: Vec<f64>,
    /// True when the input had (near-)zero total variance; projections are
    /// all zero in that case.
    pub degenerate: bool,
}

impl PcaProjection {
    /// Projects further points into this projection's plane (centering with
    /// the stored mean).
    pub fn project(&self, points: &Matrix) -> Result<Matrix> {
        if points.cols() != self.mean.len() {
            return Err(Error::shape(
                "PcaProjection::project",
                format!("{} columns", self.mean.len()),
                format!("{}", points.cols()),
            ));
        }
        let mut out = Matrix::zeros(points.rows(), 2);
        for i in 0..points.rows() {
            let row = points.row(i);
            for (axis_idx, axis) in self.axes.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..row.len() {
                    acc += (row[j] - self.mean[j]) * axis[j];
                }
                out.set(i, axis_idx, acc);
            }
        }
        Ok(out)
    }
}

/// Iteration cap for the PCA eigenvectors; matvecs here are K×K and cheap,
/// so the budget is generous to resolve close eigenvalue pairs.
const PCA_MAX_ITER: usize = 50_000;

/// Symmetric power iteration with optional re-orthogonalization against an
/// earlier eigenvector. Returns (eigenvector, eigenvalue). Converges on the
/// iterate itself so the returned direction is accurate, not just the value.
fn top_eigenpair(cov: &Matrix, orthogonal_to: Option<&[f64]>, seed: u64) -> (Vec<f64>, f64) {
    let n = cov.rows();
    let orthogonalize = |v: &mut Vec<f64>| {
        if let Some(prev) = orthogonal_to {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
    };
    let mut v = random_unit(n, seed);
    orthogonalize(&mut v);
    let norm = l2_norm(&v);
    if norm < 1e-12 {
        return (vec![0.0; n], 0.0);
    }
    for x in &mut v {
        *x /= norm;
    }
    for _ in 0..PCA_MAX_ITER {
        let mut next = vec![0.0; n];
        for (i, ni) in next.iter_mut().enumerate() {
            *ni = cov.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        orthogonalize(&mut next);
        let norm = l2_norm(&next);
        if norm < 1e-300 {
            // Data has no variance in the remaining subspace.
            return (v, 0.0);
        }
        for x in &mut next {
            *x /= norm;
        }
        let drift = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if drift <= 1e-13 {
            break;
        }
    }
    let mut cv = vec![0.0; n];
    for (i, ci) in cv.iter_mut().enumerate() {
        *ci = cov.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
    }
    let lambda: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
    (v, lambda.max(0.0))
}

/// Flips the sign so the largest-magnitude component (first on ties) is
/// positive.
fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = j;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Mean-centers `points` and projects them onto the top two eigenvectors of
/// the sample covariance (power iteration plus deflation).
pub fn pca2d(points: &Matrix) -> Result<PcaProjection> {
    let (n, k) = (points.rows(), points.cols());
    if n < 2 {
        return Err(Error::Domain(format!("pca2d needs at least 2 points, got {n}")));
    }
    if k < 2 {
        return Err(Error::Domain(format!("pca2d needs at least 2 columns, got {k}")));
    }
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(points.row(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = points.clone();
    for i in 0..n {
        let row = centered.row_mut(i);
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    // Sample covariance (K×K).
    let mut cov = centered.transpose().matmul(&centered)?;
    cov.map_inplace(|x| x / (n as f64 - 1.0));

    let total_variance: f64 = (0..k).map(|j| cov.get(j, j)).sum();
    if total_variance <= 1e-300 {
        let mut e0 = vec![0.0; k];
        let mut e1 = vec![0.0; k];
        e0[0] = 1.0;
        e1[1] = 1.0;
        return Ok(PcaProjection {
            coords: Matrix::zeros(n, 2),
            axes: [e0, e1],
            explained_variance: [0.0, 0.0],
            mean,
            degenerate: true,
        });
    }

    let (mut v1, l1) = top_eigenpair(&cov, None, START_SEED);
    // Deflate: C' = C − λ₁ v₁v₁ᵀ, then iterate again orthogonally to v₁.
    let mut deflated = cov.clone();
    for i in 0..k {
        for j in 0..k {
            let val = deflated.get(i, j) - l1 * v1[i] * v1[j];
            deflated.set(i, j, val);
        }
    }
    let (trial_v2, trial_l2) = top_eigenpair(&deflated, Some(&v1), START_SEED.wrapping_add(1));
    let (mut v2, l2) = if trial_l2 <= 1e-12 * l1.max(1e-300) || l2_norm(&trial_v2) < 0.5 {
        // Rank-one data: any unit vector orthogonal to v₁ completes the
        // basis; variance along it is zero. Pick the coordinate direction
        // least aligned with v₁ and orthogonalize.
        let mut best = 0;
        for j in 0..k {
            if v1[j].abs() < v1[best].abs() {
                best = j;
            }
        }
        let mut e = vec![0.0; k];
        e[best] = 1.0;
        let dot: f64 = e.iter().zip(&v1).map(|(a, b)| a * b).sum();
        for (x, p) in e.iter_mut().zip(&v1) {
            *x -= dot * p;
        }
        let norm = l2_norm(&e);
        for x in &mut e {
            *x /= norm;
        }
        (e, 0.0)
    } else {
        (trial_v2, trial_l2)
    };

    let (mut lambda1, mut lambda2) = (l1, l2);
    if lambda2 > lambda1 {
        std::mem::swap(&mut v1, &mut v2);
        std::mem::swap(&mut lambda1, &mut lambda2);
    }
    normalize_sign(&mut v1);
    normalize_sign(&mut v2);

    let mut coords = Matrix::zeros(n, 2);
    for i in 0..n {
        let row = centered.row(i);
        coords.set(i, 0, row.iter().zip(&v1).map(|(a, b)| a * b).sum());
        coords.set(i, 1, row.iter().zip(&v2).map(|(a, b)| a * b).sum());
    }
    Ok(PcaProjection {
        coords,
        axes: [v1, v2],
        explained_variance: [lambda1, lambda2],
        mean,
        degenerate: false,
    })
}
