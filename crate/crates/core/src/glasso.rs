//! Graphical lasso by blockwise coordinate descent on the covariance estimate.
//!
//! Solves `min -log det P + tr(S P) + lambda |P|_1` over precision matrices
//! `P`, with `|.|_1` the element-wise sum of absolute values (diagonal
//! included). Entries forbidden by a [`CouplingMask`] are held at zero.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::cpod::CouplingMask;
use crate::error::{invalid, Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize};

#[derive(Debug, Clone, Copy)]
pub struct GlassoOptions {
    /// Stop once the KKT residual falls below this, relative to the largest entry of `s`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Tolerance of the inner lasso coordinate descent.
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        GlassoOptions { tol: 1e-8, max_sweeps: 2_000, lasso_tol: 1e-13, lasso_max_iter: 20_000 }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoResult {
    /// Covariance estimate `W`.
    pub covariance: DMatrix<f64>,
    /// Sparse precision estimate.
    pub precision: DMatrix<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Penalised objective `-log det P + tr(S P) + lambda |P|_1`.
pub fn objective(s: &DMatrix<f64>, precision: &DMatrix<f64>, lambda: f64) -> f64 {
    let logdet = match precision.clone().cholesky() {
        Some(c) => {
            let l = c.l_dirty();
            2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
        }
        None => return f64::INFINITY,
    };
    -logdet + (s * precision).trace() + lambda * precision.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the optimality conditions. Mask-forbidden entries are skipped.
pub fn kkt_residual(s: &DMatrix<f64>, precision: &DMatrix<f64>, lambda: f64, mask: &CouplingMask) -> f64 {
    let cov = match precision.clone().cholesky() {
        Some(c) => c.inverse(),
        None => return f64::INFINITY,
    };
    let k = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if !mask.allowed(i, j) {
                continue;
            }
            let g = s[(i, j)] - cov[(i, j)];
            let p = precision[(i, j)];
            let v = if p == 0.0 { (g.abs() - lambda).max(0.0) } else { (g + lambda * p.signum()).abs() };
            worst = worst.max(v);
        }
    }
    worst
}

/// Smallest penalty that leaves every allowed off-diagonal precision entry at zero.
pub fn saturation_lambda(s: &DMatrix<f64>, mask: &CouplingMask) -> f64 {
    let k = s.nrows();
    let mut best = 0.0f64;
    for i in 0..k {
        for j in 0..i {
            if mask.allowed(i, j) {
                best = best.max(s[(i, j)].abs());
            }
        }
    }
    best
}

/// Graphical lasso on the sample covariance `s`.
pub fn glasso(s: &DMatrix<f64>, lambda: f64, mask: &CouplingMask, opts: &GlassoOptions) -> Result<GlassoResult> {
    let k = s.nrows();
    if s.ncols() != k || mask.dim() != k {
        return Err(Error::Dimension { expected: k, found: mask.dim() });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid("penalty must be finite and non-negative"));
    }
    if k == 0 {
        let empty = DMatrix::zeros(0, 0);
        return Ok(GlassoResult { covariance: empty.clone(), precision: empty, sweeps: 0, kkt_residual: 0.0 });
    }
    let s = symmetrize(s);
    let scale = s.abs().max().max(f64::MIN_POSITIVE);
    if min_eigenvalue(&s) < -1e-10 * scale {
        return Err(Error::NotPositiveDefinite("sample covariance is not positive semidefinite".into()));
    }

    let mut w = s.clone();
    for i in 0..k {
        w[(i, i)] += lambda;
    }
    // betas[j] holds the regression coefficients of column j on the others
    let mut betas: Vec<DVector<f64>> = vec![DVector::zeros(k - 1); k];
    let mut precision = DMatrix::zeros(k, k);
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for j in 0..k {
            let idx: Vec<usize> = (0..k).filter(|&i| i != j).collect();
            let w11 = DMatrix::from_fn(k - 1, k - 1, |a, b| w[(idx[a], idx[b])]);
            let s12 = DVector::from_fn(k - 1, |a, _| s[(idx[a], j)]);
            let free: Vec<bool> = idx.iter().map(|&i| mask.allowed(i, j)).collect();
            lasso_cd(&w11, &s12, lambda, &free, &mut betas[j], opts);
            let w12 = &w11 * &betas[j];
            for (a, &i) in idx.iter().enumerate() {
                w[(i, j)] = w12[a];
                w[(j, i)] = w12[a];
            }
        }
        precision = precision_from_betas(&w, &betas);
        residual = kkt_residual(&s, &precision, lambda, mask);
        if residual <= opts.tol * scale {
            break;
        }
    }
    if !precision.iter().all(|v| v.is_finite()) || precision.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("graphical lasso produced an indefinite precision".into()));
    }
    if residual > opts.tol * scale {
        log::warn!("graphical lasso stopped after {sweeps} sweeps with KKT residual {residual:e}");
    }
    Ok(GlassoResult { covariance: w, precision, sweeps, kkt_residual: residual })
}

/// Coordinate descent for `min 1/2 b' V b - b' u + lambda |b|_1`, with the
/// coordinates where `free` is false pinned at zero. Warm-started from `beta`.
fn lasso_cd(v: &DMatrix<f64>, u: &DVector<f64>, lambda: f64, free: &[bool], beta: &mut DVector<f64>, opts: &GlassoOptions) {
    let m = u.len();
    for (b, &f) in beta.iter_mut().zip(free) {
        if !f {
            *b = 0.0;
        }
    }
    let scale = u.amax().max(f64::MIN_POSITIVE);
    for _ in 0..opts.lasso_max_iter {
        let mut delta = 0.0f64;
        for a in 0..m {
            if !free[a] {
                continue;
            }
            let mut r = u[a];
            for b in 0..m {
                if b != a {
                    r -= v[(a, b)] * beta[b];
                }
            }
            let new = soft(r, lambda) / v[(a, a)];
            delta = delta.max((new - beta[a]).abs() * v[(a, a)]);
            beta[a] = new;
        }
        if delta <= opts.lasso_tol * scale {
            break;
        }
    }
}

fn precision_from_betas(w: &DMatrix<f64>, betas: &[DVector<f64>]) -> DMatrix<f64> {
    let k = w.nrows();
    let mut p = DMatrix::zeros(k, k);
    for j in 0..k {
        let idx: Vec<usize> = (0..k).filter(|&i| i != j).collect();
        let w12 = DVector::from_fn(k - 1, |a, _| w[(idx[a], j)]);
        let theta_jj = 1.0 / (w[(j, j)] - w12.dot(&betas[j]));
        p[(j, j)] = theta_jj;
        for (a, &i) in idx.iter().enumerate() {
            p[(i, j)] = -betas[j][a] * theta_jj;
        }
    }
    // symmetrise, keeping an entry only when both triangles agree it is nonzero
    for i in 0..k {
        for j in 0..i {
            let (a, b) = (p[(i, j)], p[(j, i)]);
            let v = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    p
}

/// Number of nonzero allowed off-diagonal pairs `i < j`.
pub fn edge_count(precision: &DMatrix<f64>, mask: &CouplingMask) -> usize {
    let k = precision.nrows();
    (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .filter(|&(i, j)| mask.allowed(i, j) && precision[(i, j)] != 0.0)
        .count()
}
