//! Separable co-kriging model of the stacked mode coefficients at one time step.
//!
//! Coefficient vectors at two designs have cross-covariance `r_tau(c1, c2) T`,
//! with `r_tau(c1, c2) = prod_j tau_j^(4 (c1_j - c2_j)^2)` on designs scaled
//! to the unit cube.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::geometry::{GeomParam, GeometryParams};
use crate::linalg::{cholesky_jittered, min_eigenvalue, Factor};
use crate::special::chi2_quantile;

/// Affine map from physical geometry parameters onto `[0, 1]^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    dims: Vec<(GeomParam, f64, f64)>,
}

impl DesignSpace {
    /// The given parameters with their default admissible ranges.
    pub fn with_default_ranges(params: &[GeomParam]) -> Self {
        DesignSpace {
            dims: params
                .iter()
                .map(|&p| {
                    let (lo, hi) = p.range();
                    (p, lo, hi)
                })
                .collect(),
        }
    }

    /// All five parameters with the default ranges.
    pub fn full() -> Self {
        Self::with_default_ranges(&GeomParam::ALL)
    }

    pub fn new(dims: Vec<(GeomParam, f64, f64)>) -> Result<Self> {
        if dims.is_empty() {
            return Err(invalid("design space needs at least one dimension"));
        }
        for &(p, lo, hi) in &dims {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(invalid(format!("range of {} must satisfy min < max", p.name())));
            }
        }
        Ok(DesignSpace { dims })
    }

    pub fn dims(&self) -> &[(GeomParam, f64, f64)] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn scale(&self, g: &GeometryParams) -> Vec<f64> {
        self.dims.iter().map(|&(p, lo, hi)| (g.get(p) - lo) / (hi - lo)).collect()
    }

    /// Geometry obtained by setting the design coordinates on top of `base`.
    pub fn unscale(&self, c: &[f64], base: &GeometryParams) -> GeometryParams {
        let mut g = *base;
        for (&(p, lo, hi), &v) in self.dims.iter().zip(c) {
            g.set(p, lo + v * (hi - lo));
        }
        g
    }

    /// True when `c` lies in the axis-aligned hull of `designs`.
    pub fn inside_hull(c: &[f64], designs: &[Vec<f64>]) -> bool {
        (0..c.len()).all(|j| {
            let lo = designs.iter().map(|d| d[j]).fold(f64::INFINITY, f64::min);
            let hi = designs.iter().map(|d| d[j]).fold(f64::NEG_INFINITY, f64::max);
            c[j] >= lo - 1e-12 && c[j] <= hi + 1e-12
        })
    }
}

pub fn check_tau(tau: &[f64]) -> Result<()> {
    match tau.iter().position(|&t| !(t > 0.0 && t < 1.0)) {
        Some(index) => Err(Error::Parameter { index, value: tau[index] }),
        None => Ok(()),
    }
}

/// `r_tau(c1, c2)`.
pub fn correlation(tau: &[f64], c1: &[f64], c2: &[f64]) -> Result<f64> {
    check_tau(tau)?;
    if c1.len() != tau.len() || c2.len() != tau.len() {
        return Err(Error::Dimension { expected: tau.len(), found: c1.len().max(c2.len()) });
    }
    Ok(corr(tau, c1, c2))
}

pub(crate) fn corr(tau: &[f64], c1: &[f64], c2: &[f64]) -> f64 {
    let e: f64 = tau
        .iter()
        .zip(c1.iter().zip(c2))
        .map(|(t, (a, b))| 4.0 * (a - b) * (a - b) * t.ln())
        .sum();
    e.exp()
}

/// `R_tau` over the design list.
pub fn correlation_matrix(tau: &[f64], designs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = designs.len();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = corr(tau, &designs[i], &designs[j]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Cholesky factor of `R_tau`, jittered if needed. The error names the
/// closest pair of designs.
pub fn factor_correlation(tau: &[f64], designs: &[Vec<f64>]) -> Result<Factor> {
    check_tau(tau)?;
    cholesky_jittered(&correlation_matrix(tau, designs)).ok_or_else(|| {
        let (first, second) = nearest_pair(designs);
        Error::Conditioning { first, second }
    })
}

fn nearest_pair(designs: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 1.min(designs.len().saturating_sub(1)), f64::INFINITY);
    for i in 0..designs.len() {
        for j in 0..i {
            let d: f64 = designs[i].iter().zip(&designs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.2 {
                best = (j, i, d);
            }
        }
    }
    (best.0, best.1)
}

/// Variance factors at or below this are treated as an exact interpolation.
const ZERO_VARIANCE: f64 = 1e-12;

/// Whether the predictive law uses the full `T` or only its diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceModel {
    /// Co-kriging with cross-covariances between modes.
    Joint,
    /// Independent kriging per mode, `D = diag(T)`.
    Independent,
}

/// Fitted model of one time step.
#[derive(Debug, Clone)]
pub struct GpModelSlice {
    pub mu: DVector<f64>,
    pub t_cov: DMatrix<f64>,
    /// Sparse precision from the graphical lasso, if the model was fitted.
    pub precision: Option<DMatrix<f64>>,
    pub tau: Vec<f64>,
    pub designs: Vec<Vec<f64>>,
    /// `n x K` training coefficients.
    pub coeffs: DMatrix<f64>,
    factor: Factor,
    // R^{-1} (B - 1 mu')
    weights: DMatrix<f64>,
}

/// Conditional law of the coefficients at a new design.
#[derive(Debug, Clone)]
pub struct CoefficientPrediction {
    pub mean: DVector<f64>,
    /// `1 - r' R^{-1} r`, before clamping.
    pub variance_factor: f64,
    pub t_cov: DMatrix<f64>,
}

impl CoefficientPrediction {
    pub fn covariance(&self, model: CovarianceModel) -> DMatrix<f64> {
        let s = self.variance_factor.max(0.0);
        match model {
            CovarianceModel::Joint => &self.t_cov * s,
            CovarianceModel::Independent => DMatrix::from_diagonal(&self.t_cov.diagonal()) * s,
        }
    }
}

impl GpModelSlice {
    pub fn new(
        mu: DVector<f64>,
        t_cov: DMatrix<f64>,
        precision: Option<DMatrix<f64>>,
        tau: Vec<f64>,
        designs: Vec<Vec<f64>>,
        coeffs: DMatrix<f64>,
    ) -> Result<Self> {
        let k = mu.len();
        let n = designs.len();
        if t_cov.shape() != (k, k) {
            return Err(Error::Dimension { expected: k, found: t_cov.nrows() });
        }
        if coeffs.shape() != (n, k) {
            return Err(Error::Dimension { expected: n * k, found: coeffs.len() });
        }
        if let Some(d) = designs.iter().find(|d| d.len() != tau.len()) {
            return Err(Error::Dimension { expected: tau.len(), found: d.len() });
        }
        if k > 0 {
            let asym = (&t_cov - t_cov.transpose()).abs().max();
            if asym > 1e-10 * t_cov.abs().max().max(1.0) {
                return Err(Error::NotPositiveDefinite(format!("T is not symmetric (asymmetry {asym:e})")));
            }
            if !(min_eigenvalue(&t_cov) > 0.0) {
                return Err(Error::NotPositiveDefinite("T has a non-positive eigenvalue".into()));
            }
        }
        let factor = factor_correlation(&tau, &designs)?;
        let centered = centered_coeffs(&coeffs, &mu);
        let weights = factor.solve(&centered);
        Ok(GpModelSlice { mu, t_cov, precision, tau, designs, coeffs, factor, weights })
    }

    pub fn n_modes(&self) -> usize {
        self.mu.len()
    }

    pub fn n_runs(&self) -> usize {
        self.designs.len()
    }

    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    /// Conditional mean and covariance scale at `c_new`.
    pub fn predict(&self, c_new: &[f64]) -> Result<CoefficientPrediction> {
        if c_new.len() != self.tau.len() {
            return Err(Error::Dimension { expected: self.tau.len(), found: c_new.len() });
        }
        let r = DVector::from_fn(self.n_runs(), |i, _| corr(&self.tau, c_new, &self.designs[i]));
        let mean = &self.mu + self.weights.tr_mul(&r);
        let rinv_r = self.factor.solve_vec(&r);
        let variance_factor = 1.0 - r.dot(&rinv_r);
        Ok(CoefficientPrediction { mean, variance_factor, t_cov: self.t_cov.clone() })
    }

    /// Whether `beta_obs` lies in the `100 (1 - alpha)%` highest-density
    /// confidence region of the predictive law at `c_new`.
    pub fn hdcr_contains(&self, c_new: &[f64], beta_obs: &DVector<f64>, alpha: f64, model: CovarianceModel) -> Result<bool> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha = {alpha} outside (0, 1)")));
        }
        let pred = self.predict(c_new)?;
        if beta_obs.len() != pred.mean.len() {
            return Err(Error::Dimension { expected: pred.mean.len(), found: beta_obs.len() });
        }
        let d = beta_obs - &pred.mean;
        if pred.variance_factor <= ZERO_VARIANCE {
            return Ok(d.iter().all(|&v| v == 0.0));
        }
        let dist = mahalanobis(&d, &self.t_cov, model)?;
        Ok(dist <= pred.variance_factor * chi2_quantile(1.0 - alpha, d.len() as f64))
    }
}

/// `d' D^{-1} d` with `D = T` or `diag(T)`.
pub fn mahalanobis(d: &DVector<f64>, t_cov: &DMatrix<f64>, model: CovarianceModel) -> Result<f64> {
    match model {
        CovarianceModel::Joint => {
            let chol = crate::linalg::cholesky_spd(t_cov, "T")?;
            Ok(d.dot(&chol.solve_vec(d)))
        }
        CovarianceModel::Independent => Ok(d.iter().zip(t_cov.diagonal().iter()).map(|(v, t)| v * v / t).sum()),
    }
}

pub(crate) fn centered_coeffs(b: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut c = b.clone();
    for mut row in c.row_iter_mut() {
        row -= mu.transpose();
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn correlation_basics() {
        assert_eq!(correlation(&[0.3, 0.7], &[0.2, 0.4], &[0.2, 0.4]).unwrap(), 1.0);
        assert!((correlation(&[0.5], &[0.0], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(correlation(&[1.0], &[0.0], &[0.5]), Err(Error::Parameter { index: 0, .. })));
        assert!(correlation(&[0.0], &[0.0], &[0.5]).is_err());
    }

    fn toy_model() -> GpModelSlice {
        let designs = vec![vec![0.1, 0.2], vec![0.8, 0.3], vec![0.4, 0.9]];
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 0.7, -1.1]);
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        GpModelSlice::new(DVector::from_vec(vec![0.2, -0.1]), t, None, vec![0.4, 0.6], designs, b).unwrap()
    }

    #[test]
    fn training_point_is_interpolated() {
        let m = toy_model();
        for i in 0..3 {
            let p = m.predict(&m.designs[i].clone()).unwrap();
            assert!(p.variance_factor.abs() < 1e-12);
            for k in 0..2 {
                assert!((p.mean[k] - m.coeffs[(i, k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let m = toy_model();
        let p = m.predict(&[40.0, -40.0]).unwrap();
        assert!((p.mean.clone() - &m.mu).norm() < 1e-15);
        assert!((p.variance_factor - 1.0).abs() < 1e-15);
        assert!((p.covariance(CovarianceModel::Joint) - &m.t_cov).norm() < 1e-15);
    }

    #[test]
    fn hdcr_membership() {
        let m = toy_model();
        let c = [0.5, 0.5];
        let mean = m.predict(&c).unwrap().mean;
        assert!(m.hdcr_contains(&c, &mean, 0.05, CovarianceModel::Joint).unwrap());
        let off = &mean + DVector::from_vec(vec![0.05, 0.0]);
        assert!(!m.hdcr_contains(&c, &off, 1.0 - 1e-12, CovarianceModel::Joint).unwrap());
        assert!(m.hdcr_contains(&c, &mean, 0.5, CovarianceModel::Independent).unwrap());
        assert!(m.hdcr_contains(&c, &mean, 0.0, CovarianceModel::Joint).is_err());
        // zero predictive variance at a training point: exact equality decides
        let at = m.designs[0].clone();
        let obs = DVector::from_vec(vec![m.coeffs[(0, 0)] + 1e-3, m.coeffs[(0, 1)]]);
        assert!(!m.hdcr_contains(&at, &obs, 0.1, CovarianceModel::Joint).unwrap());
    }

    #[test]
    fn rejects_non_spd_t() {
        let designs = vec![vec![0.1], vec![0.9]];
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = GpModelSlice::new(DVector::zeros(2), t, None, vec![0.5], designs, DMatrix::zeros(2, 2));
        assert!(matches!(r, Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn design_scaling_round_trips() {
        let space = DesignSpace::full();
        let g = GeometryParams::nominal();
        let c = space.scale(&g);
        assert!(c.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert_eq!(space.unscale(&c, &g), g);
    }
}
