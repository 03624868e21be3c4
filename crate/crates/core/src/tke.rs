//! Turbulent kinetic energy at a point: its MMSE prediction and its
//! predictive law as a weighted sum of noncentral chi-squares.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::cokrige::{CoefficientPrediction, CovarianceModel};
use crate::cpod::CpodBasis;
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_rescale_map, RunGeometry};
use crate::idw::{IdwWeights, DEFAULT_NEIGHBOURS};
use crate::linalg::sym_eigen_desc;
use crate::wncq::WncqDistribution;

/// Eigenvalues of `Phi` at or below this fraction of the largest are treated as zero.
pub const NULL_TOL: f64 = 1e-12;

/// One velocity component sampled at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeComponent {
    pub name: String,
    pub offset: usize,
    /// Mapped mode values at the point.
    pub row: DVector<f64>,
    /// Removed snapshot mean at the point (zero without centring).
    pub mean: f64,
}

/// The velocity modes of a basis evaluated at one point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProbe {
    pub point: [f64; 2],
    pub components: Vec<ProbeComponent>,
}

/// Evaluates the modes of the named velocity variables at `points` of a run with geometry `geom`.
pub fn velocity_probes(basis: &CpodBasis, geom: &RunGeometry, points: &[[f64; 2]], velocity: &[&str]) -> Result<Vec<VelocityProbe>> {
    if velocity.is_empty() {
        return Err(invalid("at least one velocity variable is required"));
    }
    let idx = velocity
        .iter()
        .map(|name| basis.variable_index(name).ok_or_else(|| invalid(alloc::format!("velocity variable {name} is not in the basis"))))
        .collect::<Result<Vec<usize>>>()?;
    let map = build_rescale_map(geom, &basis.reference)?;
    let moved = points.iter().map(|&p| map.apply(p)).collect::<Result<Vec<_>>>()?;
    let k = DEFAULT_NEIGHBOURS.min(basis.grid.len());
    let weights = IdwWeights::new(basis.grid.points(), &moved, k)?;
    let offsets = basis.offsets();
    let mut rows: Vec<Vec<ProbeComponent>> = (0..points.len()).map(|_| Vec::new()).collect();
    for &r in &idx {
        let v = &basis.variables[r];
        let sampled = (0..v.n_modes())
            .map(|c| {
                let col: Vec<f64> = v.modes.column(c).iter().copied().collect();
                weights.apply(&col)
            })
            .collect::<Result<Vec<_>>>()?;
        let means = match &v.mean {
            Some(m) => weights.apply(m.as_slice())?,
            None => alloc::vec![0.0; points.len()],
        };
        for (q, comps) in rows.iter_mut().enumerate() {
            comps.push(ProbeComponent {
                name: v.name.clone(),
                offset: offsets[r],
                row: DVector::from_fn(v.n_modes(), |c, _| sampled[c][q]),
                mean: means[q],
            });
        }
    }
    Ok(points.iter().zip(rows).map(|(&point, components)| VelocityProbe { point, components }).collect())
}

impl VelocityProbe {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Predicted velocity components at the point.
    pub fn predicted(&self, pred: &CoefficientPrediction) -> DVector<f64> {
        DVector::from_fn(self.dim(), |a, _| {
            let c = &self.components[a];
            c.mean + c.row.dot(&pred.mean.rows(c.offset, c.row.len()))
        })
    }

    /// `Phi = M V M'` with `M` block-diagonal in the mode rows and `V` the
    /// velocity block of the coefficient predictive covariance.
    pub fn phi(&self, pred: &CoefficientPrediction, model: CovarianceModel) -> DMatrix<f64> {
        let cov = pred.covariance(model);
        let d = self.dim();
        DMatrix::from_fn(d, d, |a, b| {
            let (ca, cb) = (&self.components[a], &self.components[b]);
            let block = cov.view((ca.offset, cb.offset), (ca.row.len(), cb.row.len()));
            ca.row.dot(&(block * &cb.row))
        })
    }
}

fn check_means(probe: &VelocityProbe, time_means: &[f64]) -> Result<()> {
    if time_means.len() != probe.dim() {
        return Err(Error::Dimension { expected: probe.dim(), found: time_means.len() });
    }
    Ok(())
}

/// `E[kappa] = 1/2 |y_hat - y_bar|^2 + 1/2 tr Phi`.
pub fn tke_predict(probe: &VelocityProbe, pred: &CoefficientPrediction, model: CovarianceModel, time_means: &[f64]) -> Result<f64> {
    check_means(probe, time_means)?;
    let diff = probe.predicted(pred) - DVector::from_column_slice(time_means);
    Ok(0.5 * diff.norm_squared() + 0.5 * probe.phi(pred, model).trace())
}

/// Predictive law of `kappa` at the probe.
pub fn tke_distribution(probe: &VelocityProbe, pred: &CoefficientPrediction, model: CovarianceModel, time_means: &[f64]) -> Result<WncqDistribution> {
    check_means(probe, time_means)?;
    let diff = probe.predicted(pred) - DVector::from_column_slice(time_means);
    wncq_from_phi(&probe.phi(pred, model), &diff)
}

/// Law of `1/2 |diff + Phi^{1/2} z|^2` for standard normal `z`. Directions in
/// the null space of `Phi` contribute a deterministic offset.
pub fn wncq_from_phi(phi: &DMatrix<f64>, diff: &DVector<f64>) -> Result<WncqDistribution> {
    if phi.shape() != (diff.len(), diff.len()) {
        return Err(Error::Dimension { expected: diff.len(), found: phi.nrows() });
    }
    let (values, vectors) = sym_eigen_desc(phi);
    let lead = values.first().copied().unwrap_or(0.0);
    if !(lead > 0.0) {
        return Ok(WncqDistribution::point_mass(0.5 * diff.norm_squared()));
    }
    let mut weights = Vec::new();
    let mut nc = Vec::new();
    let mut rest = diff.clone();
    for (j, &l) in values.iter().enumerate() {
        if l <= NULL_TOL * lead {
            continue;
        }
        let u = vectors.column(j);
        let proj = u.dot(diff);
        rest.axpy(-proj, &u, 1.0);
        weights.push(0.5 * l);
        nc.push(proj * proj / l);
    }
    WncqDistribution::new(weights, nc, 0.5 * rest.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::chi2_cdf;
    use crate::wncq::CdfMethod;
    use alloc::vec;

    fn probe3() -> VelocityProbe {
        let comp = |name: &str, offset| ProbeComponent { name: name.into(), offset, row: DVector::from_element(1, 1.0), mean: 0.0 };
        VelocityProbe { point: [0.0, 0.0], components: vec![comp("u", 0), comp("v", 1), comp("w", 2)] }
    }

    #[test]
    fn unit_modes_and_identity_cov_give_identity_phi() {
        let pred = CoefficientPrediction { mean: DVector::zeros(3), variance_factor: 1.0, t_cov: DMatrix::identity(3, 3) };
        assert_eq!(probe3().phi(&pred, CovarianceModel::Joint), DMatrix::identity(3, 3));
    }

    #[test]
    fn zero_phi_is_deterministic() {
        let pred = CoefficientPrediction { mean: DVector::from_vec(vec![1.0, 2.0, 0.5]), variance_factor: 0.0, t_cov: DMatrix::identity(3, 3) };
        let p = probe3();
        let k = tke_predict(&p, &pred, CovarianceModel::Joint, &[0.0, 1.0, 0.5]).unwrap();
        assert!((k - 0.5 * (1.0 + 1.0)).abs() < 1e-15);
        let d = tke_distribution(&p, &pred, CovarianceModel::Joint, &[0.0, 1.0, 0.5]).unwrap();
        assert!(d.is_degenerate());
        assert_eq!(d.offset, k);
    }

    #[test]
    fn single_mode_with_phi_two_is_chi2_one() {
        let phi = DMatrix::from_element(1, 1, 2.0);
        let d = wncq_from_phi(&phi, &DVector::zeros(1)).unwrap();
        assert!((d.cdf(1.0, CdfMethod::Imhof).unwrap() - chi2_cdf(1.0, 1.0)).abs() < 1e-8);
        assert!((d.cdf(1.0, CdfMethod::Imhof).unwrap() - 0.6827).abs() < 1e-4);
    }

    #[test]
    fn distribution_mean_equals_prediction() {
        let t = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 0.7]);
        let pred = CoefficientPrediction { mean: DVector::from_vec(vec![0.4, -1.0, 2.0]), variance_factor: 0.3, t_cov: t };
        let p = probe3();
        let means = [0.1, 0.2, 0.3];
        for model in [CovarianceModel::Joint, CovarianceModel::Independent] {
            let k = tke_predict(&p, &pred, model, &means).unwrap();
            let d = tke_distribution(&p, &pred, model, &means).unwrap();
            assert!((d.mean() - k).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_phi_keeps_null_space_offset() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let d = wncq_from_phi(&phi, &DVector::from_vec(vec![0.0, 2.0])).unwrap();
        assert_eq!(d.weights, vec![0.5]);
        assert!((d.offset - 2.0).abs() < 1e-15);
    }
}
