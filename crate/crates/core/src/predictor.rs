//! Full-field prediction at a new geometry, pointwise variance and the
//! spatial error metric.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::cokrige::{CoefficientPrediction, DesignSpace, GpModelSlice};
use crate::cpod::CpodBasis;
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_rescale_map, Grid, RunGeometry};
use crate::idw::{IdwWeights, DEFAULT_NEIGHBOURS};

/// Modes of one variable carried onto a target grid.
#[derive(Debug, Clone)]
pub struct MappedVariable {
    pub name: String,
    /// `J_target x K_r`.
    pub modes: DMatrix<f64>,
    pub mean: Option<DVector<f64>>,
    /// Offset of this variable in the stacked coefficient vector.
    pub offset: usize,
}

/// Maps every common-grid mode onto `grid`, a grid of a run with geometry
/// `geom`: the grid is rescaled onto the reference geometry and the modes are
/// sampled there by inverse distance weighting.
pub fn map_modes(basis: &CpodBasis, geom: &RunGeometry, grid: &Grid) -> Result<Vec<MappedVariable>> {
    let map = build_rescale_map(geom, &basis.reference)?;
    let moved = map.apply_grid(grid)?;
    let k = DEFAULT_NEIGHBOURS.min(basis.grid.len());
    let weights = IdwWeights::new(basis.grid.points(), &moved, k)?;
    let offsets = basis.offsets();
    basis
        .variables
        .iter()
        .zip(offsets)
        .map(|(v, offset)| {
            let mut modes = DMatrix::zeros(grid.len(), v.n_modes());
            for c in 0..v.n_modes() {
                let col: Vec<f64> = v.modes.column(c).iter().copied().collect();
                modes.set_column(c, &DVector::from_vec(weights.apply(&col)?));
            }
            let mean = match &v.mean {
                Some(m) => Some(DVector::from_vec(weights.apply(m.as_slice())?)),
                None => None,
            };
            Ok(MappedVariable { name: v.name.clone(), modes, mean, offset })
        })
        .collect()
}

/// Mean and variance of one variable over the target grid and all time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedVariable {
    pub name: String,
    /// `J x T`.
    pub mean: DMatrix<f64>,
    /// `J x T`, clamped at zero.
    pub variance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedField {
    pub variables: Vec<PredictedVariable>,
}

impl PredictedField {
    pub fn variable(&self, name: &str) -> Option<&PredictedVariable> {
        self.variables.iter().find(|v| v.name == name)
    }
}

/// Predicted mean of one variable at one time step.
pub fn field_mean(mv: &MappedVariable, pred: &CoefficientPrediction) -> DVector<f64> {
    let kr = mv.modes.ncols();
    let beta = pred.mean.rows(mv.offset, kr);
    let mut out = &mv.modes * beta;
    if let Some(m) = &mv.mean {
        out += m;
    }
    out
}

/// Pointwise variance `sum_k V(beta_k) m_k(x)^2`.
pub fn field_variance(mv: &MappedVariable, pred: &CoefficientPrediction) -> DVector<f64> {
    let s = pred.variance_factor.max(0.0);
    let kr = mv.modes.ncols();
    DVector::from_fn(mv.modes.nrows(), |j, _| {
        (0..kr).map(|k| s * pred.t_cov[(mv.offset + k, mv.offset + k)] * mv.modes[(j, k)].powi(2)).sum()
    })
}

/// A fitted emulator: common basis, per-step models and the design scaling.
#[derive(Debug, Clone)]
pub struct Emulator {
    pub basis: CpodBasis,
    pub models: Vec<GpModelSlice>,
    pub space: DesignSpace,
}

impl Emulator {
    pub fn new(basis: CpodBasis, models: Vec<GpModelSlice>, space: DesignSpace) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Unfitted);
        }
        let k = basis.n_modes();
        for m in &models {
            if m.n_modes() != k {
                return Err(Error::Dimension { expected: k, found: m.n_modes() });
            }
            if m.tau.len() != space.dim() {
                return Err(Error::Dimension { expected: space.dim(), found: m.tau.len() });
            }
        }
        Ok(Emulator { basis, models, space })
    }

    pub fn n_steps(&self) -> usize {
        self.models.len()
    }

    /// Scaled design coordinates of a geometry, warning when outside the training hull.
    pub fn design_of(&self, geom: &RunGeometry) -> Vec<f64> {
        let c = self.space.scale(&geom.params);
        if !DesignSpace::inside_hull(&c, &self.models[0].designs) {
            log::warn!("design {c:?} lies outside the training hull; prediction extrapolates");
        }
        c
    }

    /// Coefficient predictions for every time step.
    pub fn coefficients(&self, c: &[f64]) -> Result<Vec<CoefficientPrediction>> {
        self.models.iter().map(|m| m.predict(c)).collect()
    }

    /// Predicted mean and variance of every variable on `grid` at geometry `geom`.
    pub fn predict_flow(&self, geom: &RunGeometry, grid: &Grid) -> Result<PredictedField> {
        let c = self.design_of(geom);
        let preds = self.coefficients(&c)?;
        let mapped = map_modes(&self.basis, geom, grid)?;
        Ok(assemble_field(&mapped, &preds))
    }
}

/// Combines mapped modes with per-step coefficient predictions.
pub fn assemble_field(mapped: &[MappedVariable], preds: &[CoefficientPrediction]) -> PredictedField {
    let variables = mapped
        .iter()
        .map(|mv| {
            let j = mv.modes.nrows();
            let mut mean = DMatrix::zeros(j, preds.len());
            let mut variance = DMatrix::zeros(j, preds.len());
            for (t, p) in preds.iter().enumerate() {
                mean.set_column(t, &field_mean(mv, p));
                variance.set_column(t, &field_variance(mv, p));
            }
            PredictedVariable { name: mv.name.clone(), mean, variance }
        })
        .collect();
    PredictedField { variables }
}

/// Mean relative error in percent over the points where `region` is true.
/// A vanishing reference field gives `UndefinedMre(0)`.
pub fn mre(sim: &[f64], pred: &[f64], region: &[bool]) -> Result<f64> {
    if sim.len() != pred.len() || sim.len() != region.len() {
        return Err(Error::Dimension { expected: sim.len(), found: pred.len().min(region.len()) });
    }
    if !region.iter().any(|&r| r) {
        return Err(invalid("MRE region is empty"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((&y, &yh), &r) in sim.iter().zip(pred).zip(region) {
        if r {
            num += (y - yh).abs();
            den += y.abs();
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMre(0));
    }
    Ok(100.0 * num / den)
}

/// MRE for every time step (columns of `sim` and `pred`).
pub fn mre_series(sim: &DMatrix<f64>, pred: &DMatrix<f64>, region: &[bool]) -> Vec<Result<f64>> {
    (0..sim.ncols())
        .map(|t| {
            let a: Vec<f64> = sim.column(t).iter().copied().collect();
            let b: Vec<f64> = pred.column(t).iter().copied().collect();
            mre(&a, &b, region).map_err(|e| match e {
                Error::UndefinedMre(_) => Error::UndefinedMre(t),
                other => other,
            })
        })
        .collect()
}
