//! JSON form of a synthetic ensemble specification.

use std::path::Path;

use flowemu_core::cokrige::DesignSpace;
use flowemu_core::geometry::{GeomParam, GeometryParams};
use flowemu_core::synth::{coupled_covariance, space_filling_design, SyntheticSpec, SyntheticVariable};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::read_json;
use crate::bundle::{design_space, DesignRange};
use crate::error::{validation, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub n_modes: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BaseGeometry {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "R_n")]
    pub nozzle_radius: f64,
    pub delta: f64,
    pub theta: f64,
    #[serde(rename = "dL")]
    pub inlet_offset: f64,
}

impl From<BaseGeometry> for GeometryParams {
    fn from(b: BaseGeometry) -> Self {
        GeometryParams {
            length: b.length,
            nozzle_radius: b.nozzle_radius,
            inlet_diameter: b.delta,
            injection_angle: b.theta,
            inlet_offset: b.inlet_offset,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthSpecFile {
    /// Design parameters with their admissible ranges, or names with default ranges.
    #[serde(default)]
    pub design: Vec<DesignRange>,
    #[serde(default)]
    pub design_params: Vec<String>,
    /// Non-design parameters; nominal values when absent.
    #[serde(default)]
    pub base: Option<BaseGeometry>,
    /// Explicit training designs in `[0, 1]^p`; otherwise a Latin hypercube of `n_runs` points.
    #[serde(default)]
    pub designs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub n_runs: Option<usize>,
    /// Held-out designs generated jointly with the training runs but kept out of the manifest.
    #[serde(default)]
    pub holdout: Vec<Vec<f64>>,
    pub variables: Vec<VariableSpec>,
    pub mu: Vec<f64>,
    /// Either a full `T*` or per-mode scales with planted `(i, j, partial correlation)` couplings.
    #[serde(default)]
    pub t_cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    #[serde(default)]
    pub couplings: Vec<(usize, usize, f64)>,
    pub tau: Vec<f64>,
    pub n_steps: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    pub grid: (usize, usize),
    #[serde(default = "default_downstream")]
    pub downstream: (f64, f64),
}

fn default_downstream() -> (f64, f64) {
    (20.0, 6.0)
}

impl SynthSpecFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn space(&self) -> Result<DesignSpace> {
        if !self.design.is_empty() {
            return design_space(&self.design);
        }
        if self.design_params.is_empty() {
            return Err(validation("spec field `design` (or `design_params`) is empty"));
        }
        let params = self
            .design_params
            .iter()
            .map(|n| GeomParam::from_name(n).ok_or_else(|| validation(format!("design_params: unknown parameter {n:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(DesignSpace::with_default_ranges(&params))
    }

    /// The core specification over training and held-out designs together, and the training count.
    pub fn to_spec(&self, seed: u64) -> Result<(SyntheticSpec, usize)> {
        let space = self.space()?;
        let p = space.dim();
        let designs = match (&self.designs, self.n_runs) {
            (Some(d), _) => d.clone(),
            (None, Some(n)) if n > 0 => space_filling_design(p, n, seed),
            _ => return Err(validation("spec needs `designs` or a positive `n_runs`")),
        };
        let n_train = designs.len();
        let mut all = designs;
        all.extend(self.holdout.iter().cloned());
        let k: usize = self.variables.iter().map(|v| v.n_modes).sum();
        let t_cov = match (&self.t_cov, &self.scales) {
            (Some(rows), _) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(validation(format!("spec field `t_cov` must be {k}x{k}")));
                }
                DMatrix::from_fn(k, k, |i, j| rows[i][j])
            }
            (None, Some(s)) => {
                if s.len() != k {
                    return Err(validation(format!("spec field `scales` needs {k} entries")));
                }
                coupled_covariance(s, &self.couplings)?
            }
            (None, None) => coupled_covariance(&vec![1.0; k], &self.couplings)?,
        };
        let spec = SyntheticSpec {
            space,
            base: self.base.map(GeometryParams::from).unwrap_or_else(GeometryParams::nominal),
            designs: all,
            variables: self.variables.iter().map(|v| SyntheticVariable { name: v.name.clone(), n_modes: v.n_modes }).collect(),
            mu: DVector::from_vec(self.mu.clone()),
            t_cov,
            tau: self.tau.clone(),
            n_steps: self.n_steps,
            noise: self.noise,
            seed,
            grid: self.grid,
            downstream: self.downstream,
        };
        spec.validate()?;
        Ok((spec, n_train))
    }
}
