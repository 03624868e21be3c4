//! Run manifests and the on-disk basis and model bundles.

use std::fs;
use std::path::{Path, PathBuf};

use flowemu_core::cokrige::{DesignSpace, GpModelSlice};
use flowemu_core::cpod::{CoefficientTensor, CpodBasis, VariableBasis};
use flowemu_core::estimate::FitReport;
use flowemu_core::geometry::{GeomParam, RunGeometry};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::{grid_to_matrix, read_grid, read_json, write_json, GeometryFile};
use crate::cpd;
use crate::error::{io_err, validation, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DesignRange {
    pub param: String,
    pub min: f64,
    pub max: f64,
}

pub fn design_space(ranges: &[DesignRange]) -> Result<DesignSpace> {
    let dims = ranges
        .iter()
        .map(|r| {
            let p = GeomParam::from_name(&r.param)
                .ok_or_else(|| validation(format!("design.param: unknown parameter {:?} (expected L, R_n, delta, theta or dL)", r.param)))?;
            Ok((p, r.min, r.max))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignSpace::new(dims)?)
}

pub fn design_ranges(space: &DesignSpace) -> Vec<DesignRange> {
    space.dims().iter().map(|&(p, min, max)| DesignRange { param: p.name().into(), min, max }).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    /// Snapshot archive directories, relative to the manifest.
    pub runs: Vec<PathBuf>,
    /// Design-range table for input scaling. Defaults to the parameters that
    /// vary across runs, with their admissible ranges.
    #[serde(default)]
    pub design: Vec<DesignRange>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<(RunManifest, Vec<PathBuf>)> {
        let m: RunManifest = read_json(path)?;
        if m.runs.is_empty() {
            return Err(validation(format!("{}: field `runs` is empty", path.display())));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let dirs: Vec<PathBuf> = m.runs.iter().map(|r| base.join(r)).collect();
        for d in &dirs {
            if !d.join("geometry.json").exists() {
                return Err(validation(format!("{}: field `runs` names {}, which is not a snapshot archive", path.display(), d.display())));
            }
        }
        for r in &m.design {
            if !(r.min < r.max) {
                return Err(validation(format!("{}: field `design` range of {} must satisfy min < max", path.display(), r.param)));
            }
        }
        Ok((m, dirs))
    }
}

/// Parameters that differ across `geoms`, with their admissible ranges.
pub fn varying_space(geoms: &[RunGeometry]) -> Result<DesignSpace> {
    let params: Vec<GeomParam> = GeomParam::ALL
        .iter()
        .copied()
        .filter(|&p| geoms.iter().any(|g| g.params.get(p) != geoms[0].params.get(p)))
        .collect();
    if params.is_empty() {
        return Err(validation("all runs share one geometry; supply a `design` table"));
    }
    Ok(DesignSpace::with_default_ranges(&params))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VariableEntry {
    pub name: String,
    pub n_modes: usize,
    pub eigenvalues: Vec<f64>,
    pub total_energy: f64,
    pub centered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BasisFile {
    pub variables: Vec<VariableEntry>,
    pub reference_run: usize,
    pub reference: GeometryFile,
    pub n_runs: usize,
    pub n_steps: usize,
    pub runs: Vec<GeometryFile>,
    pub design: Vec<DesignRange>,
    pub energy_target: f64,
}

/// A basis bundle in memory.
#[derive(Debug, Clone)]
pub struct BasisBundle {
    pub basis: CpodBasis,
    pub coeffs: CoefficientTensor,
    pub space: DesignSpace,
    pub geometries: Vec<RunGeometry>,
    pub energy_target: f64,
}

impl BasisBundle {
    /// Scaled design coordinates of the training runs.
    pub fn designs(&self) -> Vec<Vec<f64>> {
        self.geometries.iter().map(|g| self.space.scale(&g.params)).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let b = &self.basis;
        let meta = BasisFile {
            variables: b
                .variables
                .iter()
                .map(|v| VariableEntry {
                    name: v.name.clone(),
                    n_modes: v.n_modes(),
                    eigenvalues: v.eigenvalues.clone(),
                    total_energy: v.total_energy,
                    centered: v.mean.is_some(),
                })
                .collect(),
            reference_run: b.reference_run,
            reference: GeometryFile::from_geometry(&b.reference),
            n_runs: self.coeffs.n_runs(),
            n_steps: self.coeffs.n_steps(),
            runs: self.geometries.iter().map(GeometryFile::from_geometry).collect(),
            design: design_ranges(&self.space),
            energy_target: self.energy_target,
        };
        write_json(&dir.join("basis.json"), &meta)?;
        cpd::write(&dir.join("grid.bin"), &grid_to_matrix(&b.grid))?;
        for v in &b.variables {
            cpd::write(&dir.join(format!("modes_{}.bin", v.name)), &v.modes)?;
            if let Some(m) = &v.mean {
                cpd::write(&dir.join(format!("mean_{}.bin", v.name)), &DMatrix::from_column_slice(m.len(), 1, m.as_slice()))?;
            }
        }
        let (t, n, k) = (self.coeffs.n_steps(), self.coeffs.n_runs(), self.coeffs.n_modes());
        let c = DMatrix::from_fn(k, t * n, |m, col| self.coeffs.get(col / n, col % n, m));
        cpd::write(&dir.join("coeffs.bin"), &c)
    }

    pub fn read(dir: &Path) -> Result<BasisBundle> {
        let meta: BasisFile = read_json(&dir.join("basis.json"))?;
        let grid = read_grid(&dir.join("grid.bin"))?;
        let mut variables = Vec::with_capacity(meta.variables.len());
        for v in &meta.variables {
            let path = dir.join(format!("modes_{}.bin", v.name));
            let modes = cpd::read(&path)?;
            if modes.shape() != (grid.len(), v.n_modes) {
                return Err(crate::error::format_err(&path, format!("expected {}x{} modes", grid.len(), v.n_modes)));
            }
            let mean = if v.centered {
                let m = cpd::read(&dir.join(format!("mean_{}.bin", v.name)))?;
                Some(DVector::from_column_slice(m.as_slice()))
            } else {
                None
            };
            variables.push(VariableBasis { name: v.name.clone(), modes, eigenvalues: v.eigenvalues.clone(), total_energy: v.total_energy, mean });
        }
        let c = cpd::read(&dir.join("coeffs.bin"))?;
        let (t, n) = (meta.n_steps, meta.n_runs);
        let k: usize = meta.variables.iter().map(|v| v.n_modes).sum();
        if c.shape() != (k, t * n) {
            return Err(crate::error::format_err(&dir.join("coeffs.bin"), format!("expected {k}x{} coefficients", t * n)));
        }
        let mut coeffs = CoefficientTensor::zeros(t, n, k);
        for col in 0..t * n {
            for m in 0..k {
                coeffs.set(col / n, col % n, m, c[(m, col)]);
            }
        }
        let reference = meta.reference.geometry(&grid);
        let geometries = meta.runs.iter().map(|g| g.geometry(&grid)).collect();
        let basis = CpodBasis { reference, reference_run: meta.reference_run, grid, variables };
        Ok(BasisBundle { basis, coeffs, space: design_space(&meta.design)?, geometries, energy_target: meta.energy_target })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub n_steps: usize,
    pub n_modes: usize,
    /// Variable index of every stacked mode.
    pub owners: Vec<usize>,
    pub variables: Vec<String>,
    pub design: Vec<DesignRange>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepFile {
    pub step: usize,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub lambda: f64,
    /// Penalised negative log-likelihood at the optimum.
    pub nll: f64,
    /// `-nll / 2`, up to the constant.
    pub log_likelihood: f64,
    pub converged: bool,
    pub start: usize,
    pub bcd_iters: usize,
    pub edges: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_curve: Option<Vec<(f64, f64, f64)>>,
}

/// One fitted slice with its diagnostics.
#[derive(Debug, Clone)]
pub struct FittedSlice {
    pub model: GpModelSlice,
    pub report: FitReport,
    pub edges: usize,
    pub cv_curve: Option<Vec<(f64, f64, f64)>>,
}

pub fn step_dir(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("step_{t:04}"))
}

pub fn write_models(dir: &Path, basis: &BasisBundle, slices: &[FittedSlice]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = ModelFile {
        n_steps: slices.len(),
        n_modes: basis.basis.n_modes(),
        owners: basis.basis.mode_owner(),
        variables: basis.basis.variables.iter().map(|v| v.name.clone()).collect(),
        design: design_ranges(&basis.space),
    };
    write_json(&dir.join("model.json"), &meta)?;
    let mask = basis.basis.coupling_mask();
    for (t, s) in slices.iter().enumerate() {
        let sd = step_dir(dir, t);
        fs::create_dir_all(&sd).map_err(io_err(&sd))?;
        let step = StepFile {
            step: t,
            mu: s.model.mu.iter().copied().collect(),
            tau: s.model.tau.clone(),
            lambda: s.report.lambda,
            nll: s.report.nll,
            log_likelihood: -0.5 * s.report.nll,
            converged: s.report.converged,
            start: s.report.start,
            bcd_iters: s.report.bcd_iters,
            edges: s.edges,
            cv_curve: s.cv_curve.clone(),
        };
        write_json(&sd.join("model.json"), &step)?;
        cpd::write(&sd.join("T.bin"), &s.model.t_cov)?;
        let prec = s.model.precision.as_ref().ok_or(Error::Core(flowemu_core::error::Error::Unfitted))?;
        cpd::write(&sd.join("precision.bin"), prec)?;
        let path = sd.join("edges.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| crate::error::format_err(&path, e.to_string()))?;
        let werr = |e: csv::Error| crate::error::format_err(&path, e.to_string());
        w.write_record(["i", "j", "precision", "partial_correlation"]).map_err(werr)?;
        for (i, j, _) in flowemu_core::coupling::slice_edges(prec, &mask) {
            let pc = flowemu_core::coupling::partial_correlation(prec, i, j);
            w.write_record([i.to_string(), j.to_string(), prec[(i, j)].to_string(), pc.to_string()]).map_err(werr)?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

/// Loads the per-step models; training coefficients and designs come from the basis bundle.
pub fn read_models(dir: &Path, basis: &BasisBundle) -> Result<(ModelFile, Vec<GpModelSlice>)> {
    let meta: ModelFile = read_json(&dir.join("model.json"))?;
    if meta.n_modes != basis.basis.n_modes() || meta.n_steps != basis.coeffs.n_steps() {
        return Err(Error::Stale(format!("model bundle {} does not match the basis bundle", dir.display())));
    }
    let designs = basis.designs();
    let models = (0..meta.n_steps)
        .map(|t| {
            let sd = step_dir(dir, t);
            let step: StepFile = read_json(&sd.join("model.json"))?;
            let t_cov = cpd::read(&sd.join("T.bin"))?;
            let prec = cpd::read(&sd.join("precision.bin"))?;
            Ok(GpModelSlice::new(DVector::from_vec(step.mu), t_cov, Some(prec), step.tau, designs.clone(), basis.coeffs.slice(t))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, models))
}
