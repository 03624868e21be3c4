//! Per-run snapshot data.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::geometry::{Grid, RunGeometry};

/// One field variable of a run: a `J x T` matrix, one column per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVariable {
    pub name: String,
    pub values: DMatrix<f64>,
}

/// The grid and time-resolved fields of a single simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEnsemble {
    pub geometry: RunGeometry,
    pub grid: Grid,
    pub fields: Vec<FieldVariable>,
}

impl SnapshotEnsemble {
    pub fn n_steps(&self) -> usize {
        self.fields.first().map_or(0, |f| f.values.ncols())
    }

    pub fn field(&self, name: &str) -> Option<&FieldVariable> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let j = self.grid.len();
        let t = self.n_steps();
        for f in &self.fields {
            if f.values.nrows() != j || f.values.ncols() != t {
                return Err(invalid(format!(
                    "field {} is {}x{}, expected {j}x{t}",
                    f.name,
                    f.values.nrows(),
                    f.values.ncols()
                )));
            }
            if f.values.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("field {} has non-finite values", f.name)));
            }
        }
        Ok(())
    }
}

/// Checks that every run carries the same variables (in order) and time steps.
pub fn check_consistent(runs: &[SnapshotEnsemble]) -> Result<(Vec<String>, usize)> {
    let first = runs.first().ok_or_else(|| invalid("ensemble has no runs"))?;
    let names: Vec<String> = first.fields.iter().map(|f| f.name.clone()).collect();
    let steps = first.n_steps();
    if names.is_empty() || steps == 0 {
        return Err(invalid("runs must carry at least one variable and one time step"));
    }
    for (i, run) in runs.iter().enumerate() {
        run.validate()?;
        let these: Vec<&str> = run.fields.iter().map(|f| f.name.as_str()).collect();
        if these.len() != names.len() || these.iter().zip(&names).any(|(a, b)| *a != b.as_str()) {
            return Err(invalid(format!("run {i} has variables {these:?}, expected {names:?}")));
        }
        if run.n_steps() != steps {
            return Err(invalid(format!("run {i} has {} time steps, expected {steps}", run.n_steps())));
        }
    }
    Ok((names, steps))
}
