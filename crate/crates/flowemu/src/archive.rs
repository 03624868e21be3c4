//! Snapshot archives: one directory per run holding `geometry.json`,
//! `grid.bin` (J x 2) and one `<var>.bin` (J x T) per field variable.

use std::fs;
use std::path::Path;

use flowemu_core::ensemble::{FieldVariable, SnapshotEnsemble};
use flowemu_core::geometry::{GeometryParams, Grid, RunGeometry};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cpd;
use crate::error::{format_err, io_err, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeometryFile {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "R_n")]
    pub nozzle_radius: f64,
    pub delta: f64,
    pub theta: f64,
    #[serde(rename = "dL")]
    pub inlet_offset: f64,
    #[serde(rename = "X_max", default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(rename = "Y_max", default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
    /// Field variables in order; when absent every `*.bin` other than the grid is read, sorted by name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<String>>,
}

impl GeometryFile {
    pub fn params(&self) -> GeometryParams {
        GeometryParams {
            length: self.length,
            nozzle_radius: self.nozzle_radius,
            inlet_diameter: self.delta,
            injection_angle: self.theta,
            inlet_offset: self.inlet_offset,
        }
    }

    pub fn from_geometry(g: &RunGeometry) -> Self {
        let p = g.params;
        GeometryFile {
            length: p.length,
            nozzle_radius: p.nozzle_radius,
            delta: p.inlet_diameter,
            theta: p.injection_angle,
            inlet_offset: p.inlet_offset,
            x_max: Some(g.x_max),
            y_max: Some(g.y_max),
            variables: None,
        }
    }

    /// The run geometry, taking missing extents from the grid's bounding box.
    pub fn geometry(&self, grid: &Grid) -> RunGeometry {
        let (bx, by) = grid.bounding_max();
        RunGeometry::new(self.params(), self.x_max.unwrap_or(bx), self.y_max.unwrap_or(by))
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn grid_to_matrix(grid: &Grid) -> DMatrix<f64> {
    DMatrix::from_fn(grid.len(), 2, |j, c| grid.points()[j][c])
}

pub fn grid_from_matrix(m: &DMatrix<f64>, path: &Path) -> Result<Grid> {
    if m.ncols() != 2 {
        return Err(format_err(path, format!("grid must have 2 columns, found {}", m.ncols())));
    }
    Ok(Grid::new((0..m.nrows()).map(|j| [m[(j, 0)], m[(j, 1)]]).collect())?)
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    grid_from_matrix(&cpd::read(path)?, path)
}

pub fn read_geometry(dir: &Path, grid: &Grid) -> Result<RunGeometry> {
    let g: GeometryFile = read_json(&dir.join("geometry.json"))?;
    Ok(g.geometry(grid))
}

pub fn read_run(dir: &Path) -> Result<SnapshotEnsemble> {
    let grid = read_grid(&dir.join("grid.bin"))?;
    let gfile: GeometryFile = read_json(&dir.join("geometry.json"))?;
    let names = match &gfile.variables {
        Some(v) => v.clone(),
        None => {
            let mut names = Vec::new();
            for entry in fs::read_dir(dir).map_err(io_err(dir))? {
                let path = entry.map_err(io_err(dir))?.path();
                if path.extension().is_some_and(|e| e == "bin") {
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                    if stem != "grid" {
                        names.push(stem);
                    }
                }
            }
            names.sort();
            names
        }
    };
    let fields = names
        .into_iter()
        .map(|name| {
            let values = cpd::read(&dir.join(format!("{name}.bin")))?;
            Ok(FieldVariable { name, values })
        })
        .collect::<Result<Vec<_>>>()?;
    let run = SnapshotEnsemble { geometry: gfile.geometry(&grid), grid, fields };
    run.validate().map_err(|e| format_err(dir, e.to_string()))?;
    Ok(run)
}

pub fn write_run(dir: &Path, run: &SnapshotEnsemble) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut g = GeometryFile::from_geometry(&run.geometry);
    g.variables = Some(run.fields.iter().map(|f| f.name.clone()).collect());
    write_json(&dir.join("geometry.json"), &g)?;
    cpd::write(&dir.join("grid.bin"), &grid_to_matrix(&run.grid))?;
    for f in &run.fields {
        cpd::write(&dir.join(format!("{}.bin", f.name)), &f.values)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(vec![[0.0, 0.0], [70.0, 1.0], [80.0, 6.0]]).unwrap();
        let run = SnapshotEnsemble {
            geometry: RunGeometry::new(GeometryParams::nominal(), 80.0, 6.0),
            grid,
            fields: vec![
                FieldVariable { name: "u".into(), values: DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64) },
                FieldVariable { name: "p".into(), values: DMatrix::from_element(3, 2, 0.5) },
            ],
        };
        write_run(dir.path(), &run).unwrap();
        assert_eq!(read_run(dir.path()).unwrap(), run);
    }

    #[test]
    fn missing_extents_default_to_bounding_box() {
        let text = r#"{"L": 30, "R_n": 3, "delta": 1, "theta": 60, "dL": 2}"#;
        let g: GeometryFile = serde_json::from_str(text).unwrap();
        let grid = Grid::new(vec![[0.0, 0.0], [45.0, 7.5]]).unwrap();
        let geom = g.geometry(&grid);
        assert_eq!((geom.x_max, geom.y_max), (45.0, 7.5));
    }
}
