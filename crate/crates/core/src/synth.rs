//! Synthetic ensembles drawn from the emulator's own generative model, with
//! known modes and coefficient law.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cokrige::{correlation_matrix, DesignSpace};
use crate::cpod::{CoefficientTensor, CouplingMask};
use crate::ensemble::{FieldVariable, SnapshotEnsemble};
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_rescale_map, GeometryParams, Grid, RunGeometry};
use crate::linalg::{cholesky_jittered, cholesky_spd, min_eigenvalue};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVariable {
    pub name: String,
    pub n_modes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub space: DesignSpace,
    /// Values of the parameters that are not design dimensions.
    pub base: GeometryParams,
    /// Design points in `[0, 1]^p`, one per run.
    pub designs: Vec<Vec<f64>>,
    pub variables: Vec<SyntheticVariable>,
    pub mu: DVector<f64>,
    pub t_cov: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub n_steps: usize,
    /// Standard deviation of additive field noise.
    pub noise: f64,
    pub seed: u64,
    /// Structured reference grid resolution `(nx, ny)`.
    pub grid: (usize, usize),
    /// Downstream length and height beyond `L` and `R_n`, in mm.
    pub downstream: (f64, f64),
}

impl SyntheticSpec {
    pub fn n_modes(&self) -> usize {
        self.variables.iter().map(|v| v.n_modes).sum()
    }

    pub fn mask(&self) -> CouplingMask {
        CouplingMask::from_owners(self.variables.iter().enumerate().flat_map(|(r, v)| core::iter::repeat(r).take(v.n_modes)).collect())
    }

    pub fn run_geometry(&self, design: &[f64]) -> RunGeometry {
        let params = self.space.unscale(design, &self.base);
        RunGeometry::new(params, params.length + self.downstream.0, params.nozzle_radius + self.downstream.1)
    }

    /// Geometry the true modes are defined on: the centre of the design space.
    pub fn reference_geometry(&self) -> RunGeometry {
        self.run_geometry(&vec![0.5; self.space.dim()])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_modes();
        let p = self.space.dim();
        if self.designs.is_empty() || self.variables.is_empty() || self.n_steps == 0 {
            return Err(invalid("spec needs at least one design, variable and time step"));
        }
        if let Some(d) = self.designs.iter().find(|d| d.len() != p) {
            return Err(Error::Dimension { expected: p, found: d.len() });
        }
        if self.mu.len() != k || self.t_cov.shape() != (k, k) {
            return Err(Error::Dimension { expected: k, found: self.mu.len() });
        }
        if self.tau.len() != p {
            return Err(Error::Dimension { expected: p, found: self.tau.len() });
        }
        crate::cokrige::check_tau(&self.tau)?;
        if !(self.noise >= 0.0) {
            return Err(invalid("noise must be non-negative"));
        }
        if self.grid.0 < 2 || self.grid.1 < 2 || self.grid.0 * self.grid.1 < k {
            return Err(invalid(format!("a {}x{} grid cannot carry {k} orthonormal modes", self.grid.0, self.grid.1)));
        }
        if !(self.downstream.0 > 0.0 && self.downstream.1 > 0.0) {
            return Err(invalid("downstream extents must be positive"));
        }
        let asym = (&self.t_cov - self.t_cov.transpose()).abs().max();
        if asym > 1e-12 * self.t_cov.abs().max() || !(min_eigenvalue(&self.t_cov) > 0.0) {
            return Err(Error::NotPositiveDefinite("T* must be symmetric positive definite".into()));
        }
        let prec = cholesky_spd(&self.t_cov, "T*")?.inverse();
        let mask = self.mask();
        let scale = prec.abs().max();
        for i in 0..k {
            for j in 0..k {
                if !mask.allowed(i, j) && prec[(i, j)].abs() > 1e-8 * scale {
                    return Err(invalid(format!("inverse of T* has a within-variable entry at ({i}, {j})")));
                }
            }
        }
        for d in &self.designs {
            self.run_geometry(d).validate()?;
        }
        Ok(())
    }
}

/// `T* = S P0^{-1} S` where `P0` is the identity plus `-rho` at each planted
/// pair `(i, j, rho)` and `S = diag(scales)`. Its inverse keeps the planted
/// sparsity pattern, with partial correlation `rho` on each pair.
pub fn coupled_covariance(scales: &[f64], couplings: &[(usize, usize, f64)]) -> Result<DMatrix<f64>> {
    let k = scales.len();
    let mut p0 = DMatrix::identity(k, k);
    for &(i, j, rho) in couplings {
        if i >= k || j >= k || i == j {
            return Err(invalid(format!("coupling ({i}, {j}) is not an off-diagonal pair of a {k}-mode model")));
        }
        p0[(i, j)] = -rho;
        p0[(j, i)] = -rho;
    }
    let cov = cholesky_spd(&p0, "coupled precision")?.inverse();
    let s = DMatrix::from_diagonal(&DVector::from_column_slice(scales));
    let t = &s * cov * &s;
    Ok((&t + t.transpose()) * 0.5)
}

/// Seeded Latin hypercube of `n` points in `[0, 1]^p`.
pub fn space_filling_design(p: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0; p]; n];
    for j in 0..p {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (i, row) in out.iter_mut().enumerate() {
            let u: f64 = rng.random();
            row[j] = (perm[i] as f64 + u) / n as f64;
        }
    }
    out
}

/// Structured `nx x ny` grid over a run's domain.
pub fn structured_grid(geom: &RunGeometry, nx: usize, ny: usize) -> Result<Grid> {
    let mut pts = Vec::with_capacity(nx * ny);
    for a in 0..nx {
        for b in 0..ny {
            let x = geom.x_max * a as f64 / (nx - 1) as f64;
            let y = geom.y_max * b as f64 / (ny - 1) as f64;
            pts.push([x, y]);
        }
    }
    Grid::new(pts)
}

// Smooth profile number `m` of variable `r` on the reference domain.
fn profile(m: usize, r: usize, x: f64, y: f64) -> f64 {
    // (a, b) wave numbers ordered by total frequency
    let mut pairs = Vec::new();
    for s in 0..16usize {
        for a in 0..=s {
            pairs.push((a, s - a));
        }
    }
    let (a, b) = pairs[m];
    let phase = 0.35 * r as f64;
    (a as f64 * PI * x + phase * (a as f64)).cos() * (b as f64 * PI * y + 0.5 * phase * (b as f64)).cos()
}

/// Orthonormal modes per variable on `grid` (coordinates normalised by the extents).
pub fn true_modes(spec: &SyntheticSpec, reference: &RunGeometry, grid: &Grid) -> Result<Vec<DMatrix<f64>>> {
    spec.variables
        .iter()
        .enumerate()
        .map(|(r, v)| {
            let mut q = DMatrix::from_fn(grid.len(), v.n_modes, |j, m| {
                let [x, y] = grid.points()[j];
                profile(m, r, x / reference.x_max, y / reference.y_max)
            });
            // modified Gram-Schmidt, two passes
            for _ in 0..2 {
                for c in 0..q.ncols() {
                    for prev in 0..c {
                        let d = q.column(prev).dot(&q.column(c));
                        let pc = q.column(prev).clone_owned();
                        q.column_mut(c).axpy(-d, &pc, 1.0);
                    }
                    let nrm = q.column(c).norm();
                    if !(nrm > 1e-8) {
                        return Err(invalid(format!("profiles of {} are linearly dependent on this grid", v.name)));
                    }
                    q.column_mut(c).scale_mut(1.0 / nrm);
                }
            }
            Ok(q)
        })
        .collect()
}

/// Draws `B_t ~ 1 mu' + L_R Z L_T'` independently for every step.
pub fn draw_coefficients<R: Rng>(
    mu: &DVector<f64>,
    t_cov: &DMatrix<f64>,
    tau: &[f64],
    designs: &[Vec<f64>],
    n_steps: usize,
    rng: &mut R,
) -> Result<CoefficientTensor> {
    let n = designs.len();
    let k = mu.len();
    let lr = cholesky_jittered(&correlation_matrix(tau, designs))
        .ok_or(Error::Conditioning { first: 0, second: 1.min(n.saturating_sub(1)) })?
        .chol
        .l();
    let lt = cholesky_spd(t_cov, "T*")?.chol.l();
    let mut out = CoefficientTensor::zeros(n_steps, n, k);
    for t in 0..n_steps {
        let z = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut b = &lr * z * lt.transpose();
        for mut row in b.row_iter_mut() {
            row += mu.transpose();
        }
        out.set_slice(t, &b);
    }
    Ok(out)
}

/// A generated ensemble with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticEnsemble {
    pub runs: Vec<SnapshotEnsemble>,
    pub reference: RunGeometry,
    pub reference_grid: Grid,
    /// True modes per variable on the reference grid.
    pub modes: Vec<DMatrix<f64>>,
    pub coefficients: CoefficientTensor,
}

/// Generates every run of `spec`. Each run's grid is the reference grid
/// carried onto its own geometry, so the fields are exact mode expansions.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticEnsemble> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let reference = spec.reference_geometry();
    let reference_grid = structured_grid(&reference, spec.grid.0, spec.grid.1)?;
    let modes = true_modes(spec, &reference, &reference_grid)?;
    let coefficients = draw_coefficients(&spec.mu, &spec.t_cov, &spec.tau, &spec.designs, spec.n_steps, &mut rng)?;
    let mut runs = Vec::with_capacity(spec.designs.len());
    for (i, d) in spec.designs.iter().enumerate() {
        let geometry = spec.run_geometry(d);
        let map = build_rescale_map(&reference, &geometry)?;
        let grid = Grid::new(map.apply_grid(&reference_grid)?)?;
        let mut offset = 0;
        let mut fields = Vec::with_capacity(spec.variables.len());
        for (v, phi) in spec.variables.iter().zip(&modes) {
            let mut values = DMatrix::zeros(grid.len(), spec.n_steps);
            for t in 0..spec.n_steps {
                let beta = DVector::from_fn(v.n_modes, |m, _| coefficients.get(t, i, offset + m));
                let mut col = phi * beta;
                if spec.noise > 0.0 {
                    for x in col.iter_mut() {
                        *x += spec.noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                values.set_column(t, &col);
            }
            offset += v.n_modes;
            fields.push(FieldVariable { name: v.name.clone(), values });
        }
        runs.push(SnapshotEnsemble { geometry, grid, fields });
    }
    Ok(SyntheticEnsemble { runs, reference, reference_grid, modes, coefficients })
}
