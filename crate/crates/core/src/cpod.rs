//! Common proper orthogonal decomposition.
//!
//! Every run is rescaled onto the reference geometry, interpolated onto the
//! reference grid, and the snapshot method is applied to the pooled snapshots
//! of each variable: leading eigenpairs of the `N x N` inner-product matrix
//! (`N = n T`) give the modes as snapshot combinations, and projecting the
//! snapshots onto the modes gives the time-varying coefficients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::eigen::{leading_eigenpairs_with, EigenMethod, GramOperator, LanczosOptions, DENSE_LIMIT};
use crate::ensemble::{check_consistent, SnapshotEnsemble};
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_rescale_map, Grid, RunGeometry};
use crate::idw::{IdwWeights, DEFAULT_NEIGHBOURS};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct CpodOptions {
    /// Truncate at the smallest `K_r` whose energy ratio reaches this fraction.
    pub energy_target: f64,
    /// IDW neighbour count for interpolation onto the common grid.
    pub neighbours: usize,
    /// Subtract the per-point snapshot mean before decomposition.
    pub center_snapshots: bool,
    pub method: EigenMethod,
}

impl Default for CpodOptions {
    fn default() -> Self {
        CpodOptions {
            energy_target: 0.99,
            neighbours: DEFAULT_NEIGHBOURS,
            center_snapshots: false,
            method: EigenMethod::Auto,
        }
    }
}

/// Modes of one variable on the common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableBasis {
    pub name: String,
    /// `J x K_r`, orthonormal columns.
    pub modes: DMatrix<f64>,
    /// Leading eigenvalues that were computed (at least `K_r` of them), descending.
    pub eigenvalues: Vec<f64>,
    /// Total snapshot energy, the trace of the inner-product matrix.
    pub total_energy: f64,
    /// Per-point snapshot mean that was removed, when centring is enabled.
    pub mean: Option<DVector<f64>>,
}

impl VariableBasis {
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    /// Energy ratio captured by the retained modes.
    pub fn captured_energy(&self) -> f64 {
        if self.total_energy <= 0.0 {
            return 0.0;
        }
        self.eigenvalues[..self.n_modes()].iter().sum::<f64>() / self.total_energy
    }
}

/// The common basis across all variables plus the reference geometry it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct CpodBasis {
    pub reference: RunGeometry,
    pub reference_run: usize,
    pub grid: Grid,
    pub variables: Vec<VariableBasis>,
}

impl CpodBasis {
    /// Total number of retained modes `K`.
    pub fn n_modes(&self) -> usize {
        self.variables.iter().map(VariableBasis::n_modes).sum()
    }

    /// Offset of each variable's block within the stacked coefficient vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.variables
            .iter()
            .map(|v| {
                let o = acc;
                acc += v.n_modes();
                o
            })
            .collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Variable index of every stacked mode.
    pub fn mode_owner(&self) -> Vec<usize> {
        self.variables
            .iter()
            .enumerate()
            .flat_map(|(r, v)| core::iter::repeat(r).take(v.n_modes()))
            .collect()
    }

    /// `allowed[i][j]` is false for distinct modes of the same variable.
    pub fn coupling_mask(&self) -> CouplingMask {
        CouplingMask::from_owners(self.mode_owner())
    }
}

/// Which precision-matrix entries may be nonzero. Diagonal entries are always allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingMask {
    owners: Vec<usize>,
}

impl CouplingMask {
    /// Each mode owned by its own group: every entry allowed.
    pub fn unrestricted(k: usize) -> Self {
        CouplingMask { owners: (0..k).collect() }
    }

    pub fn from_owners(owners: Vec<usize>) -> Self {
        CouplingMask { owners }
    }

    pub fn dim(&self) -> usize {
        self.owners.len()
    }

    pub fn owners(&self) -> &[usize] {
        &self.owners
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        i == j || self.owners[i] != self.owners[j]
    }

    /// Number of allowed off-diagonal pairs `i < j`.
    pub fn allowed_edges(&self) -> usize {
        let k = self.dim();
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).filter(|&(i, j)| self.allowed(i, j)).count()
    }
}

/// Coefficients `beta(t; c_i)` indexed by time step, run and stacked mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    n_steps: usize,
    n_runs: usize,
    n_modes: usize,
    data: Vec<f64>,
}

impl CoefficientTensor {
    pub fn zeros(n_steps: usize, n_runs: usize, n_modes: usize) -> Self {
        CoefficientTensor { n_steps, n_runs, n_modes, data: alloc::vec![0.0; n_steps * n_runs * n_modes] }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn offset(&self, t: usize, i: usize, k: usize) -> usize {
        (t * self.n_runs + i) * self.n_modes + k
    }

    pub fn get(&self, t: usize, i: usize, k: usize) -> f64 {
        self.data[self.offset(t, i, k)]
    }

    pub fn set(&mut self, t: usize, i: usize, k: usize, v: f64) {
        let o = self.offset(t, i, k);
        self.data[o] = v;
    }

    /// The `n x K` coefficient matrix `B` of one time step.
    pub fn slice(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_runs, self.n_modes, |i, k| self.get(t, i, k))
    }

    pub fn set_slice(&mut self, t: usize, b: &DMatrix<f64>) {
        for i in 0..self.n_runs {
            for k in 0..self.n_modes {
                self.set(t, i, k, b[(i, k)]);
            }
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn from_vec(n_steps: usize, n_runs: usize, n_modes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_steps * n_runs * n_modes {
            return Err(Error::Dimension { expected: n_steps * n_runs * n_modes, found: data.len() });
        }
        Ok(CoefficientTensor { n_steps, n_runs, n_modes, data })
    }
}

/// Snapshots of every variable interpolated onto the reference grid.
#[derive(Debug, Clone)]
pub struct CommonSnapshots {
    pub reference_run: usize,
    pub reference: RunGeometry,
    pub grid: Grid,
    pub n_runs: usize,
    pub n_steps: usize,
    /// Per variable, a `J x N` matrix with column `l = i T + t`.
    pub variables: Vec<(String, DMatrix<f64>)>,
}

/// Index of the run with the most grid points (lowest index on ties).
pub fn reference_run(runs: &[SnapshotEnsemble]) -> usize {
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.grid.len() > runs[best].grid.len() {
            best = i;
        }
    }
    best
}

/// Rescales every run onto the reference geometry and interpolates all
/// snapshots onto the reference grid.
pub fn common_snapshots(runs: &[SnapshotEnsemble], neighbours: usize) -> Result<CommonSnapshots> {
    check_consistent(runs)?;
    let r = reference_run(runs);
    let per_run = runs
        .iter()
        .map(|run| interpolate_run(run, &runs[r].geometry, &runs[r].grid, neighbours))
        .collect::<Result<Vec<_>>>()?;
    stack_snapshots(runs, per_run)
}

/// Fields of one run carried onto `grid` of the `reference` geometry, one `J x T` matrix per variable.
pub fn interpolate_run(run: &SnapshotEnsemble, reference: &RunGeometry, grid: &Grid, neighbours: usize) -> Result<Vec<DMatrix<f64>>> {
    let map = build_rescale_map(&run.geometry, reference)?;
    let moved = map.apply_grid(&run.grid)?;
    let weights = IdwWeights::new(&moved, grid.points(), neighbours)?;
    run.fields
        .iter()
        .map(|field| {
            let mut out = DMatrix::zeros(grid.len(), field.values.ncols());
            for t in 0..field.values.ncols() {
                let col: Vec<f64> = field.values.column(t).iter().copied().collect();
                out.set_column(t, &DVector::from_vec(weights.apply(&col)?));
            }
            Ok(out)
        })
        .collect()
}

/// Pools the interpolated fields of every run (as from [`interpolate_run`]) per variable.
pub fn stack_snapshots(runs: &[SnapshotEnsemble], per_run: Vec<Vec<DMatrix<f64>>>) -> Result<CommonSnapshots> {
    let (names, steps) = check_consistent(runs)?;
    let r = reference_run(runs);
    let grid = runs[r].grid.clone();
    let j = grid.len();
    let n = runs.len();
    let mut mats: Vec<DMatrix<f64>> = names.iter().map(|_| DMatrix::zeros(j, n * steps)).collect();
    for (i, fields) in per_run.iter().enumerate() {
        for (v, f) in fields.iter().enumerate() {
            if f.shape() != (j, steps) {
                return Err(Error::Dimension { expected: j * steps, found: f.len() });
            }
            mats[v].columns_mut(i * steps, steps).copy_from(f);
        }
    }
    Ok(CommonSnapshots {
        reference_run: r,
        reference: runs[r].geometry,
        grid,
        n_runs: n,
        n_steps: steps,
        variables: names.into_iter().zip(mats).collect(),
    })
}

/// Gram matrix `Q = Y' Y` of the snapshot columns.
pub fn inner_product_matrix(snapshots: &DMatrix<f64>) -> DMatrix<f64> {
    snapshots.tr_mul(snapshots)
}

/// Gram matrix of snapshots given as separate columns; all must share a length.
pub fn inner_product_matrix_of(columns: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let j = columns.first().map_or(0, Vec::len);
    if let Some(bad) = columns.iter().find(|c| c.len() != j) {
        return Err(Error::Dimension { expected: j, found: bad.len() });
    }
    let y = DMatrix::from_fn(j, columns.len(), |r, c| columns[c][r]);
    Ok(inner_product_matrix(&y))
}

/// `xi(M)`: share of the listed eigenvalues carried by the first `m`.
pub fn energy_ratio(eigenvalues: &[f64], m: usize) -> Result<f64> {
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("energy ratio of an all-zero spectrum"));
    }
    let m = m.min(eigenvalues.len());
    Ok(eigenvalues[..m].iter().sum::<f64>() / total)
}

/// POD of one variable's `J x N` snapshot matrix: its basis and the `K_r x N`
/// coefficient matrix.
pub fn pod_variable(name: &str, snapshots: &DMatrix<f64>, opts: &CpodOptions) -> Result<(VariableBasis, DMatrix<f64>)> {
    if !(opts.energy_target > 0.0 && opts.energy_target <= 1.0) {
        return Err(invalid(format!("energy target {} outside (0, 1]", opts.energy_target)));
    }
    let (j, n) = snapshots.shape();
    let mut y = snapshots.clone();
    let mean = if opts.center_snapshots {
        let m = DVector::from_fn(j, |r, _| y.row(r).mean());
        for mut col in y.column_iter_mut() {
            col -= &m;
        }
        Some(m)
    } else {
        None
    };
    let total = y.norm_squared();
    if total <= 0.0 {
        log::warn!("variable {name} has no energy; keeping zero modes");
        let basis = VariableBasis { name: name.into(), modes: DMatrix::zeros(j, 0), eigenvalues: Vec::new(), total_energy: 0.0, mean };
        return Ok((basis, DMatrix::zeros(0, n)));
    }

    let q = (n <= DENSE_LIMIT || opts.method == EigenMethod::Dense).then(|| inner_product_matrix(&y));
    let mut m = n.min(8);
    let (pairs, k) = loop {
        let pairs = match &q {
            Some(q) => leading_eigenpairs_with(q, m, opts.method, LanczosOptions::default())?,
            None => leading_eigenpairs_with(&GramOperator(&y), m, opts.method, LanczosOptions::default())?,
        };
        if let Some(k) = truncation(&pairs.values, total, opts.energy_target) {
            break (pairs, k);
        }
        if m == n {
            break (pairs, n);
        }
        m = (2 * m).min(n);
    };

    let mut modes = DMatrix::zeros(j, k);
    for c in 0..k {
        let mut phi = &y * pairs.vectors.column(c);
        let nrm = phi.norm();
        phi /= nrm;
        modes.set_column(c, &phi);
    }
    let coeffs = modes.tr_mul(&y);
    let basis = VariableBasis { name: name.into(), modes, eigenvalues: pairs.values, total_energy: total, mean };
    Ok((basis, coeffs))
}

/// Smallest count reaching the energy target among the computed eigenvalues,
/// stopping early at the numerical rank. `None` if more eigenvalues are needed.
fn truncation(values: &[f64], total: f64, target: f64) -> Option<usize> {
    let lead = values.first().copied().unwrap_or(0.0);
    let mut cum = 0.0;
    for (k, &v) in values.iter().enumerate() {
        if v <= RANK_TOL * lead {
            return Some(k);
        }
        cum += v;
        if cum / total >= target - 1e-12 {
            return Some(k + 1);
        }
    }
    None
}

/// Full common-POD extraction over an ensemble of runs.
pub fn extract_basis(runs: &[SnapshotEnsemble], opts: &CpodOptions) -> Result<(CpodBasis, CoefficientTensor)> {
    let common = common_snapshots(runs, opts.neighbours)?;
    let parts = common
        .variables
        .iter()
        .map(|(name, y)| pod_variable(name, y, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(common, parts))
}

/// Stacks per-variable results into the common basis and coefficient tensor.
pub fn assemble(common: CommonSnapshots, parts: Vec<(VariableBasis, DMatrix<f64>)>) -> (CpodBasis, CoefficientTensor) {
    let k_total: usize = parts.iter().map(|(b, _)| b.n_modes()).sum();
    let mut coeffs = CoefficientTensor::zeros(common.n_steps, common.n_runs, k_total);
    let mut offset = 0;
    for (b, c) in &parts {
        for k in 0..b.n_modes() {
            for i in 0..common.n_runs {
                for t in 0..common.n_steps {
                    coeffs.set(t, i, offset + k, c[(k, i * common.n_steps + t)]);
                }
            }
        }
        offset += b.n_modes();
    }
    let basis = CpodBasis {
        reference: common.reference,
        reference_run: common.reference_run,
        grid: common.grid,
        variables: parts.into_iter().map(|(b, _)| b).collect(),
    };
    (basis, coeffs)
}

/// Truncated reconstruction of one variable for run `i` at step `t`, on the common grid.
pub fn reconstruct(basis: &CpodBasis, coeffs: &CoefficientTensor, var: usize, i: usize, t: usize) -> DVector<f64> {
    let offset = basis.offsets()[var];
    let vb = &basis.variables[var];
    let mut out = vb.mean.clone().unwrap_or_else(|| DVector::zeros(vb.modes.nrows()));
    for k in 0..vb.n_modes() {
        out.axpy(coeffs.get(t, i, offset + k), &vb.modes.column(k), 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_unit_snapshots_give_ones() {
        let q = inner_product_matrix_of(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        assert!((q - DMatrix::from_element(2, 2, 1.0)).abs().max() < 1e-15);
    }

    #[test]
    fn orthogonal_snapshots_give_diagonal() {
        let q = inner_product_matrix_of(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]).unwrap();
        assert_eq!(q[(0, 1)], 0.0);
        assert_eq!(q[(1, 1)], 4.0);
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(inner_product_matrix_of(&[vec![1.0, 0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn energy_ratio_cases() {
        assert!((energy_ratio(&[9.0, 1.0], 1).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(energy_ratio(&[3.0, 2.0, 1.0], 3).unwrap(), 1.0);
        assert!(energy_ratio(&[0.0, 0.0], 1).is_err());
    }

    #[test]
    fn rank_one_data_gives_one_mode() {
        let phi = DVector::from_vec(vec![1.0, 2.0, -2.0, 0.5]);
        let scales = [1.0, -3.0, 2.5, 0.25, 4.0];
        let y = DMatrix::from_fn(4, 5, |r, c| scales[c] * phi[r]);
        let (b, coeffs) = pod_variable("u", &y, &CpodOptions::default()).unwrap();
        assert_eq!(b.n_modes(), 1);
        let unit = &phi / phi.norm();
        let sign = b.modes[(0, 0)].signum() * unit[0].signum();
        assert!((b.modes.column(0) - &unit * sign).norm() < 1e-12);
        for (c, s) in scales.iter().enumerate() {
            assert!((coeffs[(0, c)] - sign * s * phi.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variable_keeps_no_modes() {
        let y = DMatrix::zeros(5, 4);
        let (b, c) = pod_variable("p", &y, &CpodOptions::default()).unwrap();
        assert_eq!(b.n_modes(), 0);
        assert_eq!(c.nrows(), 0);
    }

    #[test]
    fn full_target_keeps_rank() {
        let y = DMatrix::from_fn(6, 9, |r, c| ((r + 1) * (c + 2)) as f64 + if r == c { 1.0 } else { 0.0 });
        let opts = CpodOptions { energy_target: 1.0, ..Default::default() };
        let (b, _) = pod_variable("u", &y, &opts).unwrap();
        assert_eq!(b.n_modes(), 6);
    }

    #[test]
    fn coupling_mask_forbids_within_variable_pairs() {
        let m = CouplingMask::from_owners(vec![0, 0, 1, 1, 1]);
        assert!(!m.allowed(0, 1));
        assert!(m.allowed(1, 2));
        assert!(m.allowed(3, 3));
        assert_eq!(m.allowed_edges(), 6);
    }
}
