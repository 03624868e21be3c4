//! Pipeline stages as library functions, parallel over runs, variables,
//! time steps and starts.

use flowemu_core::cokrige::{mahalanobis, CoefficientPrediction, CovarianceModel, DesignSpace};
use flowemu_core::cpod::{
    assemble, interpolate_run, pod_variable, reference_run, stack_snapshots, CouplingMask, CpodBasis, CpodOptions,
};
use flowemu_core::ensemble::SnapshotEnsemble;
use flowemu_core::estimate::{
    fit_from_start, multistart_taus, select_best, top_k_fit, tune_lambda, FitConfig, LambdaTuning,
};
use flowemu_core::geometry::{build_rescale_map, partition_grid, Grid, Region, RunGeometry};
use flowemu_core::glasso::edge_count;
use flowemu_core::idw::{idw_interpolate, DEFAULT_NEIGHBOURS};
use flowemu_core::predictor::{field_mean, field_variance, map_modes, mre_series, Emulator, PredictedField, PredictedVariable};
use flowemu_core::special::chi2_quantile;
use flowemu_core::spectrum::{psd_probe, Window};
use flowemu_core::tke::{tke_distribution, tke_predict, velocity_probes};
use flowemu_core::wncq::{Band, BandSide, CdfMethod};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{BasisBundle, FittedSlice};
use crate::error::{validation, Result};

/// Common-POD extraction over loaded runs.
pub fn extract_runs(runs: &[SnapshotEnsemble], space: DesignSpace, opts: &CpodOptions) -> Result<BasisBundle> {
    if runs.is_empty() {
        return Err(validation("no runs to extract from"));
    }
    for run in runs {
        run.validate()?;
    }
    let r = reference_run(runs);
    let (reference, grid) = (runs[r].geometry, &runs[r].grid);
    let per_run = runs
        .par_iter()
        .map(|run| interpolate_run(run, &reference, grid, opts.neighbours))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let common = stack_snapshots(runs, per_run)?;
    let parts = common
        .variables
        .par_iter()
        .map(|(name, y)| pod_variable(name, y, opts))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (basis, coeffs) = assemble(common, parts);
    Ok(BasisBundle { basis, coeffs, space, geometries: runs.iter().map(|r| r.geometry).collect(), energy_target: opts.energy_target })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Tuning {
    /// Use `lambda` as given.
    #[default]
    Fixed,
    CrossValidate { folds: usize },
    TopKEdges { k: usize },
}

/// Fit configuration as read from JSON; every field is optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub lambda: f64,
    pub n_starts: usize,
    pub max_bcd_iters: usize,
    pub bcd_tol: f64,
    pub glasso_tol: f64,
    pub lbfgs_tol: f64,
    pub lbfgs_memory: usize,
    pub seed: u64,
    pub enforce_mask: bool,
    pub tuning: Tuning,
}

impl Default for FitSettings {
    fn default() -> Self {
        let c = FitConfig::default();
        FitSettings {
            lambda: c.lambda,
            n_starts: c.n_starts,
            max_bcd_iters: c.max_bcd_iters,
            bcd_tol: c.bcd_tol,
            glasso_tol: c.glasso_tol,
            lbfgs_tol: c.lbfgs_tol,
            lbfgs_memory: c.lbfgs_memory,
            seed: c.seed,
            enforce_mask: c.enforce_mask,
            tuning: Tuning::Fixed,
        }
    }
}

impl FitSettings {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            lambda: self.lambda,
            n_starts: self.n_starts,
            max_bcd_iters: self.max_bcd_iters,
            bcd_tol: self.bcd_tol,
            glasso_tol: self.glasso_tol,
            lbfgs_tol: self.lbfgs_tol,
            lbfgs_memory: self.lbfgs_memory,
            seed: self.seed,
            enforce_mask: self.enforce_mask,
        }
    }
}

/// Fits one slice: optional penalty tuning, then the multi-start descent with starts run concurrently.
pub fn fit_slice(b: &DMatrix<f64>, designs: &[Vec<f64>], mask: &CouplingMask, settings: &FitSettings) -> Result<FittedSlice> {
    let mut cfg = settings.config();
    cfg.validate()?;
    let counted = if cfg.enforce_mask { mask.clone() } else { CouplingMask::unrestricted(b.ncols()) };
    if let Tuning::TopKEdges { k } = settings.tuning {
        let (model, report, _) = top_k_fit(b, designs, mask, &cfg, k)?;
        let edges = model.precision.as_ref().map_or(0, |p| edge_count(p, &counted));
        return Ok(FittedSlice { model, report, edges, cv_curve: None });
    }
    let mut cv_curve = None;
    if let Tuning::CrossValidate { folds } = settings.tuning {
        let c = tune_lambda(b, designs, mask, &cfg, LambdaTuning::CrossValidate { folds })?;
        cfg.lambda = c.lambda;
        cv_curve = Some(c.cv_curve);
    }
    let p = designs.first().map_or(0, Vec::len);
    let outcomes: Vec<_> = multistart_taus(p, cfg.n_starts, cfg.seed)
        .par_iter()
        .map(|t0| fit_from_start(b, designs, mask, &cfg, t0))
        .collect();
    let (model, report) = select_best(outcomes, b, designs)?;
    let edges = model.precision.as_ref().map_or(0, |p| edge_count(p, &counted));
    Ok(FittedSlice { model, report, edges, cv_curve })
}

/// Fits every time step of a basis bundle.
pub fn fit_bundle(basis: &BasisBundle, settings: &FitSettings) -> Result<Vec<FittedSlice>> {
    let designs = basis.designs();
    if designs.len() < 2 {
        return Err(validation("n >= 2 required: fitting needs at least two training runs"));
    }
    let mask = basis.basis.coupling_mask();
    (0..basis.coeffs.n_steps())
        .into_par_iter()
        .map(|t| fit_slice(&basis.coeffs.slice(t), &designs, &mask, settings))
        .collect()
}

/// A new geometry and the grid to predict on, optionally with a reference simulation.
#[derive(Debug, Clone)]
pub struct Target {
    pub geometry: RunGeometry,
    pub grid: Grid,
    pub reference: Option<SnapshotEnsemble>,
}

impl Target {
    pub fn from_run(run: SnapshotEnsemble) -> Self {
        Target { geometry: run.geometry, grid: run.grid.clone(), reference: Some(run) }
    }
}

/// Predicted mean and variance fields, parallel over variables and time steps.
pub fn predict_field(emu: &Emulator, geometry: &RunGeometry, grid: &Grid) -> Result<(Vec<f64>, Vec<CoefficientPrediction>, PredictedField)> {
    let c = emu.design_of(geometry);
    let preds: Vec<CoefficientPrediction> = emu.models.par_iter().map(|m| m.predict(&c)).collect::<std::result::Result<_, _>>()?;
    let mapped = map_modes(&emu.basis, geometry, grid)?;
    let variables = mapped
        .par_iter()
        .map(|mv| {
            let cols: Vec<(DVector<f64>, DVector<f64>)> = preds.par_iter().map(|p| (field_mean(mv, p), field_variance(mv, p))).collect();
            let j = grid.len();
            let mut mean = DMatrix::zeros(j, cols.len());
            let mut variance = DMatrix::zeros(j, cols.len());
            for (t, (m, v)) in cols.iter().enumerate() {
                mean.set_column(t, m);
                variance.set_column(t, v);
            }
            PredictedVariable { name: mv.name.clone(), mean, variance }
        })
        .collect();
    Ok((c, preds, PredictedField { variables }))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegionMre {
    pub region: String,
    pub points: usize,
    /// Percent per time step; `None` where the reference field vanishes.
    pub per_step: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    /// Share of defined steps at or below 10 %.
    pub within_tolerance: f64,
}

/// Named point masks over a target grid.
pub type Regions = Vec<(String, Vec<bool>)>;

/// The four geometric regions (non-empty ones only) plus the full grid.
pub fn default_regions(grid: &Grid, geometry: &RunGeometry) -> Result<Regions> {
    let labels = partition_grid(grid, &geometry.params)?;
    let mut out: Regions = Region::ALL
        .iter()
        .map(|&r| (r.name().to_string(), labels.mask(r)))
        .filter(|(_, m)| m.iter().any(|&b| b))
        .collect();
    out.push(("full".into(), vec![true; grid.len()]));
    Ok(out)
}

pub fn region_mre(reference: &SnapshotEnsemble, field: &PredictedField, regions: &Regions) -> Result<Vec<(String, Vec<RegionMre>)>> {
    field
        .variables
        .iter()
        .map(|pv| {
            let sim = reference
                .field(&pv.name)
                .ok_or_else(|| validation(format!("reference simulation has no variable {}", pv.name)))?;
            if sim.values.shape() != pv.mean.shape() {
                return Err(validation(format!("reference {} is {:?}, prediction is {:?}", pv.name, sim.values.shape(), pv.mean.shape())));
            }
            let per_region = regions
                .iter()
                .map(|(name, mask)| {
                    let per_step: Vec<Option<f64>> = mre_series(&sim.values, &pv.mean, mask).into_iter().map(|r| r.ok()).collect();
                    let defined: Vec<f64> = per_step.iter().flatten().copied().collect();
                    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
                    let max = defined.iter().copied().reduce(f64::max);
                    let ok = defined.iter().filter(|&&v| v <= 10.0).count();
                    let within_tolerance = if defined.is_empty() { 0.0 } else { ok as f64 / defined.len() as f64 };
                    RegionMre { region: name.clone(), points: mask.iter().filter(|&&b| b).count(), per_step, mean, max, within_tolerance }
                })
                .collect();
            Ok((pv.name.clone(), per_region))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Probe {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Peak {
    pub frequency: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeSpectrum {
    pub probe: String,
    pub variable: String,
    pub predicted: Vec<Peak>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<Peak>>,
}

const PEAKS: usize = 5;

fn top_peaks(series: &[f64], dt: f64, window: Window) -> Result<Vec<Peak>> {
    let sp = psd_probe(series, dt, window)?;
    Ok(sp.peaks().into_iter().take(PEAKS).map(|k| Peak { frequency: sp.frequencies[k], power: sp.power[k] }).collect())
}

/// Values of every variable at `points` over time, by inverse distance weighting on `grid`.
fn sample_points(grid: &Grid, fields: &[(String, &DMatrix<f64>)], points: &[[f64; 2]]) -> Result<Vec<Vec<Vec<f64>>>> {
    let k = DEFAULT_NEIGHBOURS.min(grid.len());
    fields
        .iter()
        .map(|(_, values)| {
            let mut per_point = vec![Vec::with_capacity(values.ncols()); points.len()];
            for t in 0..values.ncols() {
                let col: Vec<f64> = values.column(t).iter().copied().collect();
                let v = idw_interpolate(grid.points(), &col, points, k)?;
                for (q, x) in v.into_iter().enumerate() {
                    per_point[q].push(x);
                }
            }
            Ok(per_point)
        })
        .collect()
}

/// PSD peak tables of the predicted (and reference) series at each probe.
pub fn probe_spectra(target: &Target, field: &PredictedField, probes: &[Probe], dt: f64, window: Window) -> Result<Vec<ProbeSpectrum>> {
    let points: Vec<[f64; 2]> = probes.iter().map(|p| [p.x, p.y]).collect();
    let pred_fields: Vec<(String, &DMatrix<f64>)> = field.variables.iter().map(|v| (v.name.clone(), &v.mean)).collect();
    let pred = sample_points(&target.grid, &pred_fields, &points)?;
    let reference = match &target.reference {
        Some(run) => {
            let f: Vec<(String, &DMatrix<f64>)> = run.fields.iter().map(|f| (f.name.clone(), &f.values)).collect();
            Some((f.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(), sample_points(&run.grid, &f, &points)?))
        }
        None => None,
    };
    let mut out = Vec::new();
    for (q, probe) in probes.iter().enumerate() {
        for (v, (name, _)) in pred_fields.iter().enumerate() {
            let reference = match &reference {
                Some((names, vals)) => match names.iter().position(|n| n == name) {
                    Some(r) => Some(top_peaks(&vals[r][q], dt, window)?),
                    None => None,
                },
                None => None,
            };
            out.push(ProbeSpectrum { probe: probe.name.clone(), variable: name.clone(), predicted: top_peaks(&pred[v][q], dt, window)?, reference });
        }
    }
    Ok(out)
}

/// Coefficients of a run on the common basis: the run is carried onto the
/// common grid and projected onto each variable's modes. `T x K`.
pub fn project_run(basis: &CpodBasis, run: &SnapshotEnsemble, neighbours: usize) -> Result<DMatrix<f64>> {
    let fields = interpolate_run(run, &basis.reference, &basis.grid, neighbours)?;
    let steps = run.n_steps();
    let mut out = DMatrix::zeros(steps, basis.n_modes());
    for (v, off) in basis.variables.iter().zip(basis.offsets()) {
        let idx = run
            .fields
            .iter()
            .position(|f| f.name == v.name)
            .ok_or_else(|| validation(format!("reference simulation has no variable {}", v.name)))?;
        let mut y = fields[idx].clone();
        if let Some(m) = &v.mean {
            for mut col in y.column_iter_mut() {
                col -= m;
            }
        }
        let c = v.modes.tr_mul(&y);
        for t in 0..steps {
            for k in 0..v.n_modes() {
                out[(t, off + k)] = c[(k, t)];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HdcrRow {
    pub step: usize,
    pub variance_factor: f64,
    /// Squared radius `s * chi2_{1-alpha}(K)`.
    pub radius2: f64,
    pub distance2_joint: Option<f64>,
    pub distance2_independent: Option<f64>,
}

impl HdcrRow {
    pub fn inside(&self, model: CovarianceModel) -> Option<bool> {
        let d = match model {
            CovarianceModel::Joint => self.distance2_joint,
            CovarianceModel::Independent => self.distance2_independent,
        }?;
        Some(d <= self.radius2)
    }
}

/// Highest-density region sizes per step and, given observed coefficients, their Mahalanobis distances.
pub fn hdcr_rows(preds: &[CoefficientPrediction], observed: Option<&DMatrix<f64>>, alpha: f64) -> Result<Vec<HdcrRow>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(validation(format!("alpha = {alpha} outside (0, 1)")));
    }
    preds
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let k = p.mean.len();
            let s = p.variance_factor.max(0.0);
            let radius2 = s * chi2_quantile(1.0 - alpha, k as f64);
            let (dj, di) = match observed {
                Some(obs) => {
                    let d = obs.row(t).transpose() - &p.mean;
                    (Some(mahalanobis(&d, &p.t_cov, CovarianceModel::Joint)?), Some(mahalanobis(&d, &p.t_cov, CovarianceModel::Independent)?))
                }
                None => (None, None),
            };
            Ok(HdcrRow { step: t, variance_factor: p.variance_factor, radius2, distance2_joint: dj, distance2_independent: di })
        })
        .collect()
}

/// Source of the time means about which fluctuations are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MeansSource {
    #[default]
    Prediction,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TkeRow {
    pub step: usize,
    pub kappa_joint: f64,
    pub lower_joint: Option<f64>,
    pub upper_joint: Option<f64>,
    pub kappa_independent: f64,
    pub lower_independent: Option<f64>,
    pub upper_independent: Option<f64>,
    pub kappa_sim: Option<f64>,
}

impl TkeRow {
    /// Whether the simulated value falls inside the band of `model`.
    pub fn covered(&self, model: CovarianceModel) -> Option<bool> {
        let k = self.kappa_sim?;
        let (lo, hi) = match model {
            CovarianceModel::Joint => (self.lower_joint, self.upper_joint),
            CovarianceModel::Independent => (self.lower_independent, self.upper_independent),
        };
        Some(lo.is_none_or(|l| k >= l) && hi.is_none_or(|h| k <= h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TkeOptions {
    pub level: f64,
    pub side: BandSide,
    /// Steps `[start, end)` over which time means are taken.
    pub window: (usize, usize),
    pub means: MeansSource,
    pub method: CdfMethod,
}

/// Predicted TKE and its bands under both covariance models at each probe and step.
pub fn tke_rows(
    emu: &Emulator,
    target: &Target,
    probes: &[Probe],
    velocity: &[&str],
    opts: &TkeOptions,
) -> Result<Vec<Vec<TkeRow>>> {
    let steps = emu.n_steps();
    let (w0, w1) = opts.window;
    if !(w0 < w1 && w1 <= steps) {
        return Err(validation(format!("window {w0}:{w1} must be a non-empty range within 0:{steps}")));
    }
    let c = emu.design_of(&target.geometry);
    let preds: Vec<CoefficientPrediction> = emu.models.par_iter().map(|m| m.predict(&c)).collect::<std::result::Result<_, _>>()?;
    let points: Vec<[f64; 2]> = probes.iter().map(|p| [p.x, p.y]).collect();
    let vprobes = velocity_probes(&emu.basis, &target.geometry, &points, velocity)?;
    let sim = match &target.reference {
        Some(run) => {
            let fields = velocity
                .iter()
                .map(|name| {
                    let f = run.field(name).ok_or_else(|| validation(format!("reference simulation has no variable {name}")))?;
                    Ok((name.to_string(), &f.values))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(sample_points(&run.grid, &fields, &points)?)
        }
        None => None,
    };
    if opts.means == MeansSource::Reference && sim.is_none() {
        return Err(validation("time means from the reference need a reference simulation"));
    }
    let span = (w1 - w0) as f64;
    vprobes
        .par_iter()
        .enumerate()
        .map(|(q, vp)| {
            let d = vp.dim();
            let means: Vec<f64> = match opts.means {
                MeansSource::Prediction => {
                    let mut acc = vec![0.0; d];
                    for p in &preds[w0..w1] {
                        for (a, v) in vp.predicted(p).iter().enumerate() {
                            acc[a] += v / span;
                        }
                    }
                    acc
                }
                MeansSource::Reference => {
                    let s = sim.as_ref().expect("checked above");
                    (0..d).map(|a| s[a][q][w0..w1].iter().sum::<f64>() / span).collect()
                }
            };
            let sim_means: Option<Vec<f64>> = sim.as_ref().map(|s| (0..d).map(|a| s[a][q][w0..w1].iter().sum::<f64>() / span).collect());
            preds
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    let band = |model| -> Result<(f64, Band)> {
                        let k = tke_predict(vp, p, model, &means)?;
                        let b = tke_distribution(vp, p, model, &means)?.band(opts.level, opts.side, opts.method)?;
                        Ok((k, b))
                    };
                    let (kj, bj) = band(CovarianceModel::Joint)?;
                    let (ki, bi) = band(CovarianceModel::Independent)?;
                    let kappa_sim = match (&sim, &sim_means) {
                        (Some(s), Some(m)) => Some(0.5 * (0..d).map(|a| (s[a][q][t] - m[a]).powi(2)).sum::<f64>()),
                        _ => None,
                    };
                    Ok(TkeRow {
                        step: t,
                        kappa_joint: kj,
                        lower_joint: bj.lower,
                        upper_joint: bj.upper,
                        kappa_independent: ki,
                        lower_independent: bi.lower,
                        upper_independent: bi.upper,
                        kappa_sim,
                    })
                })
                .collect()
        })
        .collect()
}

/// Share of rows within `window` whose simulated TKE lies in the band of `model`.
pub fn band_coverage(rows: &[Vec<TkeRow>], window: (usize, usize), model: CovarianceModel) -> Option<f64> {
    let hits: Vec<bool> = rows.iter().flatten().filter(|r| r.step >= window.0 && r.step < window.1).filter_map(|r| r.covered(model)).collect();
    (!hits.is_empty()).then(|| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Carries `points` given on the reference geometry onto `geometry`.
pub fn map_points(reference: &RunGeometry, geometry: &RunGeometry, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let map = build_rescale_map(reference, geometry)?;
    Ok(points.iter().map(|&p| map.apply(p)).collect::<std::result::Result<Vec<_>, _>>()?)
}
