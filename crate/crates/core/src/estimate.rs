//! Penalised maximum-likelihood fitting of one time slice by blockwise
//! coordinate descent: a graphical-lasso block for `T` and an L-BFGS block
//! for `tau` with the mean profiled out.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cokrige::{centered_coeffs, correlation_matrix, factor_correlation, GpModelSlice};
use crate::cpod::CouplingMask;
use crate::error::{invalid, Error, Result};
use crate::glasso::{edge_count, glasso, saturation_lambda, GlassoOptions};
use crate::lbfgs::{minimize, LbfgsOptions};
use crate::linalg::{cholesky_spd, l1_norm, Factor};

/// Lower end of the `tau` box.
pub const TAU_LO: f64 = 1e-3;
/// Upper end of the `tau` box; also the default start.
pub const TAU_HI: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    pub n_starts: usize,
    pub max_bcd_iters: usize,
    /// Relative NLL change that ends the descent.
    pub bcd_tol: f64,
    pub glasso_tol: f64,
    pub lbfgs_tol: f64,
    pub lbfgs_memory: usize,
    /// Seed of the multi-start set.
    pub seed: u64,
    /// Hold within-variable precision entries at zero.
    pub enforce_mask: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.01,
            n_starts: 8,
            max_bcd_iters: 100,
            bcd_tol: 1e-9,
            glasso_tol: 1e-8,
            lbfgs_tol: 1e-6,
            lbfgs_memory: 8,
            seed: 0,
            enforce_mask: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda = {} must be finite and non-negative", self.lambda)));
        }
        if self.n_starts == 0 || self.max_bcd_iters == 0 || self.lbfgs_memory == 0 {
            return Err(invalid("n_starts, max_bcd_iters and lbfgs_memory must be at least 1"));
        }
        for (name, v) in [("bcd_tol", self.bcd_tol), ("glasso_tol", self.glasso_tol), ("lbfgs_tol", self.lbfgs_tol)] {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn glasso_options(&self) -> GlassoOptions {
        GlassoOptions { tol: self.glasso_tol, ..GlassoOptions::default() }
    }

    fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions { grad_tol: self.lbfgs_tol, memory: self.lbfgs_memory, ..LbfgsOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub nll: f64,
    /// Penalised NLL at the start and after every cycle.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub start: usize,
    pub lambda: f64,
    pub bcd_iters: usize,
    pub glasso_sweeps: usize,
    pub lbfgs_iters: usize,
}

/// Parameters reached from one start.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub mu: DVector<f64>,
    pub t_cov: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub report: FitReport,
}

fn check_inputs(b: &DMatrix<f64>, designs: &[Vec<f64>]) -> Result<usize> {
    let n = b.nrows();
    if designs.len() != n {
        return Err(Error::Dimension { expected: n, found: designs.len() });
    }
    if n < 2 {
        return Err(invalid("n >= 2 required"));
    }
    let p = designs[0].len();
    if let Some(d) = designs.iter().find(|d| d.len() != p) {
        return Err(Error::Dimension { expected: p, found: d.len() });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(invalid("coefficients must be finite"));
    }
    Ok(p)
}

// E' R^{-1} E for E = B - 1 mu'.
fn whitened_scatter(factor: &Factor, b: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let e = centered_coeffs(b, mu);
    let alpha = factor.solve(&e);
    e.tr_mul(&alpha)
}

/// `n log det T + K log det R + tr(T^{-1} E' R^{-1} E) + lambda |T^{-1}|_1`.
pub fn penalized_nll(
    mu: &DVector<f64>,
    t_cov: &DMatrix<f64>,
    tau: &[f64],
    b: &DMatrix<f64>,
    designs: &[Vec<f64>],
    lambda: f64,
) -> Result<f64> {
    let k = b.ncols();
    if mu.len() != k || t_cov.shape() != (k, k) {
        return Err(Error::Dimension { expected: k, found: mu.len() });
    }
    let t_chol = cholesky_spd(t_cov, "T")?;
    let precision = t_chol.inverse();
    let r = factor_correlation(tau, designs)?;
    Ok(nll_parts(&precision, -t_chol.log_det(), &r, b, mu, lambda))
}

fn nll_parts(precision: &DMatrix<f64>, logdet_prec: f64, r: &Factor, b: &DMatrix<f64>, mu: &DVector<f64>, lambda: f64) -> f64 {
    let (n, k) = b.shape();
    let m = whitened_scatter(r, b, mu);
    -(n as f64) * logdet_prec + k as f64 * r.log_det() + precision.component_mul(&m).sum() + lambda * l1_norm(precision)
}

fn nll_with_precision(precision: &DMatrix<f64>, tau: &[f64], b: &DMatrix<f64>, designs: &[Vec<f64>], mu: &DVector<f64>, lambda: f64) -> Result<f64> {
    let chol = cholesky_spd(precision, "precision")?;
    let r = factor_correlation(tau, designs)?;
    Ok(nll_parts(precision, chol.log_det(), &r, b, mu, lambda))
}

/// Generalised-least-squares mean `(1' R^{-1} 1)^{-1} 1' R^{-1} B`.
pub fn profile_mu(tau: &[f64], b: &DMatrix<f64>, designs: &[Vec<f64>]) -> Result<DVector<f64>> {
    let r = factor_correlation(tau, designs)?;
    Ok(gls_mean(&r, b))
}

fn gls_mean(r: &Factor, b: &DMatrix<f64>) -> DVector<f64> {
    let v = r.solve_vec(&DVector::from_element(b.nrows(), 1.0));
    b.tr_mul(&v) / v.sum()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn to_tau(z: f64) -> f64 {
    TAU_LO + (TAU_HI - TAU_LO) * logistic(z)
}

fn to_logit(tau: f64) -> f64 {
    let u = ((tau - TAU_LO) / (TAU_HI - TAU_LO)).clamp(1e-12, 1.0 - 1e-12);
    (u / (1.0 - u)).ln()
}

/// Profiled penalised NLL in `tau` for fixed precision, and its gradient.
#[derive(Debug, Clone)]
pub struct TauObjective<'a> {
    pub precision: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub designs: &'a [Vec<f64>],
    pub lambda: f64,
    constant: f64,
}

impl<'a> TauObjective<'a> {
    pub fn new(precision: &'a DMatrix<f64>, b: &'a DMatrix<f64>, designs: &'a [Vec<f64>], lambda: f64) -> Result<Self> {
        let chol = cholesky_spd(precision, "precision")?;
        let n = b.nrows() as f64;
        let constant = -n * chol.log_det() + lambda * l1_norm(precision);
        Ok(TauObjective { precision, b, designs, lambda, constant })
    }

    /// Value and gradient with respect to `tau` (not the logit).
    pub fn value_grad(&self, tau: &[f64]) -> Option<(f64, Vec<f64>, DVector<f64>)> {
        let r = factor_correlation(tau, self.designs).ok()?;
        let (n, k) = self.b.shape();
        let mu = gls_mean(&r, self.b);
        let e = centered_coeffs(self.b, &mu);
        let alpha = r.solve(&e);
        let quad = self.precision.component_mul(&e.tr_mul(&alpha)).sum();
        let value = self.constant + k as f64 * r.log_det() + quad;
        let rinv = r.inverse();
        let a = &alpha * self.precision * alpha.transpose();
        let rm = correlation_matrix(tau, self.designs);
        let mut grad = vec![0.0; tau.len()];
        for i in 0..n {
            for l in 0..n {
                let w = (k as f64 * rinv[(i, l)] - a[(i, l)]) * rm[(i, l)];
                if w == 0.0 {
                    continue;
                }
                for (j, g) in grad.iter_mut().enumerate() {
                    let d = self.designs[i][j] - self.designs[l][j];
                    *g += w * 4.0 * d * d / tau[j];
                }
            }
        }
        value.is_finite().then_some((value, grad, mu))
    }
}

#[derive(Debug, Clone)]
pub struct TauStep {
    pub tau: Vec<f64>,
    pub mu: DVector<f64>,
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises the profiled NLL over `tau` in logit coordinates on `[TAU_LO, TAU_HI]^p`.
pub fn lbfgs_tau_block(
    precision: &DMatrix<f64>,
    b: &DMatrix<f64>,
    designs: &[Vec<f64>],
    tau0: &[f64],
    lambda: f64,
    opts: &LbfgsOptions,
) -> Result<TauStep> {
    if tau0.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(invalid("tau0 must lie in (0, 1)"));
    }
    let obj = TauObjective::new(precision, b, designs, lambda)?;
    let z0: Vec<f64> = tau0.iter().map(|&t| to_logit(t)).collect();
    let res = minimize(
        |z| {
            let tau: Vec<f64> = z.iter().map(|&v| to_tau(v)).collect();
            let (v, g, _) = obj.value_grad(&tau)?;
            let gz = g.iter().zip(z).map(|(gi, &zi)| {
                let s = logistic(zi);
                gi * (TAU_HI - TAU_LO) * s * (1.0 - s)
            });
            Some((v, gz.collect()))
        },
        &z0,
        opts,
    );
    let tau: Vec<f64> = res.x.iter().map(|&v| to_tau(v)).collect();
    let (nll, _, mu) = obj.value_grad(&tau).ok_or_else(|| factor_correlation(&tau, designs).err().unwrap_or_else(|| invalid("objective is not finite")))?;
    Ok(TauStep { tau, mu, nll, iterations: res.iterations, converged: res.converged })
}

/// The multi-start set: the near-smooth corner `TAU_HI * 1` followed by a
/// randomly shifted Halton sequence on `[TAU_LO, TAU_HI]^p`.
pub fn multistart_taus(p: usize, n_starts: usize, seed: u64) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![vec![TAU_HI; p]];
    for i in 1..n_starts as u64 {
        let point = (0..p)
            .map(|j| {
                let u = (radical_inverse(i, PRIMES[j % PRIMES.len()]) + shift[j]).fract();
                TAU_LO + (TAU_HI - TAU_LO) * u
            })
            .collect();
        out.push(point);
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Blockwise coordinate descent from one starting `tau`.
pub fn fit_from_start(
    b: &DMatrix<f64>,
    designs: &[Vec<f64>],
    mask: &CouplingMask,
    cfg: &FitConfig,
    tau0: &[f64],
) -> Result<FitOutcome> {
    cfg.validate()?;
    let p = check_inputs(b, designs)?;
    let (n, k) = b.shape();
    if tau0.len() != p {
        return Err(Error::Dimension { expected: p, found: tau0.len() });
    }
    if mask.dim() != k {
        return Err(Error::Dimension { expected: k, found: mask.dim() });
    }
    let unrestricted = CouplingMask::unrestricted(k);
    let mask = if cfg.enforce_mask { mask } else { &unrestricted };
    let gopts = cfg.glasso_options();
    let lopts = cfg.lbfgs_options();

    let mut mu = DVector::zeros(k);
    let mut precision = DMatrix::identity(k, k);
    let mut tau = tau0.to_vec();
    let mut nll = nll_with_precision(&precision, &tau, b, designs, &mu, cfg.lambda)?;
    let mut trace = vec![nll];
    let (mut glasso_sweeps, mut lbfgs_iters, mut bcd_iters) = (0, 0, 0);
    let mut converged = false;
    for _ in 0..cfg.max_bcd_iters {
        bcd_iters += 1;
        let before = nll;

        // T block: the lambda/n penalty makes this the exact minimiser of the NLL in T
        let r = factor_correlation(&tau, designs)?;
        let s = whitened_scatter(&r, b, &mu) / n as f64;
        let g = glasso(&s, cfg.lambda / n as f64, mask, &gopts)?;
        glasso_sweeps += g.sweeps;
        if let Ok(v) = nll_with_precision(&g.precision, &tau, b, designs, &mu, cfg.lambda) {
            if v <= nll {
                nll = v;
                precision = g.precision;
            }
        }

        // tau block with the mean profiled
        match lbfgs_tau_block(&precision, b, designs, &tau, cfg.lambda, &lopts) {
            Ok(step) => {
                lbfgs_iters += step.iterations;
                if step.nll <= nll {
                    nll = step.nll;
                    tau = step.tau;
                    mu = step.mu;
                }
            }
            Err(e) => log::debug!("tau block failed: {e}"),
        }
        trace.push(nll);
        if before - nll <= cfg.bcd_tol * nll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let t_cov = cholesky_spd(&precision, "precision")?.inverse();
    let report = FitReport { nll, trace, converged, start: 0, lambda: cfg.lambda, bcd_iters, glasso_sweeps, lbfgs_iters };
    Ok(FitOutcome { mu, t_cov, precision, tau, report })
}

/// Picks the lowest-NLL outcome (ties to the lowest start index).
pub fn select_best(outcomes: Vec<Result<FitOutcome>>, b: &DMatrix<f64>, designs: &[Vec<f64>]) -> Result<(GpModelSlice, FitReport)> {
    let mut best: Option<FitOutcome> = None;
    let mut last_err = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(mut o) => {
                o.report.start = i;
                if best.as_ref().map_or(true, |b| o.report.nll < b.report.nll) {
                    best = Some(o);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let o = best.ok_or_else(|| last_err.unwrap_or_else(|| invalid("no starts were run")))?;
    let model = GpModelSlice::new(o.mu, o.t_cov, Some(o.precision), o.tau, designs.to_vec(), b.clone())?;
    Ok((model, o.report))
}

/// Multi-start fit of one slice. Starts run in sequence; see
/// [`multistart_taus`] and [`fit_from_start`] to run them concurrently.
pub fn bcd_fit(b: &DMatrix<f64>, designs: &[Vec<f64>], mask: &CouplingMask, cfg: &FitConfig) -> Result<(GpModelSlice, FitReport)> {
    cfg.validate()?;
    let p = check_inputs(b, designs)?;
    let outcomes = multistart_taus(p, cfg.n_starts, cfg.seed)
        .iter()
        .map(|t0| fit_from_start(b, designs, mask, cfg, t0))
        .collect();
    select_best(outcomes, b, designs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaTuning {
    /// Held-out coefficient prediction error over run folds, one-standard-error rule.
    CrossValidate { folds: usize },
    /// Penalty giving exactly `k` allowed off-diagonal precision edges.
    TopKEdges { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// Edge count of the fit at `lambda` (top-k mode).
    pub edges: Option<usize>,
    /// False when the requested edge count was not achievable.
    pub exact: bool,
    /// `(lambda, mean fold error, standard error)` for cross-validation.
    pub cv_curve: Vec<(f64, f64, f64)>,
}

/// Fit with exactly `k` allowed precision edges: a multi-start pilot at
/// `cfg.lambda` fixes `mu` and `tau`, then the `T` block alone is solved along
/// a bisection on the penalty. Joint refits are not used here because the
/// edge count of a joint fit is not monotone in the penalty.
pub fn top_k_fit(
    b: &DMatrix<f64>,
    designs: &[Vec<f64>],
    mask: &CouplingMask,
    cfg: &FitConfig,
    k: usize,
) -> Result<(GpModelSlice, FitReport, LambdaChoice)> {
    cfg.validate()?;
    check_inputs(b, designs)?;
    let (pilot, report) = bcd_fit(b, designs, mask, cfg)?;
    let (t_cov, precision, choice, sweeps) = top_k_from_pilot(b, designs, mask, cfg, &pilot, k)?;
    let nll = nll_with_precision(&precision, &pilot.tau, b, designs, &pilot.mu, choice.lambda)?;
    let model = GpModelSlice::new(pilot.mu, t_cov, Some(precision), pilot.tau, designs.to_vec(), b.clone())?;
    let report = FitReport { nll, trace: vec![nll], lambda: choice.lambda, glasso_sweeps: report.glasso_sweeps + sweeps, ..report };
    Ok((model, report, choice))
}

fn top_k_from_pilot(
    b: &DMatrix<f64>,
    designs: &[Vec<f64>],
    mask: &CouplingMask,
    cfg: &FitConfig,
    pilot: &GpModelSlice,
    k: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, LambdaChoice, usize)> {
    let n = b.nrows() as f64;
    let unrestricted = CouplingMask::unrestricted(b.ncols());
    let mask = if cfg.enforce_mask { mask } else { &unrestricted };
    let allowed = mask.allowed_edges();
    if k > allowed {
        return Err(Error::TooManyEdges { requested: k, allowed });
    }
    let r = factor_correlation(&pilot.tau, designs)?;
    let s = whitened_scatter(&r, b, &pilot.mu) / n;
    let gopts = cfg.glasso_options();
    let mut sweeps = 0;
    let mut solve = |lambda: f64| -> Result<(usize, DMatrix<f64>, DMatrix<f64>)> {
        let g = glasso(&s, lambda / n, mask, &gopts)?;
        sweeps += g.sweeps;
        Ok((edge_count(&g.precision, mask), g.covariance, g.precision))
    };
    // at the saturation penalty the precision is diagonal; the margin absorbs the round trip through lambda / n
    let sat = n * saturation_lambda(&s, mask) * (1.0 + 1e-9);
    let mut hi = (sat, solve(sat)?);
    let pick = |lambda: f64, fit: (usize, DMatrix<f64>, DMatrix<f64>)| {
        let (edges, w, p) = fit;
        if edges != k {
            log::warn!("requested {k} edges, nearest achievable is {edges}");
        }
        (w, p, LambdaChoice { lambda, edges: Some(edges), exact: edges == k, cv_curve: Vec::new() })
    };
    if k == 0 || sat == 0.0 {
        let (w, p, c) = pick(hi.0, hi.1);
        return Ok((w, p, c, sweeps));
    }
    let mut lo = (sat * 1e-6, solve(sat * 1e-6)?);
    if lo.1 .0 < k {
        lo = (0.0, solve(0.0)?);
    }
    if lo.1 .0 < k {
        let (w, p, c) = pick(lo.0, lo.1);
        return Ok((w, p, c, sweeps));
    }
    // largest penalty with at least k edges; invariant: edges(lo) >= k > edges(hi)
    for _ in 0..200 {
        let ratio = if lo.0 > 0.0 { hi.0 / lo.0 - 1.0 } else { f64::INFINITY };
        if ratio <= 1e-9 || (lo.1 .0 == k && ratio <= 1e-3) {
            break;
        }
        let mid = if lo.0 > 0.0 { (lo.0 * hi.0).sqrt() } else { 0.5 * hi.0 };
        let fit = solve(mid)?;
        if fit.0 >= k {
            lo = (mid, fit);
        } else {
            hi = (mid, fit);
        }
    }
    let (lambda, fit) = if lo.1 .0 == k || lo.1 .0.abs_diff(k) <= k.abs_diff(hi.1 .0) { lo } else { hi };
    let (w, p, c) = pick(lambda, fit);
    Ok((w, p, c, sweeps))
}

/// Chooses the penalty for one slice.
pub fn tune_lambda(
    b: &DMatrix<f64>,
    designs: &[Vec<f64>],
    mask: &CouplingMask,
    cfg: &FitConfig,
    mode: LambdaTuning,
) -> Result<LambdaChoice> {
    cfg.validate()?;
    check_inputs(b, designs)?;
    let n = b.nrows() as f64;
    // pilot fit at the configured penalty sets the scale and the warm start
    let (pilot, _) = bcd_fit(b, designs, mask, cfg)?;
    let r = factor_correlation(&pilot.tau, designs)?;
    let s = whitened_scatter(&r, b, &pilot.mu) / n;
    let sat = n * saturation_lambda(&s, mask);
    let single = FitConfig { n_starts: 1, ..*cfg };
    let fit_at = |lambda: f64, b: &DMatrix<f64>, designs: &[Vec<f64>]| {
        let c = FitConfig { lambda, ..single };
        let tau0: Vec<f64> = pilot.tau.clone();
        fit_from_start(b, designs, mask, &c, &tau0)
    };
    match mode {
        LambdaTuning::TopKEdges { k } => Ok(top_k_from_pilot(b, designs, mask, cfg, &pilot, k)?.2),
        LambdaTuning::CrossValidate { folds } => {
            let n_runs = b.nrows();
            if folds < 2 || folds > n_runs {
                return Err(invalid(format!("folds = {folds} must lie in [2, {n_runs}]")));
            }
            let top = sat.max(1e-8);
            let grid: Vec<f64> = (0..CV_GRID).map(|i| top * 10f64.powf(-3.0 + 3.0 * i as f64 / (CV_GRID - 1) as f64)).collect();
            let mut curve = Vec::with_capacity(grid.len());
            for &lambda in &grid {
                let errs = (0..folds).map(|f| fold_error(b, designs, f, folds, |bt, dt| fit_at(lambda, bt, dt))).collect::<Result<Vec<f64>>>()?;
                let m = errs.iter().sum::<f64>() / folds as f64;
                let var = errs.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (folds - 1) as f64;
                curve.push((lambda, m, (var / folds as f64).sqrt()));
            }
            let best = curve.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).map(|(i, _)| i).unwrap_or(0);
            let bound = curve[best].1 + curve[best].2;
            let chosen = curve.iter().rposition(|c| c.1 <= bound).unwrap_or(best);
            Ok(LambdaChoice { lambda: curve[chosen].0, edges: None, exact: true, cv_curve: curve })
        }
    }
}

const CV_GRID: usize = 10;

// Squared prediction error on fold `f`; run `i` belongs to fold `i % folds`.
fn fold_error<F>(b: &DMatrix<f64>, designs: &[Vec<f64>], f: usize, folds: usize, fit: F) -> Result<f64>
where
    F: Fn(&DMatrix<f64>, &[Vec<f64>]) -> Result<FitOutcome>,
{
    let train: Vec<usize> = (0..b.nrows()).filter(|i| i % folds != f).collect();
    let test: Vec<usize> = (0..b.nrows()).filter(|i| i % folds == f).collect();
    if train.len() < 2 {
        return Err(invalid("each training fold needs at least two runs"));
    }
    let bt = b.select_rows(&train);
    let dt: Vec<Vec<f64>> = train.iter().map(|&i| designs[i].clone()).collect();
    let o = fit(&bt, &dt)?;
    let model = GpModelSlice::new(o.mu, o.t_cov, Some(o.precision), o.tau, dt, bt)?;
    let mut sse = 0.0;
    for &i in &test {
        let pred = model.predict(&designs[i])?;
        sse += (pred.mean - b.row(i).transpose()).norm_squared();
    }
    Ok(sse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_problem() -> (DMatrix<f64>, Vec<Vec<f64>>) {
        let designs = vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![0.8, 0.4], vec![0.3, 0.6], vec![0.95, 0.05]];
        let b = DMatrix::from_fn(5, 2, |i, k| (designs[i][0] * (k as f64 + 1.0)).sin() + designs[i][1] * designs[i][1]);
        (b, designs)
    }

    #[test]
    fn trivial_nll_vanishes() {
        let b = DMatrix::from_element(1, 1, 0.7);
        let v = penalized_nll(&DVector::from_element(1, 0.7), &DMatrix::identity(1, 1), &[0.5], &b, &[vec![0.3]], 0.0).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn penalty_enters_linearly() {
        let (b, d) = small_problem();
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mu = DVector::from_vec(vec![0.1, -0.2]);
        let v1 = penalized_nll(&mu, &t, &[0.4, 0.6], &b, &d, 0.5).unwrap();
        let v2 = penalized_nll(&mu, &t, &[0.4, 0.6], &b, &d, 1.0).unwrap();
        let l1 = l1_norm(&t.clone().try_inverse().unwrap());
        assert!((v2 - v1 - 0.5 * l1).abs() < 1e-12);
    }

    #[test]
    fn identity_correlation_gives_column_means() {
        // designs far apart with tiny tau make R numerically the identity
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 5.0, 6.0, 0.0]);
        let d = vec![vec![0.0], vec![1.0], vec![2.0]];
        let mu = profile_mu(&[1e-3], &b, &d).unwrap();
        assert!((mu[0] - 3.0).abs() < 1e-10 && (mu[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn multistart_set_is_seeded_and_inside_box() {
        let a = multistart_taus(3, 8, 7);
        assert_eq!(a, multistart_taus(3, 8, 7));
        assert_ne!(a, multistart_taus(3, 8, 8));
        assert_eq!(a[0], vec![TAU_HI; 3]);
        assert!(a.iter().flatten().all(|&t| (TAU_LO..=TAU_HI).contains(&t)));
    }

    #[test]
    fn bcd_trace_is_monotone() {
        let (b, d) = small_problem();
        let (_, rep) = bcd_fit(&b, &d, &CouplingMask::unrestricted(2), &FitConfig { lambda: 0.05, n_starts: 2, ..Default::default() }).unwrap();
        assert!(rep.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*rep.trace.last().unwrap(), rep.nll);
    }

    #[test]
    fn one_run_is_rejected() {
        let b = DMatrix::from_element(1, 2, 1.0);
        assert!(bcd_fit(&b, &[vec![0.5]], &CouplingMask::unrestricted(2), &FitConfig::default()).is_err());
    }
}
