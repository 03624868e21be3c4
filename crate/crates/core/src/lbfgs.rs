//! Limited-memory BFGS with a bracketing weak-Wolfe line search.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    /// Converged once the gradient infinity norm drops below this.
    pub grad_tol: f64,
    pub memory: usize,
    pub max_iter: usize,
    pub max_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { grad_tol: 1e-6, memory: 8, max_iter: 200, max_evals: 2_000 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimises `f`, which returns the value and gradient or `None` where the
/// objective cannot be evaluated (treated as `+inf` by the line search).
/// The returned point is the best one evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut evaluations = 1;
    let (mut fx, mut g) = match f(x0) {
        Some(v) => v,
        None => {
            return LbfgsResult {
                x: x0.to_vec(),
                f: f64::INFINITY,
                grad: alloc::vec![f64::NAN; n],
                iterations: 0,
                evaluations,
                converged: false,
            }
        }
    };
    let mut x = x0.to_vec();
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = inf_norm(&g) <= opts.grad_tol;
    while !converged && iterations < opts.max_iter && evaluations < opts.max_evals {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / inf_norm(&g).max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let Some((step, f_new, g_new, used)) = line_search(&mut f, &x, fx, slope, &d, opts.max_evals - evaluations)
        else {
            break;
        };
        evaluations += used;
        let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == opts.memory.max(1) {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        converged = inf_norm(&g) <= opts.grad_tol;
        if !converged && decrease <= 1e-15 * fx.abs().max(1.0) {
            break;
        }
    }
    LbfgsResult { x, f: fx, grad: g, iterations, evaluations, converged }
}

type Eval = (f64, f64, Vec<f64>, usize);

// Bisection/expansion search for a step meeting the weak Wolfe conditions.
// Falls back to the best Armijo-satisfying point found.
fn line_search<F>(f: &mut F, x: &[f64], f0: f64, slope: f64, d: &[f64], budget: usize) -> Option<Eval>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut t = 1.0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut used = 0;
    while used < budget.min(60) {
        used += 1;
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        match f(&xt) {
            Some((ft, gt)) if ft.is_finite() => {
                if ft > f0 + C1 * t * slope {
                    hi = t;
                } else {
                    if best.as_ref().map_or(true, |b| ft < b.1) {
                        best = Some((t, ft, gt.clone()));
                    }
                    if dot(&gt, d) < C2 * slope {
                        lo = t;
                    } else {
                        return Some((t, ft, gt, used));
                    }
                }
            }
            _ => hi = t,
        }
        t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo.max(t) };
        if hi.is_finite() && hi - lo < 1e-16 * hi.max(1.0) {
            break;
        }
    }
    best.map(|(t, ft, gt)| (t, ft, gt, used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let r = minimize(f, &[-1.2, 1.0], &LbfgsOptions { grad_tol: 1e-9, ..Default::default() });
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-7 && (r.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let f = |x: &[f64]| Some((x[0] * x[0], vec![2.0 * x[0]]));
        let r = minimize(f, &[0.0], &LbfgsOptions::default());
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // minimum of x - ln x at 1, undefined for x <= 0
        let f = |x: &[f64]| (x[0] > 0.0).then(|| (x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]]));
        let r = minimize(f, &[5.0], &LbfgsOptions { grad_tol: 1e-10, ..Default::default() });
        assert!((r.x[0] - 1.0).abs() < 1e-8);
    }
}
