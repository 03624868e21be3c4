//! Law of `offset + sum_j w_j X_j` with independent `X_j ~ chi^2_1(nc_j)`:
//! distribution function by Imhof inversion or a moment-matching
//! approximation, and quantiles.

use alloc::vec::Vec;

use core::f64::consts::PI;
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::special::noncentral_chi2_cdf;

#[derive(Debug, Clone, PartialEq)]
pub struct WncqDistribution {
    pub weights: Vec<f64>,
    pub noncentralities: Vec<f64>,
    /// Deterministic shift.
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CdfMethod {
    /// Numerical inversion of the characteristic function.
    #[default]
    Imhof,
    /// Match the first four cumulants to a scaled noncentral chi-square.
    Liu,
}

/// Target absolute accuracy of the Imhof inversion.
pub const CDF_TOL: f64 = 1e-9;

impl WncqDistribution {
    pub fn new(weights: Vec<f64>, noncentralities: Vec<f64>, offset: f64) -> Result<Self> {
        if weights.len() != noncentralities.len() {
            return Err(Error::Dimension { expected: weights.len(), found: noncentralities.len() });
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(invalid("weights must be positive and finite"));
        }
        if noncentralities.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(invalid("noncentralities must be non-negative and finite"));
        }
        if !offset.is_finite() {
            return Err(invalid("offset must be finite"));
        }
        Ok(WncqDistribution { weights, noncentralities, offset })
    }

    /// A point mass at `value`.
    pub fn point_mass(value: f64) -> Self {
        WncqDistribution { weights: Vec::new(), noncentralities: Vec::new(), offset: value }
    }

    pub fn is_degenerate(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.offset + self.weights.iter().zip(&self.noncentralities).map(|(w, m)| w * (1.0 + m)).sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        self.weights.iter().zip(&self.noncentralities).map(|(w, m)| 2.0 * w * w * (1.0 + 2.0 * m)).sum()
    }

    /// `P(Q <= q)`.
    pub fn cdf(&self, q: f64, method: CdfMethod) -> Result<f64> {
        if !q.is_finite() {
            return if q > 0.0 { Ok(1.0) } else if q < 0.0 { Ok(0.0) } else { Err(invalid("q is NaN")) };
        }
        let x = q - self.offset;
        if self.is_degenerate() {
            return Ok(if x >= 0.0 { 1.0 } else { 0.0 });
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        match method {
            CdfMethod::Imhof => imhof(&self.weights, &self.noncentralities, x),
            CdfMethod::Liu => Ok(liu(&self.weights, &self.noncentralities, x)),
        }
    }

    /// Smallest `q` with `P(Q <= q) >= p`, located by bisection to within 1e-9 in probability.
    pub fn quantile(&self, p: f64, method: CdfMethod) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(alloc::format!("probability {p} outside (0, 1)")));
        }
        if self.is_degenerate() {
            return Ok(self.offset);
        }
        let mut lo = self.offset;
        let mut hi = self.mean() + 10.0 * self.variance().sqrt();
        while self.cdf(hi, method)? < p {
            lo = hi;
            hi = self.offset + 2.0 * (hi - self.offset);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c = self.cdf(mid, method)?;
            if (c - p).abs() <= 1e-9 {
                return Ok(mid);
            }
            if c < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1e-300) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn band(&self, level: f64, side: BandSide, method: CdfMethod) -> Result<Band> {
        if !(level > 0.0 && level < 1.0) {
            return Err(invalid(alloc::format!("level {level} outside (0, 1)")));
        }
        Ok(match side {
            BandSide::Lower => Band { lower: Some(self.quantile(1.0 - level, method)?), upper: None },
            BandSide::Upper => Band { lower: None, upper: Some(self.quantile(level, method)?) },
            BandSide::TwoSided => Band {
                lower: Some(self.quantile(0.5 * (1.0 - level), method)?),
                upper: Some(self.quantile(0.5 * (1.0 + level), method)?),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandSide {
    /// `Q >= lower` with the given probability.
    Lower,
    /// `Q <= upper` with the given probability.
    Upper,
    /// Equal tails on both sides.
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

fn integrand(w: &[f64], nc: &[f64], x: f64, u: f64) -> f64 {
    let mut theta = -0.5 * x * u;
    let mut log_rho = 0.0;
    for (&wj, &dj) in w.iter().zip(nc) {
        let wu = wj * u;
        let s = 1.0 + wu * wu;
        theta += 0.5 * (wu.atan() + dj * wu / s);
        log_rho += 0.25 * s.ln() + 0.5 * dj * wu * wu / s;
    }
    theta.sin() / (u * log_rho.exp())
}

fn envelope(w: &[f64], nc: &[f64], u: f64) -> f64 {
    let mut log_rho = 0.0;
    for (&wj, &dj) in w.iter().zip(nc) {
        let wu = wj * u;
        let s = 1.0 + wu * wu;
        log_rho += 0.25 * s.ln() + 0.5 * dj * wu * wu / s;
    }
    1.0 / (u * log_rho.exp())
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GK_WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let d = h * GK_X[i];
        let s = f(c - d) + f(c + d);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
    let (v, e) = gk15(f, a, b);
    if e <= tol || depth == 0 {
        return (v, e);
    }
    let m = 0.5 * (a + b);
    let (v1, e1) = adaptive(f, a, m, 0.5 * tol, depth - 1);
    let (v2, e2) = adaptive(f, m, b, 0.5 * tol, depth - 1);
    (v1 + v2, e1 + e2)
}

// Wynn epsilon extrapolation of a sequence of partial sums; returns the
// estimate and the difference to the previous one.
fn wynn(s: &[f64]) -> (f64, f64) {
    let n = s.len();
    if n < 3 {
        let last = s[n - 1];
        return (last, if n > 1 { (last - s[n - 2]).abs() } else { f64::INFINITY });
    }
    let mut prev: Vec<f64> = alloc::vec![0.0; n + 1];
    let mut cur: Vec<f64> = s.to_vec();
    let mut best = (s[n - 1], (s[n - 1] - s[n - 2]).abs());
    let mut col = 0;
    while cur.len() > 1 {
        let next: Vec<f64> = (0..cur.len() - 1)
            .map(|i| {
                let d = cur[i + 1] - cur[i];
                let base = if col == 0 { 0.0 } else { prev[i + 1] };
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    base + 1.0 / d
                }
            })
            .collect();
        col += 1;
        prev = cur;
        cur = next;
        if col % 2 == 0 && cur.len() >= 2 {
            let (a, b) = (cur[cur.len() - 2], cur[cur.len() - 1]);
            if a.is_finite() && b.is_finite() {
                best = (b, (b - a).abs());
            } else {
                break;
            }
        }
    }
    best
}

/// Imhof inversion: `P(Q <= x) = 1/2 - (1/pi) int_0^inf sin(theta(u)) / (u rho(u)) du`,
/// integrated over successive half-periods of the oscillation and
/// extrapolated with the epsilon algorithm.
fn imhof(w: &[f64], nc: &[f64], x: f64) -> Result<f64> {
    let f = |u: f64| integrand(w, nc, x, u);
    let wmax = w.iter().copied().fold(0.0, f64::max);
    let h = (2.0 * PI / x).min(64.0 / wmax).min(2.0 * PI / (0.5 * w.iter().sum::<f64>()));
    let mut sums: Vec<f64> = Vec::new();
    let mut total = 0.0;
    let mut quad_err = 0.0;
    let mut stable = 0;
    let mut last = (f64::NAN, f64::INFINITY);
    for m in 0..20_000 {
        let (a, b) = (m as f64 * h, (m + 1) as f64 * h);
        let (v, e) = adaptive(&f, a, b, 1e-14, 30);
        total += v;
        quad_err += e;
        sums.push(total);
        let tail = envelope(w, nc, b) * h;
        if tail < 1e-15 {
            return Ok((0.5 - total / PI).clamp(0.0, 1.0));
        }
        if sums.len() < 6 {
            continue;
        }
        let window = &sums[sums.len().saturating_sub(24)..];
        let est = wynn(window);
        if (est.0 - last.0).abs() <= 0.1 * CDF_TOL * PI && est.1 <= CDF_TOL * PI {
            stable += 1;
            if stable >= 3 {
                return Ok((0.5 - est.0 / PI).clamp(0.0, 1.0));
            }
        } else {
            stable = 0;
        }
        last = est;
    }
    Err(Error::Quadrature { bound: (last.1 + quad_err) / PI })
}

// Liu, Tang and Zhang style four-cumulant match to a noncentral chi-square.
fn liu(w: &[f64], nc: &[f64], x: f64) -> f64 {
    let c = |k: i32| -> f64 { w.iter().zip(nc).map(|(&wj, &dj)| wj.powi(k) * (1.0 + k as f64 * dj)).sum() };
    let (c1, c2, c3, c4) = (c(1), c(2), c(3), c(4));
    let s1 = c3 / c2.powf(1.5);
    let s2 = c4 / (c2 * c2);
    let (a, delta, l) = if s1 * s1 > s2 {
        let a = 1.0 / (s1 - (s1 * s1 - s2).sqrt());
        let delta = s1 * a * a * a - a * a;
        (a, delta, a * a - 2.0 * delta)
    } else {
        let a = 1.0 / s1;
        (a, 0.0, 1.0 / (s1 * s1))
    };
    let mu_q = c1;
    let sd_q = (2.0 * c2).sqrt();
    let mu_x = l + delta;
    let sd_x = 2.0f64.sqrt() * a;
    let t = (x - mu_q) / sd_q;
    noncentral_chi2_cdf(t * sd_x + mu_x, l, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{chi2_cdf, normal_cdf};
    use alloc::vec;

    #[test]
    fn single_central_term_is_chi2() {
        let d = WncqDistribution::new(vec![1.0], vec![0.0], 0.0).unwrap();
        for &q in &[0.01, 0.3, 1.0, 2.7, 6.0, 15.0] {
            let got = d.cdf(q, CdfMethod::Imhof).unwrap();
            assert!((got - chi2_cdf(q, 1.0)).abs() < 1e-8, "q={q}: {got} vs {}", chi2_cdf(q, 1.0));
        }
    }

    #[test]
    fn single_noncentral_term_matches_normal_formula() {
        let (m, w) = (1.2f64, 0.7f64);
        let d = WncqDistribution::new(vec![w], vec![m * m], 0.5).unwrap();
        for &q in &[0.6, 1.0, 2.0, 4.0] {
            let s = ((q - 0.5) / w).sqrt();
            let exact = normal_cdf(s - m) - normal_cdf(-s - m);
            assert!((d.cdf(q, CdfMethod::Imhof).unwrap() - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn two_equal_weights_are_exponential() {
        // w (chi2_1 + chi2_1) = w chi2_2
        let d = WncqDistribution::new(vec![0.5, 0.5], vec![0.0, 0.0], 0.0).unwrap();
        for &q in &[0.05, 0.5, 1.0, 3.0] {
            let exact = 1.0 - (-q).exp();
            assert!((d.cdf(q, CdfMethod::Imhof).unwrap() - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn support_bounds_and_point_mass() {
        let d = WncqDistribution::new(vec![1.0, 0.5], vec![0.3, 0.0], 2.0).unwrap();
        assert_eq!(d.cdf(1.5, CdfMethod::Imhof).unwrap(), 0.0);
        assert!((d.cdf(1e4, CdfMethod::Imhof).unwrap() - 1.0).abs() < 1e-9);
        let p = WncqDistribution::point_mass(3.0);
        assert_eq!(p.quantile(0.1, CdfMethod::Imhof).unwrap(), 3.0);
        assert_eq!(p.cdf(2.9, CdfMethod::Imhof).unwrap(), 0.0);
        assert_eq!(p.cdf(3.0, CdfMethod::Imhof).unwrap(), 1.0);
    }

    #[test]
    fn lower_band_of_chi2_one() {
        let d = WncqDistribution::new(vec![1.0], vec![0.0], 0.0).unwrap();
        let b = d.band(0.9, BandSide::Lower, CdfMethod::Imhof).unwrap();
        assert!((b.lower.unwrap() - 0.015_79).abs() < 1e-3);
        let two = d.band(0.8, BandSide::TwoSided, CdfMethod::Imhof).unwrap();
        let mass = d.cdf(two.upper.unwrap(), CdfMethod::Imhof).unwrap() - d.cdf(two.lower.unwrap(), CdfMethod::Imhof).unwrap();
        assert!((mass - 0.8).abs() < 1e-6);
    }

    #[test]
    fn liu_is_exact_for_a_single_term() {
        let d = WncqDistribution::new(vec![2.0], vec![0.0], 0.0).unwrap();
        assert!((d.cdf(3.0, CdfMethod::Liu).unwrap() - chi2_cdf(1.5, 1.0)).abs() < 1e-10);
    }
}
