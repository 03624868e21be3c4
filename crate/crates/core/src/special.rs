//! Gamma-family special functions and chi-square distribution helpers.

#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = core::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    let mut a = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * core::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cf(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..10_000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz continued fraction for Q(a, x).
fn gamma_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// CDF of a central chi-square with `df` degrees of freedom.
pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_p(0.5 * df, 0.5 * x)
    }
}

/// Survival function of a central chi-square.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_q(0.5 * df, 0.5 * x)
    }
}

/// Chi-square quantile by bisection on the regularized incomplete gamma.
/// The returned point satisfies `|cdf(x) - p| <= 1e-10` (or the bracket collapsed).
pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    let mut hi = df.max(1.0);
    while chi2_cdf(hi, df) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let c = chi2_cdf(mid, df);
        if (c - p).abs() <= 1e-13 {
            return mid;
        }
        if c < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// CDF of a noncentral chi-square with real `df > 0` and noncentrality `nc >= 0`,
/// as a Poisson mixture of central chi-squares summed outward from the mode.
pub fn noncentral_chi2_cdf(x: f64, df: f64, nc: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if nc <= 0.0 {
        return chi2_cdf(x, df);
    }
    let half = 0.5 * nc;
    let mode = half.floor() as i64;
    let ln_pois = |k: i64| -half + k as f64 * half.ln() - ln_gamma(k as f64 + 1.0);
    let term = |k: i64| ln_pois(k).exp() * chi2_cdf(x, df + 2.0 * k as f64);
    let mut sum = term(mode);
    let mut k = mode + 1;
    loop {
        let w = ln_pois(k).exp();
        sum += w * chi2_cdf(x, df + 2.0 * k as f64);
        if w < 1e-17 && k > mode + 5 {
            break;
        }
        k += 1;
    }
    let mut k = mode - 1;
    while k >= 0 {
        let w = ln_pois(k).exp();
        sum += w * chi2_cdf(x, df + 2.0 * k as f64);
        if w < 1e-17 {
            break;
        }
        k -= 1;
    }
    sum.clamp(0.0, 1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - core::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn chi2_one_df_matches_erf() {
        for &x in &[0.01, 0.3, 1.0, 2.5, 7.0, 20.0] {
            let exact = libm::erf((x / 2.0f64).sqrt());
            assert!((chi2_cdf(x, 1.0) - exact).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn chi2_two_df_is_exponential() {
        for &x in &[0.1, 1.0, 4.0, 30.0] {
            assert!((chi2_cdf(x, 2.0) - (1.0 - (-x / 2.0).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn quantiles_invert_the_cdf() {
        // chi2_2(0.9) = -2 ln(0.1)
        assert!((chi2_quantile(0.9, 2.0) - (-2.0 * 0.1f64.ln())).abs() < 1e-9);
        // lower 10% point of chi2_1
        assert!((chi2_quantile(0.1, 1.0) - 0.015_790_774_093_431_218).abs() < 1e-9);
        for &df in &[1.0, 3.0, 6.0, 12.0] {
            for &p in &[0.05, 0.5, 0.95] {
                let q = chi2_quantile(p, df);
                assert!((chi2_cdf(q, df) - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noncentral_reduces_to_central_and_matches_shift() {
        assert!((noncentral_chi2_cdf(2.0, 3.0, 0.0) - chi2_cdf(2.0, 3.0)).abs() < 1e-15);
        // df = 1: P((Z + m)^2 <= x) = Phi(sqrt x - m) - Phi(-sqrt x - m)
        let (m, x) = (1.3f64, 2.2f64);
        let exact = normal_cdf(x.sqrt() - m) - normal_cdf(-x.sqrt() - m);
        assert!((noncentral_chi2_cdf(x, 1.0, m * m) - exact).abs() < 1e-12);
    }
}
