//! Discrete Fourier transform and the one-sided periodogram used for probe
//! time series.

use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;
use nalgebra::Complex;
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::error::{invalid, Result};

type C = Complex<f64>;

fn unit(angle: f64) -> C {
    C::new(angle.cos(), angle.sin())
}

/// Forward DFT `X_k = sum_n x_n exp(-2 pi i k n / N)` for any length.
pub fn fft(input: &[C]) -> Vec<C> {
    let n = input.len();
    if n <= 1 {
        return input.to_vec();
    }
    if n.is_power_of_two() {
        let mut a = input.to_vec();
        radix2(&mut a, false);
        a
    } else {
        bluestein(input)
    }
}

fn radix2(a: &mut [C], inverse: bool) {
    let n = a.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            a.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = unit(ang * k as f64);
                let u = a[start + k];
                let v = a[start + k + len / 2] * w;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
}

// Chirp-z evaluation of an arbitrary-length DFT through a power-of-two convolution.
fn bluestein(x: &[C]) -> Vec<C> {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();
    let chirp: Vec<C> = (0..n)
        .map(|k| {
            // k^2 mod 2n keeps the angle argument small
            let e = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
            unit(-PI * e / n as f64)
        })
        .collect();
    let mut a = vec![C::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = x[k] * chirp[k];
    }
    let mut b = vec![C::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| a[k] * scale * chirp[k]).collect()
}

/// Taper applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    /// One-sided power spectral density.
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }

    /// Indices of local maxima, strongest first.
    pub fn peaks(&self) -> Vec<usize> {
        let p = &self.power;
        let mut idx: Vec<usize> = (1..p.len())
            .filter(|&k| p[k] > 0.0 && p[k] >= p[k - 1] && (k + 1 == p.len() || p[k] > p[k + 1]))
            .collect();
        idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        idx
    }
}

/// One-sided periodogram of the mean-removed series sampled every `dt`.
/// With the rectangular window, `sum(power) * df` equals the (population)
/// variance of the series.
pub fn psd_probe(series: &[f64], dt: f64, window: Window) -> Result<Spectrum> {
    let t = series.len();
    if t < 8 {
        return Err(invalid(alloc::format!("PSD needs at least 8 samples, got {t}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("sampling interval must be positive"));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let w: Vec<f64> = match window {
        Window::Rectangular => vec![1.0; t],
        Window::Hann => (0..t).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / t as f64).cos()).collect(),
    };
    let norm = w.iter().map(|v| v * v).sum::<f64>() / t as f64;
    let x: Vec<C> = series.iter().zip(&w).map(|(v, wi)| C::new((v - mean) * wi, 0.0)).collect();
    let spec = fft(&x);
    let half = t / 2;
    let df = 1.0 / (t as f64 * dt);
    let mut power = Vec::with_capacity(half + 1);
    for (k, s) in spec.iter().enumerate().take(half + 1) {
        let mut p = s.norm_sqr() * dt / (t as f64 * norm);
        if k != 0 && !(t % 2 == 0 && k == half) {
            p *= 2.0;
        }
        power.push(p);
    }
    let frequencies = (0..=half).map(|k| k as f64 * df).collect();
    Ok(Spectrum { frequencies, power })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[C]) -> Vec<C> {
        let n = x.len();
        (0..n)
            .map(|k| (0..n).map(|j| x[j] * unit(-2.0 * PI * (k * j) as f64 / n as f64)).sum())
            .collect()
    }

    #[test]
    fn fft_matches_naive_for_all_lengths() {
        for n in [1usize, 2, 3, 5, 8, 12, 17, 64, 100] {
            let x: Vec<C> = (0..n).map(|i| C::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos())).collect();
            let a = fft(&x);
            let b = naive(&x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).norm_sqr().sqrt() < 1e-10 * n as f64, "n={n}");
            }
        }
    }

    #[test]
    fn bin_sinusoid_has_one_line() {
        let t = 64;
        let s: Vec<f64> = (0..t).map(|n| (2.0 * PI * 5.0 * n as f64 / t as f64).sin()).collect();
        let sp = psd_probe(&s, 0.01, Window::Rectangular).unwrap();
        let nonzero: Vec<usize> = (0..sp.power.len()).filter(|&k| sp.power[k] > 1e-20).collect();
        assert_eq!(nonzero, vec![5]);
        assert_eq!(sp.peaks()[0], 5);
    }

    #[test]
    fn constant_series_is_flat_zero() {
        let sp = psd_probe(&[3.0; 10], 1.0, Window::Rectangular).unwrap();
        assert!(sp.power.iter().all(|&p| p.abs() < 1e-25));
    }
}
