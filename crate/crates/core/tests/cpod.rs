use flowemu_core::cokrige::DesignSpace;
use flowemu_core::cpod::{extract_basis, pod_variable, reconstruct, CpodOptions};
use flowemu_core::eigen::{leading_eigenpairs_with, EigenMethod, LanczosOptions};
use flowemu_core::geometry::{GeomParam, GeometryParams};
use flowemu_core::idw::idw_interpolate;
use flowemu_core::synth::{coupled_covariance, generate, space_filling_design, SyntheticSpec, SyntheticVariable};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

// Sorts every source point by distance and averages the nearest k with 1/d^2 weights.
fn brute_idw(src: &[[f64; 2]], vals: &[f64], q: [f64; 2], k: usize) -> f64 {
    let mut d: Vec<(f64, usize)> = src.iter().enumerate().map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let near = &d[..k];
    let (num, den) = near.iter().fold((0.0, 0.0), |(n, w), &(d2, i)| (n + vals[i] / d2, w + 1.0 / d2));
    num / den
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn idw_matches_brute_force(seed in 0u64..100_000, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<[f64; 2]> = (0..60).map(|_| [rng.random(), rng.random()]).collect();
        let vals: Vec<f64> = (0..60).map(|_| rng.sample(StandardNormal)).collect();
        let queries: Vec<[f64; 2]> = (0..20).map(|_| [rng.random::<f64>() * 1.2 - 0.1, rng.random::<f64>() * 1.2 - 0.1]).collect();
        let got = idw_interpolate(&src, &vals, &queries, k).unwrap();
        for (q, g) in queries.iter().zip(&got) {
            prop_assert!((g - brute_idw(&src, &vals, *q, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn idw_stays_within_source_range(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<[f64; 2]> = (0..30).map(|_| [rng.random(), rng.random()]).collect();
        let vals: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let q = [[rng.random(), rng.random()]];
        let v = idw_interpolate(&src, &vals, &q, 10).unwrap()[0];
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }
}

#[test]
fn lanczos_matches_dense_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let a = gaussian(200, 60, &mut rng);
        let q = &a * a.transpose();
        let lz = leading_eigenpairs_with(&q, 5, EigenMethod::Lanczos, LanczosOptions::default()).unwrap();
        let eig = q.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..200).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        for c in 0..5 {
            let exact = eig.eigenvalues[order[c]];
            assert!((lz.values[c] - exact).abs() <= 1e-8 * exact);
        }
        let u = eig.eigenvectors.select_columns(&order[..5]);
        let s = (u.transpose() * &lz.vectors).singular_values();
        let worst = s.iter().copied().fold(1.0, f64::min).min(1.0);
        assert!(worst.acos() < 1e-6, "subspace angle {}", worst.acos());
    }
}

#[test]
fn truncation_error_is_the_discarded_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = gaussian(400, 30, &mut rng) * DMatrix::from_diagonal(&DVector::from_fn(30, |i, _| 0.8f64.powi(i as i32)));
    let opts = CpodOptions { energy_target: 0.9, ..Default::default() };
    let (basis, coeffs) = pod_variable("u", &y, &opts).unwrap();
    let m = basis.n_modes();
    assert!(m < 30);
    let sse = (&y - &basis.modes * &coeffs).norm_squared();
    let all = y.tr_mul(&y).symmetric_eigenvalues();
    let mut ev: Vec<f64> = all.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let tail: f64 = ev[m..].iter().sum();
    assert!((sse - tail).abs() <= 1e-8 * tail);

    for _ in 0..20 {
        let q = gaussian(400, m, &mut rng).qr().q();
        let other = (&y - &q * q.tr_mul(&y)).norm_squared();
        assert!(sse <= other);
    }
}

fn recovery_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        space: DesignSpace::with_default_ranges(&[GeomParam::Length, GeomParam::NozzleRadius]),
        base: GeometryParams::nominal(),
        designs: space_filling_design(2, 4, seed),
        variables: vec![SyntheticVariable { name: "u".into(), n_modes: 3 }, SyntheticVariable { name: "v".into(), n_modes: 2 }],
        mu: DVector::from_vec(vec![4.0, 0.0, 0.0, 1.0, 0.0]),
        t_cov: coupled_covariance(&[1.0, 0.6, 0.4, 1.0, 0.5], &[(0, 3, 0.5)]).unwrap(),
        tau: vec![0.4, 0.4],
        n_steps: 6,
        noise: 0.0,
        seed,
        grid: (16, 10),
        downstream: (20.0, 6.0),
    }
}

#[test]
fn recovers_span_of_true_modes() {
    let spec = recovery_spec(8);
    let e = generate(&spec).unwrap();
    let (basis, coeffs) = extract_basis(&e.runs, &CpodOptions { energy_target: 1.0, ..Default::default() }).unwrap();
    for (v, truth) in basis.variables.iter().zip(&e.modes) {
        assert_eq!(v.n_modes(), truth.ncols());
        let s = v.modes.tr_mul(truth).singular_values();
        for sv in s.iter() {
            assert!(sv.min(1.0).acos() <= 1e-6, "{} angle {}", v.name, sv.min(1.0).acos());
        }
    }
    for i in 0..e.runs.len() {
        let r = reconstruct(&basis, &coeffs, 1, i, 2);
        assert!((r - e.runs[i].field("v").unwrap().values.column(2)).amax() < 1e-9);
    }
}

#[test]
fn seeds_change_coefficients_not_modes() {
    let a = generate(&recovery_spec(1)).unwrap();
    let mut s = recovery_spec(1);
    s.seed = 2;
    let b = generate(&s).unwrap();
    assert_eq!(a.modes, b.modes);
    assert_ne!(a.coefficients, b.coefficients);
    let again = generate(&recovery_spec(1)).unwrap();
    assert_eq!(a.coefficients, again.coefficients);
}

#[test]
fn higher_energy_target_keeps_more_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = gaussian(100, 20, &mut rng);
    let lo = pod_variable("u", &y, &CpodOptions { energy_target: 0.99, ..Default::default() }).unwrap().0.n_modes();
    let hi = pod_variable("u", &y, &CpodOptions { energy_target: 1.0, ..Default::default() }).unwrap().0.n_modes();
    assert!(hi >= lo);
    assert_eq!(hi, 20);
}
