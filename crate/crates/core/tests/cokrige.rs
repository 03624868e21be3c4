use flowemu_core::cokrige::{correlation, correlation_matrix, CovarianceModel, GpModelSlice};
use flowemu_core::special::chi2_quantile;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(k, k) * 0.5
}

fn random_model(n: usize, k: usize, p: usize, rng: &mut ChaCha8Rng) -> GpModelSlice {
    let designs: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect();
    let tau: Vec<f64> = (0..p).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect();
    let b = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mu = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    GpModelSlice::new(mu, random_spd(k, rng), None, tau, designs, b).unwrap()
}

// Conditions the nK-dimensional Gaussian with covariance R (x) T on the
// observed stack, with the new point appended, using dense matrices only.
fn dense_conditional(m: &GpModelSlice, c_new: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.n_runs();
    let k = m.n_modes();
    let mut all = m.designs.clone();
    all.push(c_new.to_vec());
    let r = correlation_matrix(&m.tau, &all);
    let big = r.kronecker(&m.t_cov);
    let obs = n * k;
    let s11 = big.view((0, 0), (obs, obs)).clone_owned();
    let s21 = big.view((obs, 0), (k, obs)).clone_owned();
    let s22 = big.view((obs, obs), (k, k)).clone_owned();
    let mut y = DVector::zeros(obs);
    for i in 0..n {
        for j in 0..k {
            y[i * k + j] = m.coeffs[(i, j)] - m.mu[j];
        }
    }
    let inv = s11.clone().try_inverse().unwrap();
    let mean = &m.mu + &s21 * &inv * y;
    let cov = s22 - &s21 * inv * s21.transpose();
    (mean, cov)
}

fn condition(m: &GpModelSlice) -> f64 {
    let ev = correlation_matrix(&m.tau, &m.designs).symmetric_eigenvalues();
    ev.max() / ev.min()
}

#[test]
fn matches_dense_kronecker_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 20 {
        let m = random_model(3, 2, 1, &mut rng);
        let c = [rng.random::<f64>()];
        // both sides lose about cond(R) * eps; keep the comparison meaningful at 1e-10
        if condition(&m) > 1e5 {
            continue;
        }
        checked += 1;
        let pred = m.predict(&c).unwrap();
        let (mean, cov) = dense_conditional(&m, &c);
        assert!((&pred.mean - &mean).amax() < 1e-10);
        assert!((pred.covariance(CovarianceModel::Joint) - cov).amax() < 1e-10);
    }
}

#[test]
fn theta_parameterisation_is_equivalent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let tau: Vec<f64> = (0..3).map(|_| 0.01 + 0.98 * rng.random::<f64>()).collect();
        let a: Vec<f64> = (0..3).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random()).collect();
        let gauss = (-(0..3).map(|j| -4.0 * tau[j].ln() * (a[j] - b[j]).powi(2)).sum::<f64>()).exp();
        assert!((correlation(&tau, &a, &b).unwrap() - gauss).abs() < 1e-14);
    }
}

#[test]
fn mean_is_unchanged_by_dropping_cross_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let m = random_model(5, 3, 2, &mut rng);
        let diag = DMatrix::from_diagonal(&m.t_cov.diagonal());
        let d = GpModelSlice::new(m.mu.clone(), diag, None, m.tau.clone(), m.designs.clone(), m.coeffs.clone()).unwrap();
        let c = [rng.random::<f64>(), rng.random::<f64>()];
        assert!((m.predict(&c).unwrap().mean - d.predict(&c).unwrap().mean).amax() < 1e-12);
    }
}

#[test]
fn independent_region_undercovers_correlated_draws() {
    // Monte Carlo coverage of the diagonal-T region under draws from the full law
    let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
    let l = t.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for alpha in [0.05, 0.1, 0.2] {
        let q = chi2_quantile(1.0 - alpha, 2.0);
        let draws = 200_000;
        let mut inside = 0;
        for _ in 0..draws {
            let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &l * z;
            if x[0] * x[0] + x[1] * x[1] <= q {
                inside += 1;
            }
        }
        let cov = inside as f64 / draws as f64;
        assert!(cov < 1.0 - alpha, "alpha={alpha}: coverage {cov}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_factor_is_a_fraction(seed in 0u64..10_000, c0 in -0.5f64..1.5, c1 in -0.5f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(6, 2, 2, &mut rng);
        let f = m.predict(&[c0, c1]).unwrap().variance_factor;
        prop_assert!(f >= -1e-10 && f <= 1.0 + 1e-12);
    }

    #[test]
    fn correlation_matrix_is_valid(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let designs: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random(), rng.random()]).collect();
        let tau = vec![0.05 + 0.9 * rng.random::<f64>(), 0.05 + 0.9 * rng.random::<f64>()];
        let r = correlation_matrix(&tau, &designs);
        prop_assert!((&r - r.transpose()).amax() == 0.0);
        prop_assert!((0..8).all(|i| r[(i, i)] == 1.0));
        let min = r.symmetric_eigenvalues().min();
        prop_assert!(min > -1e-12);
    }

    #[test]
    fn adding_a_run_never_raises_variance(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let big = random_model(6, 2, 2, &mut rng);
        let small = GpModelSlice::new(
            big.mu.clone(), big.t_cov.clone(), None, big.tau.clone(),
            big.designs[..5].to_vec(), big.coeffs.rows(0, 5).clone_owned(),
        ).unwrap();
        let c = [rng.random::<f64>(), rng.random::<f64>()];
        let a = small.predict(&c).unwrap().variance_factor;
        let b = big.predict(&c).unwrap().variance_factor;
        prop_assert!(b <= a + 1e-10);
    }
}
