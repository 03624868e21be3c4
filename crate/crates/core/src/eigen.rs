//! Leading eigenpairs of symmetric positive-semidefinite operators.
//!
//! Large problems go through an implicitly restarted Lanczos iteration (the
//! symmetric specialisation of implicitly restarted Arnoldi) with full
//! reorthogonalisation and exact shifts. Small problems use a dense solver.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{canonical_signs, sym_eigen_desc};

/// Problems up to this order are handed to the dense solver under [`EigenMethod::Auto`].
pub const DENSE_LIMIT: usize = 512;

/// A symmetric linear operator `x -> A x`.
pub trait SymOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl SymOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
}

/// Gram operator `x -> Y' (Y x)` of a snapshot matrix, never formed explicitly.
pub struct GramOperator<'a>(pub &'a DMatrix<f64>);

impl SymOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.tr_mul(&(self.0 * x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense below [`DENSE_LIMIT`], Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Krylov subspace size; defaults to `max(2 nev + 1, nev + 20)`.
    pub ncv: Option<usize>,
    /// Ritz residual tolerance relative to the largest Ritz value.
    pub tol: f64,
    pub max_restarts: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions { ncv: None, tol: 1e-12, max_restarts: 3000 }
    }
}

/// Leading eigenvalues (descending) and the matching orthonormal eigenvectors
/// as columns. Each vector's largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    /// Number of implicit restarts performed (0 for the dense path).
    pub restarts: usize,
}

/// The `m` largest eigenpairs of the symmetric matrix `q`.
pub fn leading_eigenpairs(q: &DMatrix<f64>, m: usize) -> Result<EigenPairs> {
    if q.nrows() != q.ncols() {
        return Err(Error::Dimension { expected: q.nrows(), found: q.ncols() });
    }
    leading_eigenpairs_with(q, m, EigenMethod::Auto, LanczosOptions::default())
}

pub fn leading_eigenpairs_with<A: SymOperator>(
    op: &A,
    m: usize,
    method: EigenMethod,
    opts: LanczosOptions,
) -> Result<EigenPairs> {
    let n = op.dim();
    if m == 0 || m > n {
        return Err(invalid(alloc::format!("requested {m} eigenpairs of an order-{n} operator")));
    }
    let ncv = opts.ncv.unwrap_or((2 * m + 1).max(m + 20)).min(n);
    let dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => ncv >= n,
        EigenMethod::Auto => n <= DENSE_LIMIT || ncv >= n,
    };
    let mut pairs = if dense { dense_pairs(op, m) } else { lanczos(op, m, ncv, &opts)? };
    canonical_signs(&mut pairs.vectors);
    Ok(pairs)
}

fn dense_pairs<A: SymOperator>(op: &A, m: usize) -> EigenPairs {
    let n = op.dim();
    let mut a = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        a.set_column(j, &op.apply(&e));
        e[j] = 0.0;
    }
    let (values, vectors) = sym_eigen_desc(&a);
    EigenPairs { values: values[..m].to_vec(), vectors: vectors.columns(0, m).into_owned(), restarts: 0 }
}

/// Deterministic pseudo-random unit-ish vector (splitmix64 stream).
fn start_vector(n: usize, stream: u64) -> DVector<f64> {
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ stream.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    DVector::from_fn(n, |_, _| {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

/// Orthogonalises `w` against the first `k` columns of `v` (two passes).
/// Returns the accumulated projection coefficients.
fn reorthogonalize(v: &DMatrix<f64>, k: usize, w: &mut DVector<f64>) -> DVector<f64> {
    let mut acc = DVector::zeros(k);
    if k == 0 {
        return acc;
    }
    let basis = v.columns(0, k);
    for _ in 0..2 {
        let c = basis.tr_mul(w);
        *w -= &basis * &c;
        acc += c;
    }
    acc
}

/// Fresh unit vector orthogonal to the first `k` columns of `v`, used after
/// an invariant subspace is found.
fn fresh_direction(v: &DMatrix<f64>, k: usize, stream: &mut u64) -> DVector<f64> {
    loop {
        *stream += 1;
        let mut r = start_vector(v.nrows(), *stream);
        reorthogonalize(v, k, &mut r);
        let nrm = r.norm();
        if nrm > 1e-8 {
            return r / nrm;
        }
    }
}

struct Factorization {
    v: DMatrix<f64>,
    alpha: Vec<f64>,
    // beta[j] couples v_j and v_{j+1}
    beta: Vec<f64>,
}

impl Factorization {
    fn extend<A: SymOperator>(&mut self, op: &A, from: usize, to: usize, scale: &mut f64, stream: &mut u64) {
        for j in from..to {
            let vj = self.v.column(j).into_owned();
            let mut w = op.apply(&vj);
            if j > 0 {
                w.axpy(-self.beta[j - 1], &self.v.column(j - 1), 1.0);
            }
            let a = vj.dot(&w);
            w.axpy(-a, &vj, 1.0);
            let corr = reorthogonalize(&self.v, j + 1, &mut w);
            self.alpha[j] = a + corr[j];
            *scale = scale.max(self.alpha[j].abs());
            let b = w.norm();
            if b <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
                self.beta[j] = 0.0;
                let fresh = fresh_direction(&self.v, j + 1, stream);
                self.v.set_column(j + 1, &fresh);
            } else {
                self.beta[j] = b;
                self.v.set_column(j + 1, &(w / b));
            }
            *scale = scale.max(b);
        }
    }

    fn tridiagonal(&self, m: usize) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = self.alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        t
    }
}

fn lanczos<A: SymOperator>(op: &A, nev: usize, ncv: usize, opts: &LanczosOptions) -> Result<EigenPairs> {
    let n = op.dim();
    let mut stream = 0u64;
    let v0 = start_vector(n, stream);
    let mut fac = Factorization {
        v: DMatrix::zeros(n, ncv + 1),
        alpha: vec![0.0; ncv],
        beta: vec![0.0; ncv],
    };
    fac.v.set_column(0, &(&v0 / v0.norm()));
    let mut scale = 0.0f64;
    let mut k = 0usize;
    let mut residuals = Vec::new();

    for restart in 0..=opts.max_restarts {
        fac.extend(op, k, ncv, &mut scale, &mut stream);
        let t = fac.tridiagonal(ncv);
        let (theta, s) = sym_eigen_desc(&t);
        let anorm = theta.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        let tail = fac.beta[ncv - 1];
        residuals = (0..nev).map(|i| (tail * s[(ncv - 1, i)]).abs()).collect();
        if residuals.iter().all(|&r| r <= opts.tol * anorm) {
            let vectors = fac.v.columns(0, ncv) * s.columns(0, nev);
            return Ok(EigenPairs { values: theta[..nev].to_vec(), vectors, restarts: restart });
        }

        // Exact-shift implicit restart: filter out the unwanted Ritz values.
        let mut tm = t;
        let mut qacc = DMatrix::<f64>::identity(ncv, ncv);
        for &mu in &theta[nev..] {
            let mut shifted = tm.clone();
            for i in 0..ncv {
                shifted[(i, i)] -= mu;
            }
            let qr = shifted.qr();
            let (q, r) = (qr.q(), qr.r());
            tm = &r * &q;
            for i in 0..ncv {
                tm[(i, i)] += mu;
            }
            tm = (&tm + tm.transpose()) * 0.5;
            qacc = qacc * q;
        }
        k = nev;
        let f_m = fac.v.column(ncv) * tail;
        let v_old = fac.v.columns(0, ncv).into_owned();
        let v_new = &v_old * qacc.columns(0, k);
        let mut f_k = (&v_old * qacc.column(k)) * tm[(k, k - 1)] + f_m * qacc[(ncv - 1, k - 1)];
        for i in 0..k {
            fac.v.set_column(i, &v_new.column(i));
            fac.alpha[i] = tm[(i, i)];
            if i + 1 < k {
                fac.beta[i] = tm[(i + 1, i)];
            }
        }
        reorthogonalize(&fac.v, k, &mut f_k);
        let b = f_k.norm();
        if b <= 1e-13 * scale {
            fac.beta[k - 1] = 0.0;
            let fresh = fresh_direction(&fac.v, k, &mut stream);
            fac.v.set_column(k, &fresh);
        } else {
            fac.beta[k - 1] = b;
            fac.v.set_column(k, &(f_k / b));
        }
    }
    Err(Error::NoConvergence { restarts: opts.max_restarts, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_leading_values() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let p = leading_eigenpairs(&q, 2).unwrap();
        assert_eq!(p.values, vec![3.0, 2.0]);
    }

    #[test]
    fn identity_gives_unit_values() {
        let q = DMatrix::<f64>::identity(6, 6);
        let p = leading_eigenpairs(&q, 4).unwrap();
        assert!(p.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn invalid_count_errors() {
        let q = DMatrix::<f64>::identity(3, 3);
        assert!(leading_eigenpairs(&q, 0).is_err());
        assert!(leading_eigenpairs(&q, 4).is_err());
    }

    #[test]
    fn lanczos_handles_identity_and_low_rank() {
        // identity: the Krylov space collapses immediately
        let q = DMatrix::<f64>::identity(80, 80);
        let p = leading_eigenpairs_with(&q, 3, EigenMethod::Lanczos, LanczosOptions::default()).unwrap();
        assert!(p.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        // rank-2 matrix
        let a = DVector::from_fn(90, |i, _| (i as f64 * 0.1).sin());
        let b = DVector::from_fn(90, |i, _| (i as f64 * 0.37).cos());
        let q = &a * a.transpose() * 4.0 + &b * b.transpose();
        let dense = leading_eigenpairs_with(&q, 4, EigenMethod::Dense, LanczosOptions::default()).unwrap();
        let lz = leading_eigenpairs_with(&q, 4, EigenMethod::Lanczos, LanczosOptions::default()).unwrap();
        for i in 0..4 {
            assert!((dense.values[i] - lz.values[i]).abs() < 1e-9 * dense.values[0]);
        }
    }

    #[test]
    fn gram_operator_matches_explicit_product() {
        let y = DMatrix::from_fn(30, 70, |i, j| ((i * 7 + j * 3) as f64).sin());
        let q = y.tr_mul(&y);
        let implicit = leading_eigenpairs_with(&GramOperator(&y), 3, EigenMethod::Lanczos, LanczosOptions::default()).unwrap();
        let explicit = leading_eigenpairs_with(&q, 3, EigenMethod::Dense, LanczosOptions::default()).unwrap();
        for i in 0..3 {
            assert!((implicit.values[i] - explicit.values[i]).abs() < 1e-9 * explicit.values[0]);
        }
    }
}
