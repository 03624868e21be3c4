//! Dense linear-algebra helpers over `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::error::{Error, Result};

/// Cholesky factor plus the diagonal jitter that was needed to obtain it.
#[derive(Debug, Clone)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Jitter ladder tried after a plain factorization fails.
pub const JITTERS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky with diagonal jitter retried from 1e-10 up to 1e-6.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Option<Factor> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Some(Factor { chol, jitter: 0.0 });
    }
    for jitter in JITTERS {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            return Some(Factor { chol, jitter });
        }
    }
    None
}

/// Plain Cholesky for matrices that must be SPD as given.
pub fn cholesky_spd(m: &DMatrix<f64>, what: &str) -> Result<Factor> {
    Cholesky::new(m.clone())
        .map(|chol| Factor { chol, jitter: 0.0 })
        .ok_or_else(|| Error::NotPositiveDefinite(alloc::string::String::from(what)))
}

/// Full symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sum of absolute values of all entries.
pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Flips the sign of each column so its largest-magnitude entry is positive.
pub fn canonical_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_psd() {
        let m = DMatrix::from_element(3, 3, 1.0);
        assert!(Cholesky::new(m.clone()).is_none());
        let f = cholesky_jittered(&m).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= 1e-6);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals, alloc::vec![3.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![2.0, 4.0]));
        let f = cholesky_spd(&m, "test").unwrap();
        assert!((f.log_det() - 8.0f64.ln()).abs() < 1e-14);
    }
}
