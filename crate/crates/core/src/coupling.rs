//! Coupling graphs read off the sparse precision matrices of fitted slices.

use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;

use crate::cokrige::GpModelSlice;
use crate::cpod::CouplingMask;
use crate::error::{Error, Result};

/// `-P_ij / sqrt(P_ii P_jj)`.
pub fn partial_correlation(precision: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    -precision[(i, j)] / (precision[(i, i)] * precision[(j, j)]).sqrt()
}

/// Allowed nonzero off-diagonal pairs `(i, j, |partial correlation|)`, `i < j`,
/// strongest first (ties by index).
pub fn slice_edges(precision: &DMatrix<f64>, mask: &CouplingMask) -> Vec<(usize, usize, f64)> {
    let k = precision.nrows();
    let mut edges: Vec<(usize, usize, f64)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .filter(|&(i, j)| mask.allowed(i, j) && precision[(i, j)] != 0.0)
        .map(|(i, j)| (i, j, partial_correlation(precision, i, j).abs()))
        .collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    edges
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingEdge {
    pub i: usize,
    pub j: usize,
    /// Share of slices in which the edge was selected.
    pub frequency: f64,
    /// Mean |partial correlation| over the slices that selected it.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGraph {
    /// `(variable index, mode index within the variable)` per stacked mode.
    pub nodes: Vec<(usize, usize)>,
    /// Ranked by frequency, then score.
    pub edges: Vec<CouplingEdge>,
    /// Edges selected in each slice.
    pub per_slice: Vec<usize>,
}

/// Aggregates the top `k` edges of every slice into one ranked graph.
pub fn extract_couplings(models: &[GpModelSlice], mask: &CouplingMask, k: usize) -> Result<CouplingGraph> {
    let precisions = models.iter().map(|m| m.precision.clone().ok_or(Error::Unfitted)).collect::<Result<Vec<_>>>()?;
    couplings_from_precisions(&precisions, mask, k)
}

/// [`extract_couplings`] on bare precision matrices, one per slice.
pub fn couplings_from_precisions(precisions: &[DMatrix<f64>], mask: &CouplingMask, k: usize) -> Result<CouplingGraph> {
    if precisions.is_empty() {
        return Err(Error::Unfitted);
    }
    let dim = mask.dim();
    let mut counts = DMatrix::<f64>::zeros(dim, dim);
    let mut scores = DMatrix::<f64>::zeros(dim, dim);
    let mut per_slice = Vec::with_capacity(precisions.len());
    for p in precisions {
        if p.nrows() != dim {
            return Err(Error::Dimension { expected: dim, found: p.nrows() });
        }
        let edges = slice_edges(p, mask);
        let chosen = &edges[..k.min(edges.len())];
        per_slice.push(chosen.len());
        for &(i, j, s) in chosen {
            counts[(i, j)] += 1.0;
            scores[(i, j)] += s;
        }
    }
    let n = precisions.len() as f64;
    let mut edges = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            if counts[(i, j)] > 0.0 {
                edges.push(CouplingEdge { i, j, frequency: counts[(i, j)] / n, score: scores[(i, j)] / counts[(i, j)] });
            }
        }
    }
    edges.sort_by(|a, b| {
        b.frequency.total_cmp(&a.frequency).then(b.score.total_cmp(&a.score)).then((a.i, a.j).cmp(&(b.i, b.j)))
    });
    let owners = mask.owners();
    let nodes = (0..dim)
        .map(|m| {
            let first = owners.iter().position(|&o| o == owners[m]).unwrap_or(m);
            (owners[m], m - first)
        })
        .collect();
    Ok(CouplingGraph { nodes, edges, per_slice })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::DVector;

    fn slice(precision: DMatrix<f64>) -> GpModelSlice {
        let t = precision.clone().try_inverse().unwrap();
        let k = t.nrows();
        GpModelSlice::new(DVector::zeros(k), t, Some(precision), vec![0.5], vec![vec![0.0], vec![1.0]], DMatrix::zeros(2, k)).unwrap()
    }

    #[test]
    fn diagonal_precision_has_no_edges() {
        let g = extract_couplings(&[slice(DMatrix::identity(3, 3))], &CouplingMask::unrestricted(3), 2).unwrap();
        assert!(g.edges.is_empty());
        assert_eq!(g.per_slice, vec![0]);
    }

    #[test]
    fn strongest_edge_ranks_first() {
        let p = DMatrix::from_row_slice(3, 3, &[1.0, -0.6, 0.0, -0.6, 1.0, 0.1, 0.0, 0.1, 1.0]);
        let mask = CouplingMask::from_owners(vec![0, 1, 2]);
        let g = extract_couplings(&[slice(p.clone()), slice(p)], &mask, 1).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!((g.edges[0].i, g.edges[0].j), (0, 1));
        assert!((g.edges[0].score - 0.6).abs() < 1e-12);
        assert_eq!(g.edges[0].frequency, 1.0);
    }

    #[test]
    fn nodes_index_modes_within_variables() {
        let mask = CouplingMask::from_owners(vec![0, 0, 1, 1, 1]);
        let g = extract_couplings(&[slice(DMatrix::identity(5, 5))], &mask, 1).unwrap();
        assert_eq!(g.nodes, vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2)]);
    }
}
