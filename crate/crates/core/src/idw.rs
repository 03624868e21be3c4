//! Shepard inverse-distance-weighting interpolation over the k nearest
//! neighbours, backed by a 2-d tree.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // needed when std is absent from the build graph
use num_traits::Float;


use crate::error::{invalid, Error, Result};

/// Neighbour count used when interpolating snapshots onto the common grid.
pub const DEFAULT_NEIGHBOURS: usize = 10;

/// Distances below this (mm) count as an exact hit.
pub const EXACT_HIT: f64 = 1e-12;

/// Static 2-d tree over a point set. Nodes are stored implicitly: the median of
/// each slice is the node, left/right halves are its children.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    // permutation of point indices in tree order
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: &[[f64; 2]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        KdTree { points: points.to_vec(), order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `q` as `(squared distance, index)`, nearest
    /// first. Ties are broken by index so results are deterministic.
    pub fn nearest(&self, q: [f64; 2], k: usize) -> Vec<(f64, usize)> {
        let k = k.min(self.points.len());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(q, k, 0, self.order.len(), 0, &mut best);
        }
        best
    }

    fn search(
        &self,
        q: [f64; 2],
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        best: &mut Vec<(f64, usize)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = sq(p[0] - q[0]) + sq(p[1] - q[1]);
        insert_candidate(best, k, (d2, idx));

        let axis = depth % 2;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, k, near.0, near.1, depth + 1, best);
        if best.len() < k || sq(diff) <= best[best.len() - 1].0 {
            self.search(q, k, far.0, far.1, depth + 1, best);
        }
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

fn insert_candidate(best: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
    let key = |c: &(f64, usize)| (c.0, c.1);
    if best.len() == k {
        let worst = best[k - 1];
        if key(&cand).partial_cmp(&key(&worst)) != Some(core::cmp::Ordering::Less) {
            return;
        }
        best.pop();
    }
    let pos = best
        .iter()
        .position(|c| key(&cand).partial_cmp(&key(c)) == Some(core::cmp::Ordering::Less))
        .unwrap_or(best.len());
    best.insert(pos, cand);
}

fn build(points: &[[f64; 2]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

/// Precomputed neighbour weights from a source point set onto query points.
/// Reusable across every field sampled on the same source points.
#[derive(Debug, Clone)]
pub struct IdwWeights {
    // per query: (source index, normalised weight)
    stencils: Vec<Vec<(usize, f64)>>,
    n_src: usize,
}

impl IdwWeights {
    pub fn new(src: &[[f64; 2]], queries: &[[f64; 2]], k: usize) -> Result<Self> {
        if src.is_empty() {
            return Err(invalid("IDW source grid is empty"));
        }
        if k == 0 {
            return Err(invalid("IDW neighbour count must be positive"));
        }
        if src.len() < k {
            return Err(invalid(alloc::format!(
                "IDW needs at least {k} source points, got {}",
                src.len()
            )));
        }
        let tree = KdTree::new(src);
        let stencils = queries
            .iter()
            .map(|&q| {
                let nn = tree.nearest(q, k);
                if let Some(&(_, hit)) = nn.iter().find(|(d2, _)| d2.sqrt() < EXACT_HIT) {
                    return vec![(hit, 1.0)];
                }
                let raw: Vec<(usize, f64)> = nn.iter().map(|&(d2, i)| (i, 1.0 / d2)).collect();
                let total: f64 = raw.iter().map(|&(_, w)| w).sum();
                raw.into_iter().map(|(i, w)| (i, w / total)).collect()
            })
            .collect();
        Ok(IdwWeights { stencils, n_src: src.len() })
    }

    pub fn n_queries(&self) -> usize {
        self.stencils.len()
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.n_src {
            return Err(Error::Dimension { expected: self.n_src, found: values.len() });
        }
        Ok(self
            .stencils
            .iter()
            .map(|s| s.iter().map(|&(i, w)| w * values[i]).sum())
            .collect())
    }
}

/// Interpolates `src_values` (sampled at `src_points`) onto `query_points`.
pub fn idw_interpolate(
    src_points: &[[f64; 2]],
    src_values: &[f64],
    query_points: &[[f64; 2]],
    k: usize,
) -> Result<Vec<f64>> {
    if src_values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("IDW source values must be finite"));
    }
    IdwWeights::new(src_points, query_points, k)?.apply(src_values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_hit_returns_source_value() {
        let src = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let out = idw_interpolate(&src, &[5.0, 7.0, 9.0], &[[1.0, 0.0]], 3).unwrap();
        assert_eq!(out, vec![7.0]);
    }

    #[test]
    fn equidistant_pair_averages() {
        let src = [[0.0, 0.0], [2.0, 0.0], [10.0, 10.0]];
        let out = idw_interpolate(&src, &[0.0, 2.0, 100.0], &[[1.0, 0.0]], 2).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_sources_or_empty_grid_errors() {
        assert!(idw_interpolate(&[], &[], &[[0.0, 0.0]], 1).is_err());
        assert!(idw_interpolate(&[[0.0, 0.0]], &[1.0], &[[0.0, 0.0]], 2).is_err());
    }

    #[test]
    fn kdtree_matches_linear_scan() {
        let mut pts = Vec::new();
        let mut s = 12345u64;
        for _ in 0..200 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = (s >> 11) as f64 / (1u64 << 53) as f64;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let y = (s >> 11) as f64 / (1u64 << 53) as f64;
            pts.push([x, y]);
        }
        let tree = KdTree::new(&pts);
        for q in [[0.5, 0.5], [0.0, 0.0], [0.9, 0.1], [1.5, -0.2]] {
            let got = tree.nearest(q, 7);
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, all[..7].to_vec());
        }
    }
}
