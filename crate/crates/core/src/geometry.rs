//! Run geometries, grids, the four-region partition, and the piecewise-affine
//! maps that carry a run's domain onto a reference domain.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Geometric design variables of one injector run, in millimetres and degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    /// Injector length `L`.
    pub length: f64,
    /// Nozzle radius `R_n`.
    pub nozzle_radius: f64,
    /// Tangential inlet diameter `delta`.
    pub inlet_diameter: f64,
    /// Injection angle `theta`, degrees.
    pub injection_angle: f64,
    /// Distance from the head end to the inlet, `dL`.
    pub inlet_offset: f64,
}

/// Index of a geometry parameter inside the design vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeomParam {
    Length,
    NozzleRadius,
    InletDiameter,
    InjectionAngle,
    InletOffset,
}

impl GeomParam {
    pub const ALL: [GeomParam; 5] = [
        GeomParam::Length,
        GeomParam::NozzleRadius,
        GeomParam::InletDiameter,
        GeomParam::InjectionAngle,
        GeomParam::InletOffset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeomParam::Length => "L",
            GeomParam::NozzleRadius => "R_n",
            GeomParam::InletDiameter => "delta",
            GeomParam::InjectionAngle => "theta",
            GeomParam::InletOffset => "dL",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// Admissible design range `(lo, hi)`.
    pub fn range(self) -> (f64, f64) {
        match self {
            GeomParam::Length => (20.0, 100.0),
            GeomParam::NozzleRadius => (2.0, 5.0),
            GeomParam::InletDiameter => (0.5, 2.0),
            GeomParam::InjectionAngle => (45.0, 75.0),
            GeomParam::InletOffset => (1.0, 4.0),
        }
    }
}

impl GeometryParams {
    pub fn get(&self, p: GeomParam) -> f64 {
        match p {
            GeomParam::Length => self.length,
            GeomParam::NozzleRadius => self.nozzle_radius,
            GeomParam::InletDiameter => self.inlet_diameter,
            GeomParam::InjectionAngle => self.injection_angle,
            GeomParam::InletOffset => self.inlet_offset,
        }
    }

    pub fn set(&mut self, p: GeomParam, value: f64) {
        match p {
            GeomParam::Length => self.length = value,
            GeomParam::NozzleRadius => self.nozzle_radius = value,
            GeomParam::InletDiameter => self.inlet_diameter = value,
            GeomParam::InjectionAngle => self.injection_angle = value,
            GeomParam::InletOffset => self.inlet_offset = value,
        }
    }

    /// Midpoint of every admissible range.
    pub fn nominal() -> Self {
        let mut g = GeometryParams {
            length: 0.0,
            nozzle_radius: 0.0,
            inlet_diameter: 0.0,
            injection_angle: 0.0,
            inlet_offset: 0.0,
        };
        for p in GeomParam::ALL {
            let (lo, hi) = p.range();
            g.set(p, 0.5 * (lo + hi));
        }
        g
    }

    /// Checks positivity and `dL < L`; with `check_ranges`, also the design ranges.
    pub fn validate(&self, check_ranges: bool) -> Result<()> {
        for p in GeomParam::ALL {
            let v = self.get(p);
            if !v.is_finite() || v <= 0.0 {
                return Err(invalid(format!("geometry parameter {} = {v} must be positive", p.name())));
            }
            if check_ranges {
                let (lo, hi) = p.range();
                if v < lo || v > hi {
                    return Err(invalid(format!(
                        "geometry parameter {} = {v} outside [{lo}, {hi}]",
                        p.name()
                    )));
                }
            }
        }
        if self.inlet_offset >= self.length {
            return Err(invalid(format!(
                "inlet offset dL = {} must be smaller than L = {}",
                self.inlet_offset, self.length
            )));
        }
        Ok(())
    }
}

/// A run geometry together with the extent of its computational domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunGeometry {
    pub params: GeometryParams,
    pub x_max: f64,
    pub y_max: f64,
}

impl RunGeometry {
    pub fn new(params: GeometryParams, x_max: f64, y_max: f64) -> Self {
        RunGeometry { params, x_max, y_max }
    }

    /// Uses the bounding box of `grid` for the downstream extents.
    pub fn from_grid(params: GeometryParams, grid: &Grid) -> Self {
        let (x_max, y_max) = grid.bounding_max();
        RunGeometry { params, x_max, y_max }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate(false)?;
        if !(self.x_max > self.params.length) {
            return Err(Error::DegenerateMap(format!(
                "x_max = {} must exceed L = {}",
                self.x_max, self.params.length
            )));
        }
        if !(self.y_max > self.params.nozzle_radius) {
            return Err(Error::DegenerateMap(format!(
                "y_max = {} must exceed R_n = {}",
                self.y_max, self.params.nozzle_radius
            )));
        }
        Ok(())
    }
}

/// Planar grid of (x, y) points in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<[f64; 2]>,
}

const COINCIDENT_TOL: f64 = 1e-12;

impl Grid {
    /// Validates finiteness and non-emptiness. Duplicate detection is
    /// O(J log J) via a lexicographic sort.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("grid must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(invalid(format!("grid point {i} is not finite")));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a][0]
                .total_cmp(&points[b][0])
                .then(points[a][1].total_cmp(&points[b][1]))
        });
        for w in order.windows(2) {
            let (a, b) = (points[w[0]], points[w[1]]);
            if (a[0] - b[0]).abs() <= COINCIDENT_TOL && (a[1] - b[1]).abs() <= COINCIDENT_TOL {
                return Err(invalid(format!("grid points {} and {} coincide", w[0], w[1])));
            }
        }
        Ok(Grid { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounding_max(&self) -> (f64, f64) {
        self.points.iter().fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(mx, my), p| {
            (mx.max(p[0]), my.max(p[1]))
        })
    }
}

/// The four physics-guided regions of an injector domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    HeadEndToInlet,
    InletToExit,
    DownstreamTop,
    DownstreamBottom,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::HeadEndToInlet,
        Region::InletToExit,
        Region::DownstreamTop,
        Region::DownstreamBottom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::HeadEndToInlet => "head_end_to_inlet",
            Region::InletToExit => "inlet_to_exit",
            Region::DownstreamTop => "downstream_top",
            Region::DownstreamBottom => "downstream_bottom",
        }
    }
}

/// Region of a single point. Points on a boundary belong to the lower-indexed region.
pub fn classify_point(p: [f64; 2], geom: &GeometryParams) -> Option<Region> {
    let [x, y] = p;
    if x < 0.0 || y < 0.0 {
        return None;
    }
    Some(if x <= geom.inlet_offset {
        Region::HeadEndToInlet
    } else if x <= geom.length {
        Region::InletToExit
    } else if y > geom.nozzle_radius {
        Region::DownstreamTop
    } else {
        Region::DownstreamBottom
    })
}

/// Per-point region labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabels(pub Vec<Region>);

impl RegionLabels {
    pub fn mask(&self, region: Region) -> Vec<bool> {
        self.0.iter().map(|&r| r == region).collect()
    }
}

pub fn partition_grid(grid: &Grid, geom: &GeometryParams) -> Result<RegionLabels> {
    grid.points()
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            classify_point(p, geom).ok_or(Error::Domain { index, x: p[0], y: p[1] })
        })
        .collect::<Result<Vec<_>>>()
        .map(RegionLabels)
}

/// One-dimensional affine piece `v -> origin_dst + scale * (v - origin_src)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine1 {
    origin_src: f64,
    origin_dst: f64,
    scale: f64,
}

impl Affine1 {
    fn between(src: (f64, f64), dst: (f64, f64)) -> Result<Self> {
        let (ls, ld) = (src.1 - src.0, dst.1 - dst.0);
        if !(ls > 0.0) || !(ld > 0.0) {
            return Err(Error::DegenerateMap(format!(
                "zero-length segment [{}, {}] -> [{}, {}]",
                src.0, src.1, dst.0, dst.1
            )));
        }
        Ok(Affine1 { origin_src: src.0, origin_dst: dst.0, scale: ld / ls })
    }

    fn apply(&self, v: f64) -> f64 {
        self.origin_dst + self.scale * (v - self.origin_src)
    }
}

/// Piecewise-affine rescaling from a source run geometry onto a target one.
///
/// Each region carries a diagonal affine transform. The x direction is split at
/// `dL` and `L`; the y direction at `R_n` downstream of the nozzle exit. The
/// injection angle and inlet diameter do not enter the map.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineMap {
    src: RunGeometry,
    dst: RunGeometry,
    x_head: Affine1,
    x_injector: Affine1,
    x_downstream: Affine1,
    y_inner: Affine1,
    y_outer: Affine1,
}

pub fn build_rescale_map(src: &RunGeometry, dst: &RunGeometry) -> Result<PiecewiseAffineMap> {
    src.validate()?;
    dst.validate()?;
    let (s, d) = (&src.params, &dst.params);
    Ok(PiecewiseAffineMap {
        src: *src,
        dst: *dst,
        x_head: Affine1::between((0.0, s.inlet_offset), (0.0, d.inlet_offset))?,
        x_injector: Affine1::between((s.inlet_offset, s.length), (d.inlet_offset, d.length))?,
        x_downstream: Affine1::between((s.length, src.x_max), (d.length, dst.x_max))?,
        y_inner: Affine1::between((0.0, s.nozzle_radius), (0.0, d.nozzle_radius))?,
        y_outer: Affine1::between((s.nozzle_radius, src.y_max), (d.nozzle_radius, dst.y_max))?,
    })
}

impl PiecewiseAffineMap {
    pub fn source(&self) -> &RunGeometry {
        &self.src
    }

    pub fn target(&self) -> &RunGeometry {
        &self.dst
    }

    /// Diagonal scale `(sx, sy)` applied inside `region`.
    pub fn scales(&self, region: Region) -> (f64, f64) {
        match region {
            Region::HeadEndToInlet => (self.x_head.scale, self.y_inner.scale),
            Region::InletToExit => (self.x_injector.scale, self.y_inner.scale),
            Region::DownstreamTop => (self.x_downstream.scale, self.y_outer.scale),
            Region::DownstreamBottom => (self.x_downstream.scale, self.y_inner.scale),
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let region = classify_point(p, &self.src.params)
            .ok_or(Error::Domain { index: 0, x: p[0], y: p[1] })?;
        Ok(self.apply_in(region, p))
    }

    fn apply_in(&self, region: Region, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        match region {
            Region::HeadEndToInlet => [self.x_head.apply(x), self.y_inner.apply(y)],
            Region::InletToExit => [self.x_injector.apply(x), self.y_inner.apply(y)],
            Region::DownstreamTop => [self.x_downstream.apply(x), self.y_outer.apply(y)],
            Region::DownstreamBottom => [self.x_downstream.apply(x), self.y_inner.apply(y)],
        }
    }

    /// Maps every grid point. Errors on points outside the physical domain.
    pub fn apply_grid(&self, grid: &Grid) -> Result<Vec<[f64; 2]>> {
        let labels = partition_grid(grid, &self.src.params)?;
        Ok(grid
            .points()
            .iter()
            .zip(&labels.0)
            .map(|(&p, &r)| self.apply_in(r, p))
            .collect())
    }

    pub fn inverse(&self) -> PiecewiseAffineMap {
        // Both geometries were validated on construction.
        build_rescale_map(&self.dst, &self.src).expect("validated geometries")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn geom(l: f64, rn: f64, dl: f64) -> GeometryParams {
        GeometryParams {
            length: l,
            nozzle_radius: rn,
            inlet_diameter: 1.0,
            injection_angle: 60.0,
            inlet_offset: dl,
        }
    }

    #[test]
    fn labels_follow_the_region_rules() {
        let g = geom(22.0, 3.215, 3.417);
        let grid = Grid::new(vec![
            [g.inlet_offset / 2.0, g.nozzle_radius / 2.0],
            [g.length + 1.0, g.nozzle_radius + 1.0],
            [g.inlet_offset, 1.0],
            [g.length, 1.0],
            [g.length + 1.0, g.nozzle_radius],
            [10.0, 1.0],
        ])
        .unwrap();
        let labels = partition_grid(&grid, &g).unwrap();
        assert_eq!(
            labels.0,
            vec![
                Region::HeadEndToInlet,
                Region::DownstreamTop,
                Region::HeadEndToInlet,
                Region::InletToExit,
                Region::DownstreamBottom,
                Region::InletToExit,
            ]
        );
    }

    #[test]
    fn negative_coordinates_are_rejected() {
        let g = geom(22.0, 3.0, 3.0);
        let grid = Grid::new(vec![[1.0, 1.0], [-0.5, 1.0]]).unwrap();
        assert!(matches!(partition_grid(&grid, &g), Err(Error::Domain { index: 1, .. })));
    }

    #[test]
    fn duplicate_points_are_rejected() {
        assert!(Grid::new(vec![[1.0, 2.0], [3.0, 4.0], [1.0, 2.0]]).is_err());
        assert!(Grid::new(Vec::new()).is_err());
    }

    #[test]
    fn identity_map_when_geometries_match() {
        let rg = RunGeometry::new(geom(30.0, 3.0, 2.0), 60.0, 15.0);
        let m = build_rescale_map(&rg, &rg).unwrap();
        for p in [[0.5, 0.2], [2.0, 2.9], [29.0, 1.0], [45.0, 12.0], [45.0, 2.0]] {
            assert_eq!(m.apply(p).unwrap(), p);
        }
    }

    #[test]
    fn injector_scale_matches_hand_formula() {
        let dl = 2.5;
        let src = RunGeometry::new(geom(40.0, 3.0, dl), 80.0, 12.0);
        let dst = RunGeometry::new(geom(20.0, 3.0, dl), 60.0, 12.0);
        let m = build_rescale_map(&src, &dst).unwrap();
        let (sx, sy) = m.scales(Region::InletToExit);
        assert!((sx - (20.0 - dl) / (40.0 - dl)).abs() < 1e-15);
        assert_eq!(sy, 1.0);
        // boundary points land on the matching boundaries
        assert!((m.apply([dl, 1.0]).unwrap()[0] - dl).abs() < 1e-12);
        assert!((m.apply([40.0, 1.0]).unwrap()[0] - 20.0).abs() < 1e-12);
        assert!((m.apply([80.0, 1.0]).unwrap()[0] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn zero_length_region_is_degenerate() {
        let mut g = geom(30.0, 3.0, 2.0);
        let ok = RunGeometry::new(g, 60.0, 12.0);
        g.inlet_offset = 0.0;
        let bad = RunGeometry::new(g, 60.0, 12.0);
        assert!(build_rescale_map(&bad, &ok).is_err());
        let flat = RunGeometry::new(geom(30.0, 3.0, 2.0), 30.0, 12.0);
        assert!(matches!(build_rescale_map(&flat, &ok), Err(Error::DegenerateMap(_))));
    }

    #[test]
    fn map_is_continuous_across_region_boundaries() {
        let src = RunGeometry::new(geom(35.0, 4.0, 3.0), 70.0, 14.0);
        let dst = RunGeometry::new(geom(22.0, 3.215, 3.417), 50.0, 11.0);
        let m = build_rescale_map(&src, &dst).unwrap();
        let eps = 1e-13;
        for p in [[3.0, 1.0], [35.0, 2.0], [50.0, 4.0]] {
            let a = m.apply(p).unwrap();
            let b = m.apply([p[0] + eps, p[1] + eps]).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-11 && (a[1] - b[1]).abs() < 1e-11);
        }
    }
}
