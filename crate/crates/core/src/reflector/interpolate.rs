use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::energy::{Bin, EnergyTally};
use super::{Blocker, GeneralizedReflector, MapOutcome, CHORD_EPS};
use crate::error::{Error, Result};
use crate::sphere::{Direction, Radiance, SphericalSampler};

/// Grid rows in the polar parameter used to trace patch boundaries; the
/// azimuthal grid is twice as fine.
pub const DEFAULT_WALL_RESOLUTION: usize = 128;

const BISECTION_STEPS: usize = 40;
const INDEX_CELLS: usize = 64;

/// Radial segment of a wall: the points `direction * r` for
/// `inner <= r <= outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallGenerator {
    pub direction: Direction,
    pub inner: f64,
    pub outer: f64,
}

impl WallGenerator {
    pub fn inner_point(&self) -> Vector3<f64> {
        self.direction.as_vec() * self.inner
    }

    pub fn outer_point(&self) -> Vector3<f64> {
        self.direction.as_vec() * self.outer
    }
}

/// Quadrilateral piece of wall between two generators on the boundary
/// between two patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallPanel {
    pub patches: (usize, usize),
    pub generators: [WallGenerator; 2],
}

impl WallPanel {
    /// Two triangles covering the panel.
    pub fn triangles(&self) -> [[Vector3<f64>; 3]; 2] {
        let [g0, g1] = &self.generators;
        let (a, b, c, d) = (g0.inner_point(), g0.outer_point(), g1.outer_point(), g1.inner_point());
        [[a, b, c], [a, c, d]]
    }

    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for g in &self.generators {
            for p in [g.inner_point(), g.outer_point()] {
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
        (lo, hi)
    }
}

/// Segment parameter in `[0, 1]` where `p + s (q - p)` crosses the triangle.
fn segment_triangle(p: &Vector3<f64>, q: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let dir = q - p;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = p - tri[0];
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = s.cross(&e1);
    let v = inv * dir.dot(&qv);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = inv * e2.dot(&qv);
    (0.0..=1.0).contains(&t).then_some(t)
}

/// Bucket grid over the xy extent of the walls.
#[derive(Debug, Clone, Default)]
struct WallIndex {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    cell: (f64, f64),
    buckets: Vec<Vec<usize>>,
}

impl WallIndex {
    fn build(walls: &[WallPanel]) -> Self {
        if walls.is_empty() {
            return WallIndex::default();
        }
        let bounds: Vec<_> = walls.iter().map(|w| w.bounds()).collect();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (a, b) in &bounds {
            lo = lo.inf(a);
            hi = hi.sup(b);
        }
        let pad = 1e-9 * (hi - lo).norm().max(1.0);
        lo -= Vector3::repeat(pad);
        hi += Vector3::repeat(pad);
        let cell = ((hi.x - lo.x) / INDEX_CELLS as f64, (hi.y - lo.y) / INDEX_CELLS as f64);
        let mut idx = WallIndex {
            lo,
            hi,
            cell,
            buckets: vec![Vec::new(); INDEX_CELLS * INDEX_CELLS],
        };
        for (w, (a, b)) in bounds.iter().enumerate() {
            let (i0, j0) = idx.cell_of(a.x, a.y);
            let (i1, j1) = idx.cell_of(b.x, b.y);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    idx.buckets[i * INDEX_CELLS + j].push(w);
                }
            }
        }
        idx
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let f = |v: f64, lo: f64, c: f64| (((v - lo) / c).floor().max(0.0) as usize).min(INDEX_CELLS - 1);
        (f(x, self.lo.x, self.cell.0), f(y, self.lo.y, self.cell.1))
    }

    /// Candidate walls for the segment `p -> q`.
    fn candidates(&self, p: &Vector3<f64>, q: &Vector3<f64>) -> Vec<usize> {
        if self.buckets.is_empty() {
            return Vec::new();
        }
        // clip to the z extent of the walls
        let (mut s0, mut s1) = (0.0f64, 1.0f64);
        let dz = q.z - p.z;
        if dz.abs() > 0.0 {
            let a = (self.lo.z - p.z) / dz;
            let b = (self.hi.z - p.z) / dz;
            s0 = s0.max(a.min(b));
            s1 = s1.min(a.max(b));
        } else if p.z < self.lo.z || p.z > self.hi.z {
            return Vec::new();
        }
        if s0 > s1 {
            return Vec::new();
        }
        let a = p + (q - p) * s0;
        let b = p + (q - p) * s1;
        let (xl, xh) = (a.x.min(b.x), a.x.max(b.x));
        let (yl, yh) = (a.y.min(b.y), a.y.max(b.y));
        if xh < self.lo.x || xl > self.hi.x || yh < self.lo.y || yl > self.hi.y {
            return Vec::new();
        }
        let (i0, j0) = self.cell_of(xl, yl);
        let (i1, j1) = self.cell_of(xh, yh);
        let mut out = Vec::new();
        for i in i0..=i1 {
            for j in j0..=j1 {
                out.extend_from_slice(&self.buckets[i * INDEX_CELLS + j]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Serialize, Deserialize)]
struct InterpolatedRepr {
    base: GeneralizedReflector,
    walls: Vec<WallPanel>,
}

/// Generalized reflector closed up by radial walls along the boundaries
/// between adjacent patches.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "InterpolatedRepr", into = "InterpolatedRepr")]
pub struct InterpolatedReflector {
    pub base: GeneralizedReflector,
    pub walls: Vec<WallPanel>,
    index: WallIndex,
}

impl From<InterpolatedRepr> for InterpolatedReflector {
    fn from(r: InterpolatedRepr) -> Self {
        InterpolatedReflector::new(r.base, r.walls)
    }
}

impl From<InterpolatedReflector> for InterpolatedRepr {
    fn from(r: InterpolatedReflector) -> Self {
        InterpolatedRepr {
            base: r.base,
            walls: r.walls,
        }
    }
}

impl PartialEq for InterpolatedReflector {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.walls == other.walls
    }
}

/// Parametric grid of directions about the aperture's bounding cap.
pub(crate) struct DirectionGrid {
    pub axis: Direction,
    pub level: f64,
    pub rows: usize,
    pub cols: usize,
}

impl DirectionGrid {
    pub fn about(r: &GeneralizedReflector, rows: usize) -> Self {
        let (axis, level) = r.aperture().bounding_cap().unwrap_or((Direction::Z, -1.0));
        DirectionGrid {
            axis,
            level,
            rows,
            cols: 2 * rows,
        }
    }

    /// Direction at fractional grid coordinates `(row, col)`.
    pub fn at(&self, row: f64, col: f64) -> Direction {
        let u = self.level + (1.0 - self.level) * (row + 0.5) / self.rows as f64;
        Direction::from_axis_coords(&self.axis, u.min(1.0), TAU * col / self.cols as f64)
    }

    pub fn neighbors(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let up = (i + 1 < self.rows).then(|| (i + 1, j));
        let down = (i > 0).then(|| (i - 1, j));
        let left = Some((i, (j + self.cols - 1) % self.cols));
        let right = Some((i, (j + 1) % self.cols));
        [up, down, left, right].into_iter().flatten()
    }

    /// Connected components of the marked nodes. Nodes of the last row are
    /// joined through the pole when `pole` is set.
    pub fn components(&self, marked: &[bool], pole: bool) -> Vec<usize> {
        let n = self.rows * self.cols;
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if !marked[start] || comp[start] != usize::MAX {
                continue;
            }
            let mut queue = VecDeque::from([start]);
            comp[start] = count;
            while let Some(k) = queue.pop_front() {
                let (i, j) = (k / self.cols, k % self.cols);
                let mut next: Vec<(usize, usize)> = self.neighbors(i, j).collect();
                if pole && i + 1 == self.rows {
                    next.extend((0..self.cols).map(|c| (i, c)));
                }
                for (a, b) in next {
                    let q = a * self.cols + b;
                    if marked[q] && comp[q] == usize::MAX {
                        comp[q] = count;
                        queue.push_back(q);
                    }
                }
            }
            count += 1;
        }
        comp
    }
}

pub(crate) fn component_count(comp: &[usize]) -> usize {
    comp.iter().filter(|c| **c != usize::MAX).max().map_or(0, |m| m + 1)
}

impl InterpolatedReflector {
    pub fn new(base: GeneralizedReflector, walls: Vec<WallPanel>) -> Self {
        let index = WallIndex::build(&walls);
        InterpolatedReflector { base, walls, index }
    }

    /// First wall met by the open segment `p -> q`, as a fraction of the
    /// segment.
    pub fn first_wall_hit(&self, p: &Vector3<f64>, q: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for w in self.index.candidates(p, q) {
            for tri in self.walls[w].triangles() {
                if let Some(s) = segment_triangle(p, q, &tri) {
                    if s > CHORD_EPS && s < 1.0 - CHORD_EPS && best.is_none_or(|(b, _)| s < b) {
                        best = Some((s, w));
                    }
                }
            }
        }
        best
    }

    /// The interpolated reflector map: as the generalized map, with walls
    /// as additional opaque obstacles.
    pub fn alpha2(&self, m: &Direction) -> MapOutcome {
        let Some(sel) = self.base.rho(m) else {
            return MapOutcome::Undefined;
        };
        let patch = &self.base.patches()[sel.patch];
        let p = m.as_vec() * sel.radius;
        let x = patch.target();
        let len = (x - p).norm();
        let on_patch = self
            .base
            .first_patch_hit(&p, x, patch.ellipsoid())
            .map(|(t, q)| (t / len, Blocker::Patch { index: q }));
        let on_wall = self.first_wall_hit(&p, x).map(|(s, w)| (s, Blocker::Wall { index: w }));
        let first = match (on_patch, on_wall) {
            (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
            (a, b) => a.or(b),
        };
        match first {
            None => MapOutcome::Target { patch: sel.patch },
            Some((s, blocker)) => MapOutcome::Blocked {
                patch: sel.patch,
                point: p + (x - p) * s,
                blocker,
            },
        }
    }
}

fn crossing(
    r: &GeneralizedReflector,
    grid: &DirectionGrid,
    a: (f64, f64, usize),
    b: (f64, f64, usize),
) -> WallGenerator {
    let (mut lo, mut hi) = ((a.0, a.1), (b.0, b.1));
    for _ in 0..BISECTION_STEPS {
        let mid = (0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1));
        let label = r.rho(&grid.at(mid.0, mid.1)).map(|s| s.patch);
        if label == Some(a.2) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = grid.at(0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1));
    let ra = r.patches()[a.2].ellipsoid().polar_radius(&m);
    let rb = r.patches()[b.2].ellipsoid().polar_radius(&m);
    WallGenerator {
        direction: m,
        inner: ra.min(rb),
        outer: ra.max(rb),
    }
}

/// Closes the reflector with radial walls traced on a `resolution` by
/// `2 resolution` direction grid about the aperture's bounding cap.
pub fn interpolate(r: &GeneralizedReflector, resolution: usize) -> Result<InterpolatedReflector> {
    let grid = DirectionGrid::about(r, resolution.max(8));
    let (rows, cols) = (grid.rows, grid.cols);
    let nodes: Vec<Direction> = (0..rows * cols)
        .map(|k| grid.at((k / cols) as f64, (k % cols) as f64))
        .collect();
    let in_aperture: Vec<bool> = nodes.iter().map(|m| r.aperture().contains(m)).collect();
    let pole = r.aperture().contains(&grid.axis);
    let comps = component_count(&grid.components(&in_aperture, pole));
    if comps > 1 {
        return Err(Error::DisconnectedAperture { components: comps });
    }
    let labels: Vec<Option<usize>> = {
        use rayon::prelude::*;
        nodes.par_iter().map(|m| r.rho(m).map(|s| s.patch)).collect()
    };
    let label = |i: usize, j: usize| labels[i * cols + (j % cols)];
    let edge = |a: (usize, usize), b: (usize, usize)| -> Option<((usize, usize), WallGenerator)> {
        let (la, lb) = (label(a.0, a.1)?, label(b.0, b.1)?);
        if la == lb {
            return None;
        }
        // unwrap the azimuth so the bisection runs along the short edge
        let bj = if b.1 == 0 && a.1 == cols - 1 { cols } else { b.1 };
        let g = crossing(r, &grid, (a.0 as f64, a.1 as f64, la), (b.0 as f64, bj as f64, lb));
        Some(((la.min(lb), la.max(lb)), g))
    };
    let mut walls = Vec::new();
    for i in 0..rows.saturating_sub(1) {
        for j in 0..cols {
            let j1 = (j + 1) % cols;
            let found: Vec<((usize, usize), WallGenerator)> = [
                edge((i, j), (i, j1)),
                edge((i, j1), (i + 1, j1)),
                edge((i + 1, j), (i + 1, j1)),
                edge((i, j), (i + 1, j)),
            ]
            .into_iter()
            .flatten()
            .collect();
            let mut used = vec![false; found.len()];
            for a in 0..found.len() {
                if used[a] {
                    continue;
                }
                let same: Vec<usize> = (a..found.len()).filter(|&b| found[b].0 == found[a].0).collect();
                if same.len() == 2 {
                    used[same[0]] = true;
                    used[same[1]] = true;
                    walls.push(WallPanel {
                        patches: found[a].0,
                        generators: [found[same[0]].1, found[same[1]].1],
                    });
                }
            }
        }
    }
    Ok(InterpolatedReflector::new(r.clone(), walls))
}

/// Tally of the interpolated reflector map over `sampler`.
pub fn energy_g2(ir: &InterpolatedReflector, g: &Radiance, sampler: &SphericalSampler) -> EnergyTally {
    let r = &ir.base;
    EnergyTally::collect(r.targets(), g, sampler, |m| match ir.alpha2(m) {
        MapOutcome::Target { patch } => Bin::Target(r.target_index_of_patch(patch)),
        MapOutcome::Blocked { .. } => Bin::Blocked,
        MapOutcome::Undefined => Bin::Lost,
    })
}
