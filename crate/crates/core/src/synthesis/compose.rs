use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::carve::{carve_with_stream, carving_patches, CarveParams, TraceRecord};
use super::carving::Carving;
use crate::error::{Error, Result};
use crate::reflector::{GeneralizedReflector, SpatialRestriction, TargetPrescription};
use crate::sphere::{
    cap_level_for_mass, radiance_integral, ConicalCylinder, Direction, Estimate, Radiance, Region, SphericalSampler,
};

/// Points sampled along each reflected chord in the disjointness check.
const CHORD_POINTS: usize = 32;
/// Cell points per cell in the disjointness check.
const HYPOTHESIS_SAMPLES: usize = 4096;
/// Draws used for overlap and Monte Carlo energy checks.
const CHECK_SAMPLES: usize = 1 << 16;

/// One sub-cylinder of a multi-target design: base directions, slab
/// `a < z < a + b`, target and the energy it must deliver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub base: Region,
    pub a: f64,
    pub b: f64,
    pub target: Vector3<f64>,
    pub energy: f64,
}

impl Cell {
    pub fn cylinder(&self) -> ConicalCylinder {
        ConicalCylinder::new(self.base.clone(), self.a, self.b)
    }
}

/// Multi-target design: the assembled reflector and per-cell diagnostics.
#[derive(Debug, Clone)]
pub struct Composition {
    pub reflector: GeneralizedReflector,
    pub carvings: Vec<Arc<Carving>>,
    pub traces: Vec<Vec<TraceRecord>>,
    /// Uncovered measure per cell.
    pub residuals: Vec<Estimate>,
    pub aperture_measures: Vec<Estimate>,
    pub converged: bool,
}

impl Composition {
    /// Total uncovered measure over the total cell measure.
    pub fn residual_fraction(&self) -> f64 {
        let r: f64 = self.residuals.iter().map(|e| e.mean).sum();
        let a: f64 = self.aperture_measures.iter().map(|e| e.mean).sum();
        if a > 0.0 {
            r / a
        } else {
            0.0
        }
    }
}

fn bounding_sampler(region: &Region, count: usize, seed: u64) -> SphericalSampler {
    match region.bounding_cap() {
        Some((axis, level)) => SphericalSampler::cap(seed, count, axis, level),
        None => SphericalSampler::uniform(seed, count),
    }
}

/// Random points of the open sub-cylinder of a cell.
fn cell_points(cell: &Cell, count: usize, seed: u64, stream: u64) -> Vec<Vector3<f64>> {
    let sampler = bounding_sampler(&cell.base, count, seed).with_stream(stream);
    let mut out = Vec::new();
    for (i, m) in sampler.directions().into_iter().enumerate() {
        if !cell.base.contains(&m) || m.z() <= 0.0 {
            continue;
        }
        // height from a deterministic low-discrepancy sequence
        let frac = ((i as f64 + 0.5) * 0.618_033_988_749_895).fract();
        let z = cell.a + cell.b * frac;
        out.push(m.as_vec() * (z / m.z()));
    }
    out
}

/// Point on the segment `p -> x` inside cylinder `c`, if any of the sampled
/// chord points is.
fn chord_meets(p: &Vector3<f64>, x: &Vector3<f64>, c: &ConicalCylinder) -> Option<Vector3<f64>> {
    let dz = x.z - p.z;
    if dz == 0.0 {
        return None;
    }
    let s_lo = (c.z_prime - p.z) / dz;
    let s_hi = (c.z_top() - p.z) / dz;
    let (a, b) = (s_lo.min(s_hi).max(0.0), s_lo.max(s_hi).min(1.0));
    if a >= b {
        return None;
    }
    (0..CHORD_POINTS)
        .map(|i| {
            let s = a + (b - a) * (i as f64 + 0.5) / CHORD_POINTS as f64;
            p + (x - p) * s
        })
        .find(|q| c.contains(q))
}

/// Checks that no cell meets the cone from another cell's target over that
/// other cell.
pub fn check_cone_disjointness(cells: &[Cell], seed: u64) -> Result<()> {
    let points: Vec<Vec<Vector3<f64>>> = cells
        .iter()
        .enumerate()
        .map(|(j, c)| cell_points(c, HYPOTHESIS_SAMPLES, seed, j as u64))
        .collect();
    let n = cells.len();
    let found = (0..n * n).into_par_iter().find_map_first(|idx| {
        let (i, j) = (idx / n, idx % n);
        if i == j {
            return None;
        }
        let ci = cells[i].cylinder();
        points[j]
            .iter()
            .find_map(|p| chord_meets(p, &cells[j].target, &ci))
            .map(|w| (i, j, w))
    });
    match found {
        Some((i, j, witness)) => Err(Error::HypothesisViolated { i, j, witness }),
        None => Ok(()),
    }
}

fn check_bases_disjoint(cells: &[Cell], seed: u64) -> Result<()> {
    let all = Region::Union {
        parts: cells.iter().map(|c| c.base.clone()).collect(),
    };
    let sampler = bounding_sampler(&all, CHECK_SAMPLES, seed).with_stream(u64::MAX);
    let clash = sampler.directions().into_par_iter().find_map_first(|m| {
        let inside: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].base.contains(&m)).collect();
        (inside.len() > 1).then(|| (inside[0], inside[1]))
    });
    match clash {
        Some((i, j)) => Err(Error::OverlappingCells { i, j }),
        None => Ok(()),
    }
}

/// `mu_g` of a cell base: quadrature when the radiance and region are
/// axially symmetric, Monte Carlo otherwise.
fn cell_mass(g: &Radiance, base: &Region, seed: u64, stream: u64) -> Estimate {
    match g.symmetric_mass(base) {
        Some(m) => Estimate {
            mean: m,
            std_error: 0.0,
        },
        None => radiance_integral(
            g,
            base,
            &bounding_sampler(base, CHECK_SAMPLES, seed).with_stream(stream),
        ),
    }
}

/// Carves every cell towards its own target and assembles the patches with
/// globally unique priorities, after checking the cells are disjoint,
/// carry the right energies and do not shadow each other's chords.
pub fn compose_multi_target(
    cells: &[Cell],
    restriction: &ConicalCylinder,
    g: &Radiance,
    params: &CarveParams,
) -> Result<Composition> {
    let top = restriction.z_top();
    for (i, c) in cells.iter().enumerate() {
        let tol = 1e-12 * top;
        if !(c.b > 0.0) || c.a < restriction.z_prime - tol || c.a + c.b > top + tol {
            return Err(Error::InvalidParameter(format!(
                "cell {i} slab ({}, {}) leaves the restriction",
                c.a,
                c.a + c.b
            )));
        }
    }
    check_bases_disjoint(cells, params.seed)?;
    for (i, c) in cells.iter().enumerate() {
        let m = cell_mass(g, &c.base, params.seed, i as u64);
        let tol = 1e-6 * c.energy.abs().max(m.mean.abs()) + 3.0 * m.std_error;
        if (m.mean - c.energy).abs() > tol {
            return Err(Error::EnergyMismatch {
                index: i,
                expected: c.energy,
                actual: m.mean,
            });
        }
    }
    check_cone_disjointness(cells, params.seed)?;

    let mut patches = Vec::new();
    let mut out = Composition {
        reflector: GeneralizedReflector::empty(
            restriction.base.clone(),
            SpatialRestriction::ConicalCylinder(restriction.clone()),
        ),
        carvings: Vec::new(),
        traces: Vec::new(),
        residuals: Vec::new(),
        aperture_measures: Vec::new(),
        converged: true,
    };
    for (i, c) in cells.iter().enumerate() {
        let (carving, state, converged) = carve_with_stream(&c.cylinder(), &c.target, g, params, i as u64)?;
        patches.extend(carving_patches(&carving, patches.len() as u32));
        out.residuals.push(state.residual());
        out.aperture_measures.push(state.aperture_measure());
        out.traces.push(state.trace);
        out.carvings.push(carving);
        out.converged &= converged;
    }
    out.reflector = GeneralizedReflector::new(
        patches,
        restriction.base.clone(),
        SpatialRestriction::ConicalCylinder(restriction.clone()),
    )?;
    Ok(out)
}

/// Vertices of a regular `k`-gon on the sphere of radius `d` at height
/// `d xi`, starting at azimuth `t`; `k = 1` gives the point below the source.
pub fn target_polygon(k: u32, d: f64, xi: f64, t: f64) -> Vec<Vector3<f64>> {
    if k <= 1 {
        return vec![Vector3::new(0.0, 0.0, -d)];
    }
    let s = xi.acos().sin();
    (0..k)
        .map(|j| {
            let th = TAU * j as f64 / k as f64 + t;
            Vector3::new(d * th.cos() * s, d * th.sin() * s, d * xi)
        })
        .collect()
}

/// One ring of a rotationally symmetric design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub k: u32,
    pub d: f64,
    pub xi: f64,
    #[serde(default)]
    pub t: f64,
    /// Energy delivered by the whole ring.
    pub f: f64,
}

#[derive(Debug, Clone)]
pub struct RotSymDesign {
    pub composition: Composition,
    pub prescription: TargetPrescription,
    pub cells: Vec<Cell>,
    /// Band boundaries `zeta_1 > ... > zeta_n = c`.
    pub levels: Vec<f64>,
}

/// Cells of the rotationally symmetric construction: ring `i` occupies the
/// band between consecutive mass levels in the `i`-th horizontal layer of
/// the cylinder, split into `k_i` wedges each aimed at one polygon vertex.
pub fn rot_sym_cells(c: f64, z_prime: f64, delta: f64, rings: &[Ring], g: &Radiance) -> Result<(Vec<Cell>, Vec<f64>)> {
    if rings.is_empty() {
        return Err(Error::InvalidParameter("no rings".into()));
    }
    for (i, r) in rings.iter().enumerate() {
        if r.k == 0 || !(r.d > 0.0) || !(r.xi > -1.0 && r.xi < 0.0) || !(r.f > 0.0) {
            return Err(Error::InvalidParameter(format!("ring {i} out of range: {r:?}")));
        }
    }
    let available = g
        .symmetric_mass(&Region::z_cap(c))
        .ok_or_else(|| Error::InvalidParameter("radiance must be rotationally symmetric about +z".into()))?;
    let total: f64 = rings.iter().map(|r| r.f).sum();
    if (total - available).abs() > 1e-6 * available.max(total) {
        return Err(Error::ConservationViolated {
            prescribed: total,
            available,
        });
    }
    let n = rings.len();
    let mut levels = Vec::with_capacity(n);
    let mut cumulative = 0.0;
    for (i, r) in rings.iter().enumerate() {
        cumulative += r.f;
        levels.push(if i + 1 == n {
            c
        } else {
            cap_level_for_mass(g, &Direction::Z, cumulative, c)?
        });
    }
    let layer = delta / n as f64;
    let mut cells = Vec::new();
    for (i, r) in rings.iter().enumerate() {
        let band = if i == 0 {
            Region::z_cap(levels[0])
        } else {
            Region::z_band(levels[i], levels[i - 1])
        };
        let targets = target_polygon(r.k, r.d, r.xi, r.t);
        for (j, x) in targets.into_iter().enumerate() {
            let base = if r.k == 1 {
                band.clone()
            } else {
                band.clone().intersect(Region::wedge(r.k, j as u32, r.t))
            };
            cells.push(Cell {
                base,
                a: z_prime + i as f64 * layer,
                b: layer,
                target: x,
                energy: r.f / r.k as f64,
            });
        }
    }
    Ok((cells, levels))
}

/// Merges cell energies into one prescription, summing coincident targets.
pub fn merged_prescription(cells: &[Cell]) -> TargetPrescription {
    let mut points: Vec<Vector3<f64>> = Vec::new();
    let mut energies: Vec<f64> = Vec::new();
    for c in cells {
        match points
            .iter()
            .position(|p| (p - c.target).norm() <= 1e-12 * c.target.norm())
        {
            Some(i) => energies[i] += c.energy,
            None => {
                points.push(c.target);
                energies.push(c.energy);
            }
        }
    }
    TargetPrescription { points, energies }
}

pub fn design_rot_sym(
    c: f64,
    z_prime: f64,
    delta: f64,
    rings: &[Ring],
    g: &Radiance,
    params: &CarveParams,
) -> Result<RotSymDesign> {
    let (cells, levels) = rot_sym_cells(c, z_prime, delta, rings, g)?;
    let restriction = ConicalCylinder::new(Region::z_cap(c), z_prime, delta);
    let composition = compose_multi_target(&cells, &restriction, g, params)?;
    Ok(RotSymDesign {
        prescription: merged_prescription(&cells),
        composition,
        cells,
        levels,
    })
}
