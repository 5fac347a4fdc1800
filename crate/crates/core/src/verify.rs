//! Forward ray-trace verification. Rays are reflected with the surface
//! normal and scored by where the reflected line actually passes, so the
//! checks here never rely on which focus a patch was built for.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conics::reflect_direction;
use crate::error::{Error, Result};
use crate::occlusion::{
    cone_contains, mutual_clear_on, patch_point_sets, Clearance, Cone, OcclusionParams, PatchGeometry,
};
use crate::reflector::{
    component_count, interpolate, Bin, Blocker, DirectionGrid, EnergyTally, GeneralizedReflector,
    InterpolatedReflector, TargetPrescription, WallPanel, CHORD_EPS, DEFAULT_WALL_RESOLUTION,
};
use crate::sphere::{project, Direction, Radiance, SphericalSampler};

/// A reflected line scores a target passing within this fraction of the
/// target's distance from the source.
pub const ATTRIBUTION_TOL: f64 = 1e-6;
/// Minimum target spacing over attribution tolerance.
pub const MIN_SPACING_RATIO: f64 = 1e3;
/// Fewest samples `energy_report` accepts.
pub const MIN_REPORT_SAMPLES: usize = 10_000;
/// Relative pass band on each target energy.
pub const ENERGY_REL_TOL: f64 = 0.01;
/// Largest blocked energy allowed, as a fraction of the radiance total.
pub const BLOCKED_REL_TOL: f64 = 1e-3;

/// What a traced surface is made of.
#[derive(Debug, Clone, Copy)]
pub enum Surface<'a> {
    Generalized(&'a GeneralizedReflector),
    Interpolated(&'a InterpolatedReflector),
}

impl<'a> Surface<'a> {
    pub fn reflector(&self) -> &'a GeneralizedReflector {
        match self {
            Surface::Generalized(r) => r,
            Surface::Interpolated(ir) => &ir.base,
        }
    }

    fn walls(&self) -> Option<&'a InterpolatedReflector> {
        match self {
            Surface::Generalized(_) => None,
            Surface::Interpolated(ir) => Some(ir),
        }
    }
}

impl<'a> From<&'a GeneralizedReflector> for Surface<'a> {
    fn from(r: &'a GeneralizedReflector) -> Self {
        Surface::Generalized(r)
    }
}

impl<'a> From<&'a InterpolatedReflector> for Surface<'a> {
    fn from(r: &'a InterpolatedReflector) -> Self {
        Surface::Interpolated(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceResult {
    Target { index: usize, miss_distance: f64 },
    Blocked { point: Vector3<f64>, blocker: Blocker },
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOutcome {
    pub direction: Direction,
    pub patch: Option<usize>,
    pub point: Option<Vector3<f64>>,
    pub reflected: Option<Direction>,
    pub result: TraceResult,
}

impl TraceOutcome {
    pub fn bin(&self) -> Bin {
        match self.result {
            TraceResult::Target { index, .. } => Bin::Target(index),
            TraceResult::Blocked { .. } => Bin::Blocked,
            TraceResult::Lost => Bin::Lost,
        }
    }
}

/// Single-bounce tracer against a fixed list of target points.
#[derive(Debug, Clone)]
pub struct Tracer<'a> {
    surface: Surface<'a>,
    targets: Vec<Vector3<f64>>,
}

impl<'a> Tracer<'a> {
    /// Fails when two targets are too close to tell apart at the
    /// attribution tolerance.
    pub fn new(surface: impl Into<Surface<'a>>, targets: &[Vector3<f64>]) -> Result<Self> {
        for (i, a) in targets.iter().enumerate() {
            if !(a.norm() > 0.0) || !a.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidFocus);
            }
            for b in &targets[..i] {
                let tol = ATTRIBUTION_TOL * a.norm().max(b.norm());
                if (a - b).norm() <= MIN_SPACING_RATIO * tol {
                    return Err(Error::InvalidParameter(format!(
                        "targets {a:?} and {b:?} closer than {MIN_SPACING_RATIO} attribution tolerances"
                    )));
                }
            }
        }
        Ok(Tracer {
            surface: surface.into(),
            targets: targets.to_vec(),
        })
    }

    pub fn targets(&self) -> &[Vector3<f64>] {
        &self.targets
    }

    pub fn trace(&self, m: &Direction) -> TraceOutcome {
        let r = self.surface.reflector();
        let lost = TraceOutcome {
            direction: *m,
            patch: None,
            point: None,
            reflected: None,
            result: TraceResult::Lost,
        };
        let Some(sel) = r.rho(m) else {
            return lost;
        };
        let ell = r.patches()[sel.patch].ellipsoid();
        let p = m.as_vec() * sel.radius;
        let y = reflect_direction(m, &ell.surface_normal(m));
        let hit = TraceOutcome {
            patch: Some(sel.patch),
            point: Some(p),
            reflected: Some(y),
            ..lost
        };
        let Some((index, reach, miss)) = self.nearest_target(&p, &y) else {
            return hit;
        };
        match self.first_obstruction(&p, &y, reach, sel.patch) {
            Some((t, blocker)) => TraceOutcome {
                result: TraceResult::Blocked {
                    point: p + y.as_vec() * t,
                    blocker,
                },
                ..hit
            },
            None => TraceOutcome {
                result: TraceResult::Target {
                    index,
                    miss_distance: miss,
                },
                ..hit
            },
        }
    }

    /// Closest target to the forward ray from `p` along `y`, with the ray
    /// parameter of closest approach and the miss distance.
    fn nearest_target(&self, p: &Vector3<f64>, y: &Direction) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, x) in self.targets.iter().enumerate() {
            let w = x - p;
            let t = w.dot(y.as_vec());
            if t <= 0.0 {
                continue;
            }
            let miss = (w - y.as_vec() * t).norm();
            if miss <= ATTRIBUTION_TOL * x.norm() && best.is_none_or(|b| miss < b.2) {
                best = Some((i, t, miss));
            }
        }
        best
    }

    /// First surface point strictly between `p` and `p + reach y`.
    fn first_obstruction(&self, p: &Vector3<f64>, y: &Direction, reach: f64, own: usize) -> Option<(f64, Blocker)> {
        let r = self.surface.reflector();
        let own_ell = r.patches()[own].ellipsoid();
        let (lo, hi) = (CHORD_EPS * reach, (1.0 - CHORD_EPS) * reach);
        let mut best: Option<(f64, Blocker)> = None;
        for (q, patch) in r.patches().iter().enumerate() {
            let e = patch.ellipsoid();
            for t in e.ray_hit(p, y) {
                if t <= lo || t >= hi || best.is_some_and(|(b, _)| b <= t) {
                    continue;
                }
                // the reflected ray leaves its own ellipsoid only at p
                if e == own_ell && t < 1e-7 * reach {
                    continue;
                }
                let h = p + y.as_vec() * t;
                let Ok(n) = project(&h) else { continue };
                if r.rho(&n).is_some_and(|s| s.patch == q) {
                    best = Some((t, Blocker::Patch { index: q }));
                }
            }
        }
        if let Some(ir) = self.surface.walls() {
            let end = p + y.as_vec() * reach;
            if let Some((s, w)) = ir.first_wall_hit(p, &end) {
                let t = s * reach;
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, Blocker::Wall { index: w }));
                }
            }
        }
        best
    }

    /// Traces every draw of `sampler`, in draw order.
    pub fn trace_all(&self, sampler: &SphericalSampler) -> Vec<TraceOutcome> {
        sampler.directions().par_iter().map(|m| self.trace(m)).collect()
    }

    /// Tally of traced outcomes over `sampler`.
    pub fn tally(&self, g: &Radiance, sampler: &SphericalSampler) -> EnergyTally {
        EnergyTally::collect(&self.targets, g, sampler, |m| self.trace(m).bin())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub point: Vector3<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub prescribed: f64,
    pub delta: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub targets: Vec<TargetReport>,
    pub blocked_energy: f64,
    pub lost_energy: f64,
    /// Radiance total on the same samples: targets plus blocked plus lost.
    pub total: f64,
    pub samples: usize,
    pub seed: u64,
    pub pass: bool,
}

impl EnergyReport {
    pub fn from_tally(t: &EnergyTally, f: &TargetPrescription, seed: u64) -> Self {
        let total = t.total().mean;
        let targets: Vec<TargetReport> = f
            .points
            .iter()
            .zip(&f.energies)
            .enumerate()
            .map(|(i, (x, fi))| {
                let est = t.target(i);
                let delta = est.mean - fi;
                TargetReport {
                    point: *x,
                    estimate: est.mean,
                    std_error: est.std_error,
                    prescribed: *fi,
                    delta,
                    pass: delta.abs() <= (ENERGY_REL_TOL * fi).max(3.0 * est.std_error),
                }
            })
            .collect();
        let blocked_energy = t.blocked_energy().mean;
        let pass = targets.iter().all(|r| r.pass) && blocked_energy <= BLOCKED_REL_TOL * total;
        EnergyReport {
            targets,
            blocked_energy,
            lost_energy: t.lost_energy().mean,
            total,
            samples: t.samples,
            seed,
            pass,
        }
    }
}

/// Traces `n` uniform sphere draws weighted by `g` and compares the energy
/// reaching each prescribed point with its prescription.
pub fn energy_report<'a>(
    surface: impl Into<Surface<'a>>,
    g: &Radiance,
    f: &TargetPrescription,
    n: usize,
    seed: u64,
) -> Result<EnergyReport> {
    if n < MIN_REPORT_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "{n} samples, need at least {MIN_REPORT_SAMPLES}"
        )));
    }
    let tracer = Tracer::new(surface, &f.points)?;
    let tally = tracer.tally(g, &SphericalSampler::uniform(seed, n));
    Ok(EnergyReport::from_tally(&tally, f, seed))
}

/// Quantile `q` of the miss distances of rays that reach a target.
pub fn miss_distance_quantile(outcomes: &[TraceOutcome], q: f64) -> Option<f64> {
    let mut d: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o.result {
            TraceResult::Target { miss_distance, .. } => Some(miss_distance),
            _ => None,
        })
        .collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let k = ((q.clamp(0.0, 1.0) * d.len() as f64).ceil() as usize).clamp(1, d.len());
    Some(d[k - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheckParams {
    pub occlusion: OcclusionParams,
    pub resolution: usize,
    /// Points per side of the grid sampled on each wall panel.
    pub wall_grid: usize,
}

impl Default for InterpolationCheckParams {
    fn default() -> Self {
        InterpolationCheckParams {
            occlusion: OcclusionParams::default(),
            resolution: DEFAULT_WALL_RESOLUTION,
            wall_grid: 4,
        }
    }
}

/// A surface point inside the beam reflected by some patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrusion {
    pub point: Vector3<f64>,
    /// Patch whose beam is entered.
    pub cone_of: usize,
    /// `Some(i)` for a point of wall panel `i`, `None` for a patch point.
    pub wall: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub holds: bool,
    /// No patch meets the beam of another.
    pub clear: Clearance,
    /// No sampled patch or wall point lies inside a beam.
    pub exterior: bool,
    pub intrusion: Option<Intrusion>,
    pub patch_points: usize,
    pub wall_points: usize,
    /// The aperture and the radial graph of the closed surface each form a
    /// single component on the sampling grid.
    pub connected: bool,
    pub aperture_components: usize,
    pub surface_components: usize,
    pub walls: usize,
    pub note: String,
}

fn wall_points(w: &WallPanel, k: usize) -> Vec<Vector3<f64>> {
    let [g0, g1] = &w.generators;
    let mut out = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            // interior points only, the rim touches the patches
            let u = 0.1 + 0.8 * (a as f64 + 0.5) / k as f64;
            let v = 0.1 + 0.8 * (b as f64 + 0.5) / k as f64;
            let p0 = g0.inner_point().lerp(&g0.outer_point(), v);
            let p1 = g1.inner_point().lerp(&g1.outer_point(), v);
            out.push(p0.lerp(&p1, u));
        }
    }
    out
}

/// Sampled sufficient check that closing the reflector with walls does not
/// change where energy goes: pairwise clearance of the patches, no patch or
/// wall point inside any reflected beam, and a single connected radial
/// graph over a connected aperture. Simple connectivity itself is not
/// tested.
pub fn check_interpolation_condition(
    r: &GeneralizedReflector,
    params: &InterpolationCheckParams,
) -> InterpolationCheck {
    let geoms: Vec<PatchGeometry> = r.patches().iter().map(|p| p.geometry.clone()).collect();
    let points = patch_point_sets(&geoms, &params.occlusion);
    let clear = mutual_clear_on(&geoms, &points, params.occlusion.samples);

    let grid = DirectionGrid::about(r, params.resolution.max(8));
    let nodes: Vec<Direction> = (0..grid.rows * grid.cols)
        .map(|k| grid.at((k / grid.cols) as f64, (k % grid.cols) as f64))
        .collect();
    let in_aperture: Vec<bool> = nodes.iter().map(|m| r.aperture().contains(m)).collect();
    let aperture_components = component_count(&grid.components(&in_aperture, r.aperture().contains(&grid.axis)));
    let defined: Vec<bool> = nodes.par_iter().map(|m| r.rho(m).is_some()).collect();
    let surface_components = component_count(&grid.components(&defined, r.rho(&grid.axis).is_some()));

    let walls = match interpolate(r, params.resolution) {
        Ok(ir) => ir.walls,
        Err(_) => Vec::new(),
    };
    let mut candidates: Vec<(Vector3<f64>, Option<usize>, Option<usize>)> = Vec::new();
    for (i, pts) in points.iter().enumerate() {
        candidates.extend(pts.iter().map(|p| (*p, Some(i), None)));
    }
    let patch_points = candidates.len();
    for (w, panel) in walls.iter().enumerate() {
        candidates.extend(
            wall_points(panel, params.wall_grid)
                .into_iter()
                .map(|p| (p, None, Some(w))),
        );
    }
    let wall_points_count = candidates.len() - patch_points;
    let cones: Vec<Cone<'_>> = geoms.iter().map(|g| Cone::finite(*g.target(), g)).collect();
    let intrusion = candidates.par_iter().find_map_first(|(p, own, wall)| {
        cones.iter().enumerate().find_map(|(c, cone)| {
            if *own == Some(c) {
                return None;
            }
            cone_contains(cone, p).unwrap_or(false).then_some(Intrusion {
                point: *p,
                cone_of: c,
                wall: *wall,
            })
        })
    });

    let connected = aperture_components <= 1 && surface_components <= 1;
    let exterior = intrusion.is_none();
    InterpolationCheck {
        holds: clear.clear && exterior && connected,
        clear,
        exterior,
        intrusion,
        patch_points,
        wall_points: wall_points_count,
        connected,
        aperture_components,
        surface_components,
        walls: walls.len(),
        note: "desk-scale sufficient check".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetComparison {
    pub point: Vector3<f64>,
    pub g1: f64,
    pub g2: f64,
    pub combined_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationEnergyReport {
    /// Whether the interpolation condition held; the comparison is run
    /// either way.
    pub precondition: bool,
    pub targets: Vec<TargetComparison>,
    pub walls: usize,
    pub samples: usize,
    pub seed: u64,
    pub pass: bool,
}

/// Traces the same draws through the generalized reflector and through its
/// wall-closed version and compares the energy each target receives.
pub fn g2_equals_g1_check(
    r: &GeneralizedReflector,
    g: &Radiance,
    n: usize,
    seed: u64,
    params: &InterpolationCheckParams,
) -> Result<InterpolationEnergyReport> {
    let precondition = check_interpolation_condition(r, params).holds;
    let ir = interpolate(r, params.resolution)?;
    let sampler = SphericalSampler::uniform(seed, n);
    let t1 = Tracer::new(r, r.targets())?.tally(g, &sampler);
    let t2 = Tracer::new(&ir, r.targets())?.tally(g, &sampler);
    let targets: Vec<TargetComparison> = (0..r.targets().len())
        .map(|i| {
            let (a, b) = (t1.target(i), t2.target(i));
            let combined_se = a.std_error.hypot(b.std_error);
            TargetComparison {
                point: r.targets()[i],
                g1: a.mean,
                g2: b.mean,
                combined_se,
                pass: (a.mean - b.mean).abs() <= 3.0 * combined_se,
            }
        })
        .collect();
    Ok(InterpolationEnergyReport {
        precondition,
        pass: targets.iter().all(|t| t.pass),
        targets,
        walls: ir.walls.len(),
        samples: n,
        seed,
    })
}
