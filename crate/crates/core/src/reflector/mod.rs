//! Generalized and interpolated reflectors: the priority selector, the
//! reflector maps and the energy functions.

mod energy;
mod interpolate;

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::conics::Ellipsoid;
use crate::error::{Error, Result};
use crate::occlusion::PatchGeometry;
use crate::sphere::{project, ConicalCylinder, Direction, Region};
use crate::synthesis::Carving;

pub use energy::{
    compare_with_prescription, energy_g1, is_weak_solution, Bin, BinSums, EnergyTally, TargetPrescription,
    WeakSolutionReport,
};
pub(crate) use interpolate::{component_count, DirectionGrid};
pub use interpolate::{
    energy_g2, interpolate, InterpolatedReflector, WallGenerator, WallPanel, DEFAULT_WALL_RESOLUTION,
};

/// Ray parameters closer than this fraction of the segment length to either
/// end of a reflected chord are not counted as hits.
pub const CHORD_EPS: f64 = 1e-9;

/// Containment tolerance for reflector points against the restriction.
pub const CONTAINMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub geometry: PatchGeometry,
    /// Selection rank; lower wins where closures overlap.
    pub priority: u32,
}

impl Patch {
    pub fn new(ellipsoid: Ellipsoid, region: Region, priority: u32) -> Self {
        Patch {
            geometry: PatchGeometry::new(ellipsoid, region),
            priority,
        }
    }

    pub fn target(&self) -> &Vector3<f64> {
        self.geometry.target()
    }

    pub fn ellipsoid(&self) -> &Ellipsoid {
        &self.geometry.ellipsoid
    }

    pub fn region(&self) -> &Region {
        &self.geometry.region
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialRestriction {
    ConicalCylinder(ConicalCylinder),
}

impl SpatialRestriction {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            SpatialRestriction::ConicalCylinder(c) => c.contains(p),
        }
    }

    /// Distance from the closure along the slab normal; radial cone walls
    /// are handled by the patch regions themselves.
    pub fn closure_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            SpatialRestriction::ConicalCylinder(c) => c.closure_distance(p),
        }
    }

    pub fn cylinder(&self) -> &ConicalCylinder {
        match self {
            SpatialRestriction::ConicalCylinder(c) => c,
        }
    }
}

/// Outcome of `rho`: the radius along `m` and the selected patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub radius: f64,
    pub patch: usize,
}

/// What a reflector does with an emitted direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Blocker {
    Patch { index: usize },
    Wall { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapOutcome {
    /// Reflected towards the selected patch's target unobstructed.
    Target { patch: usize },
    /// The reflected chord meets the reflector at `point`.
    Blocked {
        patch: usize,
        point: Vector3<f64>,
        blocker: Blocker,
    },
    /// No patch covers the direction.
    Undefined,
}

#[derive(Serialize, Deserialize)]
struct ReflectorRepr {
    patches: Vec<Patch>,
    aperture: Region,
    restriction: SpatialRestriction,
}

/// Patches sharing a carving are resolved with one membership query.
#[derive(Debug, Clone, Default)]
struct Selector {
    groups: Vec<(Arc<Carving>, Vec<Option<usize>>)>,
    plain: Vec<usize>,
}

/// Finite prioritized family of ellipsoid patches over an aperture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ReflectorRepr", into = "ReflectorRepr")]
pub struct GeneralizedReflector {
    patches: Vec<Patch>,
    aperture: Region,
    restriction: SpatialRestriction,
    selector: Selector,
    targets: Vec<Vector3<f64>>,
    target_of_patch: Vec<usize>,
}

impl PartialEq for GeneralizedReflector {
    fn eq(&self, other: &Self) -> bool {
        self.patches == other.patches && self.aperture == other.aperture && self.restriction == other.restriction
    }
}

impl TryFrom<ReflectorRepr> for GeneralizedReflector {
    type Error = Error;

    fn try_from(r: ReflectorRepr) -> Result<Self> {
        GeneralizedReflector::new(r.patches, r.aperture, r.restriction)
    }
}

impl From<GeneralizedReflector> for ReflectorRepr {
    fn from(r: GeneralizedReflector) -> Self {
        ReflectorRepr {
            patches: r.patches,
            aperture: r.aperture,
            restriction: r.restriction,
        }
    }
}

fn intern(pool: &mut Vec<Arc<Carving>>, c: &Arc<Carving>) -> (usize, Arc<Carving>) {
    if let Some(i) = pool.iter().position(|p| Arc::ptr_eq(p, c) || **p == **c) {
        return (i, pool[i].clone());
    }
    pool.push(c.clone());
    (pool.len() - 1, c.clone())
}

impl GeneralizedReflector {
    pub fn new(mut patches: Vec<Patch>, aperture: Region, restriction: SpatialRestriction) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &patches {
            if !seen.insert(p.priority) {
                return Err(Error::DuplicatePriority(p.priority));
            }
        }
        let mut pool: Vec<Arc<Carving>> = Vec::new();
        let mut selector = Selector::default();
        for (pos, p) in patches.iter_mut().enumerate() {
            if let Region::Carved { carving, index } = &mut p.geometry.region {
                let (g, shared) = intern(&mut pool, carving);
                *carving = shared;
                if selector.groups.len() <= g {
                    selector.groups.push((pool[g].clone(), vec![None; pool[g].len()]));
                }
                if let Some(slot) = selector.groups[g].1.get_mut(*index) {
                    *slot = Some(pos);
                }
            } else {
                selector.plain.push(pos);
            }
        }
        let mut targets: Vec<Vector3<f64>> = Vec::new();
        let target_of_patch = patches
            .iter()
            .map(|p| match targets.iter().position(|t| t == p.target()) {
                Some(i) => i,
                None => {
                    targets.push(*p.target());
                    targets.len() - 1
                }
            })
            .collect();
        Ok(GeneralizedReflector {
            patches,
            aperture,
            restriction,
            selector,
            targets,
            target_of_patch,
        })
    }

    /// Reflector with no patches; every direction is lost.
    pub fn empty(aperture: Region, restriction: SpatialRestriction) -> Self {
        GeneralizedReflector::new(Vec::new(), aperture, restriction).expect("no priorities to clash")
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn aperture(&self) -> &Region {
        &self.aperture
    }

    pub fn restriction(&self) -> &SpatialRestriction {
        &self.restriction
    }

    /// Distinct target points in order of first use.
    pub fn targets(&self) -> &[Vector3<f64>] {
        &self.targets
    }

    pub fn target_index_of_patch(&self, patch: usize) -> usize {
        self.target_of_patch[patch]
    }

    /// Lowest-priority patch whose region contains `m`, with its radius.
    pub fn rho(&self, m: &Direction) -> Option<Selection> {
        let mut best: Option<usize> = None;
        let mut consider = |pos: usize| {
            if best.is_none_or(|b| self.patches[pos].priority < self.patches[b].priority) {
                best = Some(pos);
            }
        };
        for (carving, map) in &self.selector.groups {
            if let Some(j) = carving.selected(m) {
                if let Some(Some(pos)) = map.get(j) {
                    consider(*pos);
                }
            }
        }
        for &pos in &self.selector.plain {
            if self.patches[pos].region().contains(m) {
                consider(pos);
            }
        }
        best.map(|patch| Selection {
            radius: self.patches[patch].ellipsoid().polar_radius(m),
            patch,
        })
    }

    /// Whether the point `h` lies on the reflector as a part of a patch
    /// other than `skip`, returning that patch.
    fn owner_of_point(&self, h: &Vector3<f64>, patch: usize) -> bool {
        let Ok(m) = project(h) else { return false };
        self.rho(&m).is_some_and(|s| s.patch == patch)
    }

    /// First point where the open segment `p -> x` meets a patch other than
    /// those on the ellipsoid `own`.
    pub fn first_patch_hit(&self, p: &Vector3<f64>, x: &Vector3<f64>, own: &Ellipsoid) -> Option<(f64, usize)> {
        let v = x - p;
        let len = v.norm();
        if len == 0.0 {
            return None;
        }
        let dir = Direction::new_unchecked(v / len);
        let cyl = self.restriction.cylinder();
        let slack = CONTAINMENT_TOL.max(1e-9 * cyl.z_top());
        let mut best: Option<(f64, usize)> = None;
        for (q, patch) in self.patches.iter().enumerate() {
            let e = patch.ellipsoid();
            if e == own {
                continue;
            }
            for t in e.ray_hit(p, &dir) {
                if t <= CHORD_EPS * len || t >= (1.0 - CHORD_EPS) * len {
                    continue;
                }
                if best.is_some_and(|(bt, _)| bt <= t) {
                    break;
                }
                let h = p + dir.as_vec() * t;
                if h.z < cyl.z_prime - slack || h.z > cyl.z_top() + slack {
                    continue;
                }
                if self.owner_of_point(&h, q) {
                    best = Some((t, q));
                    break;
                }
            }
        }
        best
    }

    /// The generalized reflector map.
    pub fn alpha1(&self, m: &Direction) -> MapOutcome {
        let Some(sel) = self.rho(m) else {
            return MapOutcome::Undefined;
        };
        let patch = &self.patches[sel.patch];
        let p = m.as_vec() * sel.radius;
        match self.first_patch_hit(&p, patch.target(), patch.ellipsoid()) {
            None => MapOutcome::Target { patch: sel.patch },
            Some((t, q)) => {
                let dir = (patch.target() - p).normalize();
                MapOutcome::Blocked {
                    patch: sel.patch,
                    point: p + dir * t,
                    blocker: Blocker::Patch { index: q },
                }
            }
        }
    }

    /// Largest distance outside the closure of the restriction over the
    /// reflector points at the given directions.
    pub fn containment_violation(&self, dirs: &[Direction]) -> f64 {
        dirs.iter()
            .filter_map(|m| self.rho(m).map(|s| m.as_vec() * s.radius))
            .map(|p| self.restriction.closure_distance(&p))
            .fold(0.0, f64::max)
    }
}
