use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{project, Direction};
use crate::synthesis::Carving;

/// Open subset of the unit sphere, stored as a predicate tree.
///
/// Every primitive is open: membership uses strict inequalities, so shared
/// boundaries between adjacent primitives belong to neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Empty,
    Full,
    /// `<axis, m> > level`.
    Cap {
        axis: Direction,
        level: f64,
    },
    /// `lower < <axis, m> < upper`.
    Band {
        axis: Direction,
        lower: f64,
        upper: f64,
    },
    /// Azimuthal sector about +z of width `2 pi / k`, centred on azimuth
    /// `2 pi i / k + t`. `k = 1` is the whole sphere.
    Wedge {
        k: u32,
        i: u32,
        t: f64,
    },
    /// Central projection of the open half-space `<normal, p> > offset`.
    HalfSpaceProj {
        normal: Vector3<f64>,
        offset: f64,
    },
    /// Directions covered by patch `index` of a carving: the projection of
    /// that ellipsoid's intersection with the carving's remaining free space.
    Carved {
        carving: Arc<Carving>,
        index: usize,
    },
    Union {
        parts: Vec<Region>,
    },
    Intersection {
        parts: Vec<Region>,
    },
    Difference {
        base: Box<Region>,
        removed: Box<Region>,
    },
}

impl Region {
    pub fn cap(axis: Direction, level: f64) -> Self {
        Region::Cap { axis, level }
    }

    pub fn z_cap(level: f64) -> Self {
        Region::Cap {
            axis: Direction::Z,
            level,
        }
    }

    pub fn z_band(lower: f64, upper: f64) -> Self {
        Region::Band {
            axis: Direction::Z,
            lower,
            upper,
        }
    }

    pub fn wedge(k: u32, i: u32, t: f64) -> Self {
        Region::Wedge { k, i, t }
    }

    pub fn intersect(self, other: Region) -> Self {
        Region::Intersection {
            parts: vec![self, other],
        }
    }

    pub fn union(self, other: Region) -> Self {
        Region::Union {
            parts: vec![self, other],
        }
    }

    pub fn minus(self, other: Region) -> Self {
        Region::Difference {
            base: Box::new(self),
            removed: Box::new(other),
        }
    }

    pub fn contains(&self, m: &Direction) -> bool {
        match self {
            Region::Empty => false,
            Region::Full => true,
            Region::Cap { axis, level } => axis.dot(m) > *level,
            Region::Band { axis, lower, upper } => {
                let u = axis.dot(m);
                u > *lower && u < *upper
            }
            Region::Wedge { k, i, t } => wedge_contains(*k, *i, *t, m),
            Region::HalfSpaceProj { normal, offset } => {
                if *offset < 0.0 {
                    true
                } else {
                    normal.dot(m.as_vec()) > 0.0
                }
            }
            Region::Carved { carving, index } => carving.covers(m, *index),
            Region::Union { parts } => parts.iter().any(|r| r.contains(m)),
            Region::Intersection { parts } => parts.iter().all(|r| r.contains(m)),
            Region::Difference { base, removed } => base.contains(m) && !removed.contains(m),
        }
    }

    /// A cap `<axis, m> > level` containing the region; `None` when no
    /// tighter bound than the whole sphere is known.
    pub fn bounding_cap(&self) -> Option<(Direction, f64)> {
        match self {
            Region::Empty | Region::Full | Region::Wedge { .. } => None,
            Region::Cap { axis, level } => Some((*axis, *level)),
            Region::Band { axis, lower, .. } => Some((*axis, *lower)),
            Region::HalfSpaceProj { normal, offset } => {
                if *offset < 0.0 {
                    None
                } else {
                    project(normal).ok().map(|a| (a, 0.0))
                }
            }
            Region::Carved { carving, .. } => carving.restriction().base.bounding_cap(),
            Region::Union { parts } => {
                let caps: Option<Vec<_>> = parts.iter().map(|p| p.bounding_cap()).collect();
                let caps = caps?;
                let (axis, _) = *caps.first()?;
                if caps.iter().all(|(a, _)| (a.as_vec() - axis.as_vec()).norm() < 1e-15) {
                    let level = caps.iter().map(|(_, l)| *l).fold(f64::INFINITY, f64::min);
                    Some((axis, level))
                } else {
                    None
                }
            }
            Region::Intersection { parts } => parts
                .iter()
                .filter_map(|p| p.bounding_cap())
                .max_by(|a, b| a.1.total_cmp(&b.1)),
            Region::Difference { base, .. } => base.bounding_cap(),
        }
    }

    /// For regions built from caps and bands about `axis` (optionally cut by
    /// one wedge when `axis` is +z), the interval of `<axis, m>` they span and
    /// the fraction of azimuth they keep.
    pub fn axial_extent(&self, axis: &Direction) -> Option<(f64, f64, f64)> {
        let same = |a: &Direction| (a.as_vec() - axis.as_vec()).norm() < 1e-15;
        match self {
            Region::Empty => Some((1.0, 1.0, 0.0)),
            Region::Full => Some((-1.0, 1.0, 1.0)),
            Region::Cap { axis: a, level } if same(a) => Some((level.max(-1.0), 1.0, 1.0)),
            Region::Band { axis: a, lower, upper } if same(a) => {
                Some((lower.max(-1.0), upper.min(1.0).max(lower.max(-1.0)), 1.0))
            }
            Region::Wedge { k, .. } if same(&Direction::Z) => Some((-1.0, 1.0, 1.0 / (*k).max(1) as f64)),
            Region::Intersection { parts } => {
                let mut lo: f64 = -1.0;
                let mut hi: f64 = 1.0;
                let mut frac = 1.0;
                let mut wedges = 0;
                for p in parts {
                    if matches!(p, Region::Wedge { k, .. } if *k > 1) {
                        wedges += 1;
                    }
                    let (l, h, f) = p.axial_extent(axis)?;
                    lo = lo.max(l);
                    hi = hi.min(h);
                    frac *= f;
                }
                if wedges > 1 {
                    return None;
                }
                Some((lo, hi.max(lo), frac))
            }
            _ => None,
        }
    }
}

fn wedge_contains(k: u32, i: u32, t: f64, m: &Direction) -> bool {
    if k <= 1 {
        return true;
    }
    let k = k as f64;
    let start = PI * (2.0 * i as f64 - 1.0) / k + t;
    let rel = (m.azimuth() - start).rem_euclid(TAU);
    rel > 0.0 && rel < TAU / k
}

/// Open conical cylinder: points whose projection lies in `base` and whose
/// height lies strictly between `z_prime` and `z_prime + delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicalCylinder {
    pub base: Region,
    pub z_prime: f64,
    pub delta: f64,
}

impl ConicalCylinder {
    pub fn new(base: Region, z_prime: f64, delta: f64) -> Self {
        ConicalCylinder { base, z_prime, delta }
    }

    pub fn z_top(&self) -> f64 {
        self.z_prime + self.delta
    }

    #[inline]
    pub fn in_slab(&self, p: &Vector3<f64>) -> bool {
        p.z > self.z_prime && p.z < self.z_prime + self.delta
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        if !self.in_slab(p) {
            return false;
        }
        match project(p) {
            Ok(m) => self.base.contains(&m),
            Err(_) => false,
        }
    }

    /// Distance from the closure, zero inside.
    pub fn closure_distance(&self, p: &Vector3<f64>) -> f64 {
        let below = (self.z_prime - p.z).max(0.0);
        let above = (p.z - self.z_top()).max(0.0);
        below.max(above)
    }

    /// Radial interval `(r_min, r_max)` of the slab along direction `m`.
    pub fn radial_interval(&self, m: &Direction) -> Option<(f64, f64)> {
        let mz = m.z();
        if mz <= 0.0 {
            return None;
        }
        Some((self.z_prime / mz, self.z_top() / mz))
    }
}
