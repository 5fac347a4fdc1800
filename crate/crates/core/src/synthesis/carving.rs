use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::conics::Ellipsoid;
use crate::error::{Error, Result};
use crate::sphere::{project, ConicalCylinder, Direction};

/// Relative slack on the per-ray parameter windows used to skip ellipsoids
/// before the exact slab test.
const WINDOW_SLACK: f64 = 1e-9;

#[derive(Serialize, Deserialize)]
struct CarvingRepr {
    restriction: ConicalCylinder,
    target: [f64; 3],
    params: Vec<f64>,
}

/// A sequence of confocal ellipsoids `E_{d_0}, E_{d_1}, ...` (foci at the
/// origin and `target`) carved out of a conical cylinder.
///
/// Patch `k` is the part of `E_{d_k}` inside the free space
///
/// ```text
/// Q_k = C \ union_{j<k} ( C_inf(x, patch_j) u C_inf(O, patch_j) )
/// ```
///
/// where `C_inf(a, S)` is the union of all rays from `a` through points of
/// `S`. Membership is evaluated lazily by recursion on the patch index, so
/// the carving is an exact predicate rather than a sampled set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CarvingRepr", into = "CarvingRepr")]
pub struct Carving {
    restriction: ConicalCylinder,
    target: Vector3<f64>,
    params: Vec<f64>,
    ellipsoids: Vec<Ellipsoid>,
}

impl PartialEq for Carving {
    fn eq(&self, other: &Self) -> bool {
        self.restriction == other.restriction && self.target == other.target && self.params == other.params
    }
}

impl TryFrom<CarvingRepr> for Carving {
    type Error = Error;

    fn try_from(r: CarvingRepr) -> Result<Self> {
        let mut c = Carving::new(r.restriction, Vector3::from(r.target))?;
        for d in r.params {
            c.push(d)?;
        }
        Ok(c)
    }
}

impl From<Carving> for CarvingRepr {
    fn from(c: Carving) -> Self {
        CarvingRepr {
            restriction: c.restriction,
            target: c.target.into(),
            params: c.params,
        }
    }
}

/// Focal parameter of the ellipsoid with foci at distance `2c` whose focal
/// sum is `s`.
#[inline]
pub(crate) fn d_for_focal_sum(s: f64, c: f64) -> f64 {
    let a = 0.5 * s;
    (a - c) * (a + c) / a
}

impl Carving {
    pub fn new(restriction: ConicalCylinder, target: Vector3<f64>) -> Result<Self> {
        if !(target.norm() > 0.0) {
            return Err(Error::InvalidFocus);
        }
        Ok(Carving {
            restriction,
            target,
            params: Vec::new(),
            ellipsoids: Vec::new(),
        })
    }

    pub fn push(&mut self, d: f64) -> Result<()> {
        self.ellipsoids.push(Ellipsoid::new(self.target, d)?);
        self.params.push(d);
        Ok(())
    }

    pub fn with_param(&self, d: f64) -> Result<Carving> {
        let mut c = self.clone();
        c.push(d)?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn restriction(&self) -> &ConicalCylinder {
        &self.restriction
    }

    pub fn target(&self) -> &Vector3<f64> {
        &self.target
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn ellipsoid(&self, j: usize) -> &Ellipsoid {
        &self.ellipsoids[j]
    }

    fn half_focal_distance(&self) -> f64 {
        0.5 * self.target.norm()
    }

    /// Open window of focal parameters whose ellipsoid meets the ray
    /// `origin + t dir` (`t >= 0`) inside the slab. Along such rays the
    /// focal sum grows monotonically with `t`, so the window is an interval.
    fn slab_window(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        if dir.z <= 0.0 {
            return None;
        }
        let c = self.half_focal_distance();
        let x = self.target;
        let at = |z: f64| {
            let t = ((z - origin.z) / dir.z).max(0.0);
            let q = origin + dir * t;
            d_for_focal_sum(q.norm() + (q - x).norm(), c)
        };
        let lo = at(self.restriction.z_prime);
        let hi = at(self.restriction.z_top());
        if !(hi > 0.0) {
            return None;
        }
        Some((lo * (1.0 - WINDOW_SLACK), hi * (1.0 + WINDOW_SLACK)))
    }

    /// Window of focal parameters placing `Psi_d(m)` in the slab.
    pub fn radial_window(&self, m: &Direction) -> Option<(f64, f64)> {
        self.slab_window(&Vector3::zeros(), m.as_vec())
    }

    /// Patch selected along the radial ray `m`, i.e. the unique `j` with
    /// `m` in `Proj[patch_j]`. Requires nothing of `m`.
    pub fn selected(&self, m: &Direction) -> Option<usize> {
        if !self.restriction.base.contains(m) {
            return None;
        }
        self.cover_upto(m, self.len())
    }

    /// Whether `m` lies in `Proj[patch_index]`.
    pub fn covers(&self, m: &Direction, index: usize) -> bool {
        index < self.len() && self.restriction.base.contains(m) && self.cover_upto(m, index + 1) == Some(index)
    }

    /// First patch `j < limit` met by the radial ray `m`. The caller has
    /// checked that `m` lies in the base region.
    pub fn cover_upto(&self, m: &Direction, limit: usize) -> Option<usize> {
        let limit = limit.min(self.len());
        if limit == 0 {
            return None;
        }
        let (lo, hi) = self.radial_window(m)?;
        for j in 0..limit {
            let d = self.params[j];
            if d <= lo || d >= hi {
                continue;
            }
            let p = self.ellipsoids[j].point(m);
            if !self.restriction.in_slab(&p) {
                continue;
            }
            let v = p - self.target;
            let n = v / v.norm();
            if self.x_first(&n, j).is_none() {
                return Some(j);
            }
        }
        None
    }

    /// First patch `l < upto` met by the ray from the target in unit
    /// direction `n`.
    pub fn x_first(&self, n: &Vector3<f64>, upto: usize) -> Option<usize> {
        let upto = upto.min(self.len());
        if upto == 0 {
            return None;
        }
        let (lo, hi) = self.slab_window(&self.target, n)?;
        for l in 0..upto {
            let d = self.params[l];
            if d <= lo || d >= hi {
                continue;
            }
            let h = self.target + n * self.ellipsoids[l].focal_radius(n);
            if !self.restriction.in_slab(&h) {
                continue;
            }
            let Ok(mh) = project(&h) else { continue };
            if !self.restriction.base.contains(&mh) {
                continue;
            }
            if self.cover_upto(&mh, l).is_none() {
                return Some(l);
            }
        }
        None
    }

    /// Whether the point `p` lies in the free space `Q_k`.
    pub fn in_free(&self, k: usize, p: &Vector3<f64>) -> bool {
        if !self.restriction.contains(p) {
            return false;
        }
        let Ok(m) = project(p) else { return false };
        if self.cover_upto(&m, k).is_some() {
            return false;
        }
        let v = p - self.target;
        self.x_first(&(v / v.norm()), k).is_none()
    }

    /// Whether `Psi_d(m)` lies in `Q_k`, for `m` already known to be in the
    /// base region and outside `Proj[patch_j]` for all `j < k`.
    pub(crate) fn free_on_uncovered(&self, k: usize, ell: &Ellipsoid, m: &Direction) -> bool {
        let p = ell.point(m);
        if !self.restriction.in_slab(&p) {
            return false;
        }
        let v = p - self.target;
        self.x_first(&(v / v.norm()), k).is_none()
    }
}
