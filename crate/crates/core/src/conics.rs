//! Ellipsoids of revolution with one focus at the origin.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{project, Direction};

/// Smallest accepted `d / |x|`; below this the ellipsoid is numerically a
/// segment.
const MIN_RELATIVE_D: f64 = 1e-12;

/// `sqrt(1 + s^2) - s` with `s = d / |x|`, written in the cancellation-free
/// form `1 / (sqrt(1 + s^2) + s)`.
pub fn eccentricity(x: &Vector3<f64>, d: f64) -> Result<f64> {
    let r = x.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidFocus);
    }
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidParameter(format!("focal parameter {d} must be positive")));
    }
    let s = d / r;
    Ok(1.0 / ((1.0 + s * s).sqrt() + s))
}

#[derive(Serialize, Deserialize)]
struct EllipsoidRepr {
    focus: [f64; 3],
    d: f64,
}

/// Ellipsoid of revolution with foci at the origin and `focus`, focal
/// parameter `d`: in polar form `psi(m) = d / (1 - eps <m, k>)` with `k` the
/// unit vector towards `focus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EllipsoidRepr", into = "EllipsoidRepr")]
pub struct Ellipsoid {
    focus: Vector3<f64>,
    d: f64,
    eps: f64,
    axis: Direction,
}

impl TryFrom<EllipsoidRepr> for Ellipsoid {
    type Error = Error;

    fn try_from(r: EllipsoidRepr) -> Result<Self> {
        Ellipsoid::new(Vector3::from(r.focus), r.d)
    }
}

impl From<Ellipsoid> for EllipsoidRepr {
    fn from(e: Ellipsoid) -> Self {
        EllipsoidRepr {
            focus: e.focus.into(),
            d: e.d,
        }
    }
}

impl Ellipsoid {
    pub fn new(focus: Vector3<f64>, d: f64) -> Result<Self> {
        let eps = eccentricity(&focus, d)?;
        if d < MIN_RELATIVE_D * focus.norm() {
            return Err(Error::InvalidParameter(format!(
                "focal parameter {d} degenerate for |x| = {}",
                focus.norm()
            )));
        }
        Ok(Ellipsoid {
            focus,
            d,
            eps,
            axis: project(&focus)?,
        })
    }

    /// The ellipsoid with the given foci passing through `p`.
    pub fn through_point(focus: Vector3<f64>, p: &Vector3<f64>) -> Result<Self> {
        let a = 0.5 * (p.norm() + (p - focus).norm());
        let c = 0.5 * focus.norm();
        Ellipsoid::new(focus, (a - c) * (a + c) / a)
    }

    pub fn focus(&self) -> &Vector3<f64> {
        &self.focus
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn eccentricity(&self) -> f64 {
        self.eps
    }

    /// Unit vector from the origin towards the second focus.
    pub fn axis(&self) -> &Direction {
        &self.axis
    }

    pub fn semi_major(&self) -> f64 {
        self.d / ((1.0 - self.eps) * (1.0 + self.eps))
    }

    pub fn semi_minor(&self) -> f64 {
        (self.d * self.semi_major()).sqrt()
    }

    /// `|p| + |p - x|` on the surface.
    pub fn focal_sum(&self) -> f64 {
        2.0 * self.semi_major()
    }

    #[inline]
    pub fn polar_radius(&self, m: &Direction) -> f64 {
        self.d / (1.0 - self.eps * self.axis.dot(m))
    }

    #[inline]
    pub fn point(&self, m: &Direction) -> Vector3<f64> {
        m.as_vec() * self.polar_radius(m)
    }

    /// Distance from the second focus to the surface along unit direction `n`.
    #[inline]
    pub fn focal_radius(&self, n: &Vector3<f64>) -> f64 {
        self.d / (1.0 + self.eps * self.axis.as_vec().dot(n))
    }

    /// Outward unit normal at `Psi(m)`: the normalized gradient of
    /// `|p| + |p - x|`.
    pub fn surface_normal(&self, m: &Direction) -> Direction {
        let p = self.point(m);
        let to_x = p - self.focus;
        let g = m.as_vec() + to_x / to_x.norm();
        Direction::new_unchecked(g / g.norm())
    }

    /// Forward intersections `t > 0` of `origin + t dir` with the surface,
    /// ascending.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Direction) -> Vec<f64> {
        let a = self.semi_major();
        let b2 = self.d * a;
        let k = self.axis.as_vec();
        let v = dir.as_vec();
        let q = origin - self.focus * 0.5;
        let qk = q.dot(k);
        let vk = v.dot(k);
        // scaled by a^2 so the axial term has unit weight
        let r = a * a / b2;
        let qa = vk * vk + (1.0 - vk * vk) * r;
        let qb = 2.0 * (qk * vk + (q.dot(v) - qk * vk) * r);
        let qc = qk * qk + (q.norm_squared() - qk * qk) * r - a * a;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return Vec::new();
        }
        let h = -0.5 * (qb + qb.signum() * disc.sqrt());
        let mut roots = Vec::with_capacity(2);
        if h != 0.0 {
            roots.push(qc / h);
            roots.push(h / qa);
        } else {
            roots.push(0.0);
        }
        let mut out: Vec<f64> = roots
            .into_iter()
            .map(|t| self.polish(origin, v, t))
            .filter(|t| *t > 0.0)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn polish(&self, origin: &Vector3<f64>, v: &Vector3<f64>, t: f64) -> f64 {
        let p = origin + v * t;
        let r0 = p.norm();
        let r1 = (p - self.focus).norm();
        if r0 == 0.0 || r1 == 0.0 {
            return t;
        }
        let f = r0 + r1 - self.focal_sum();
        let df = v.dot(&(p / r0 + (p - self.focus) / r1));
        if df.abs() < 1e-8 {
            return t;
        }
        t - f / df
    }
}

/// Mirror reflection of `m` in the plane with unit normal `n`.
#[inline]
pub fn reflect_direction(m: &Direction, n: &Direction) -> Direction {
    let v = m.as_vec() - n.as_vec() * (2.0 * m.dot(n));
    Direction::new_unchecked(v)
}
