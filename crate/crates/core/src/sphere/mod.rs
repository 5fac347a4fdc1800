//! Directions on the unit sphere, region predicates, radiance densities and
//! Monte Carlo / quadrature measures over them.

mod radiance;
mod region;
mod sampler;

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use radiance::{Radiance, RadianceKind, RadianceProfile};
pub use region::{ConicalCylinder, Region};
pub use sampler::{Estimate, SampleScheme, SphericalSampler, CHUNK};

/// Unit vector on the sphere centred at the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Direction(Vector3<f64>);

impl Direction {
    pub const Z: Direction = Direction(Vector3::new(0.0, 0.0, 1.0));

    /// Wraps a vector that is already unit length. Callers are responsible
    /// for the norm; use [`project`] otherwise.
    pub fn new_unchecked(v: Vector3<f64>) -> Self {
        Direction(v)
    }

    /// Spherical coordinates: `u` is the cosine of the polar angle measured
    /// from `axis`, `phi` the azimuth in the frame returned by [`frame`].
    pub fn from_axis_coords(axis: &Direction, u: f64, phi: f64) -> Self {
        let (e1, e2) = frame(axis);
        let s = (1.0 - u * u).max(0.0).sqrt();
        let v = axis.0 * u + e1 * (s * phi.cos()) + e2 * (s * phi.sin());
        Direction(v / v.norm())
    }

    pub fn as_vec(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vec(self) -> Vector3<f64> {
        self.0
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    /// Azimuth about +z in `(-pi, pi]`.
    pub fn azimuth(&self) -> f64 {
        self.0.y.atan2(self.0.x)
    }

    pub fn neg(&self) -> Direction {
        Direction(-self.0)
    }
}

impl TryFrom<[f64; 3]> for Direction {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        project(&Vector3::from(v))
    }
}

impl From<Direction> for [f64; 3] {
    fn from(d: Direction) -> Self {
        [d.0.x, d.0.y, d.0.z]
    }
}

/// Central projection of a nonzero point onto the unit sphere.
pub fn project(p: &Vector3<f64>) -> Result<Direction> {
    let n = p.norm();
    if !(n >= 1e-300) {
        return Err(Error::ZeroVector);
    }
    Ok(Direction(p / n))
}

/// Orthonormal pair completing `axis` to a right-handed frame. For the +z
/// axis this is the standard (x, y) pair, so azimuths agree with `atan2(y, x)`.
pub fn frame(axis: &Direction) -> (Vector3<f64>, Vector3<f64>) {
    let a = axis.0;
    if (a - Vector3::z()).norm() < 1e-15 {
        return (Vector3::x(), Vector3::y());
    }
    let helper = if a.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e1 = helper.cross(&a).normalize();
    let e2 = a.cross(&e1);
    (e1, e2)
}

/// Area of the spherical cap `<axis, m> > level`.
pub fn cap_area(level: f64) -> f64 {
    2.0 * PI * (1.0 - level.clamp(-1.0, 1.0))
}

pub const SPHERE_AREA: f64 = 4.0 * PI;

/// Estimate of `sigma(region)`; the cap scheme only sees the part of the
/// region inside its cap.
pub fn spherical_measure(region: &Region, sampler: &SphericalSampler) -> Estimate {
    sampler.estimate(|m| if region.contains(m) { 1.0 } else { 0.0 })
}

/// Estimate of `mu_g(region)`: the integral of the radiance over the region.
pub fn radiance_integral(g: &Radiance, region: &Region, sampler: &SphericalSampler) -> Estimate {
    sampler.estimate(|m| if region.contains(m) { g.eval(m) } else { 0.0 })
}

/// Level `zeta` with `mu_g(Cap(axis, zeta)) = mass`, for a radiance that is
/// rotationally symmetric about `axis`. Bisection on the deterministic
/// quadrature profile.
pub fn cap_level_for_mass(g: &Radiance, axis: &Direction, mass: f64, c_outer: f64) -> Result<f64> {
    let profile = g
        .profile_about(axis)
        .ok_or_else(|| Error::InvalidParameter("radiance is not symmetric about the axis".into()))?;
    let available = profile.band_mass(c_outer, 1.0);
    let total = profile.band_mass(-1.0, 1.0);
    let tol = 1e-12 * total.max(f64::MIN_POSITIVE);
    if !(mass >= 0.0) || mass > available + tol {
        return Err(Error::MassOutOfRange {
            requested: mass,
            available,
        });
    }
    if mass <= 0.0 {
        return Ok(1.0 - 1e-12);
    }
    if mass >= available - tol {
        return Ok(c_outer);
    }
    // mass above zeta decreases as zeta grows
    let (mut lo, mut hi) = (c_outer, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if profile.band_mass(mid, 1.0) > mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_examples() {
        let d = project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(d.into_vec(), Vector3::new(0.0, 0.0, 1.0));
        let d = project(&Vector3::new(3.0, 4.0, 0.0)).unwrap();
        assert!((d.as_vec() - Vector3::new(0.6, 0.8, 0.0)).norm() < 1e-15);
        assert!(matches!(project(&Vector3::zeros()), Err(Error::ZeroVector)));
    }

    #[test]
    fn frame_is_orthonormal() {
        for v in [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 2.0, 3.0], [0.3, -0.1, 0.95]] {
            let a = project(&Vector3::from(v)).unwrap();
            let (e1, e2) = frame(&a);
            assert!((e1.norm() - 1.0).abs() < 1e-14);
            assert!((e2.norm() - 1.0).abs() < 1e-14);
            assert!(e1.dot(a.as_vec()).abs() < 1e-14);
            assert!(e2.dot(a.as_vec()).abs() < 1e-14);
            assert!((e1.cross(&e2) - a.as_vec()).norm() < 1e-14);
        }
    }

    #[test]
    fn axis_coords_round_trip() {
        let m = Direction::from_axis_coords(&Direction::Z, 0.3, 1.2);
        assert!((m.z() - 0.3).abs() < 1e-15);
        assert!((m.azimuth() - 1.2).abs() < 1e-14);
    }

    #[test]
    fn cap_level_examples() {
        let g = Radiance::uniform(1.0, Region::Full);
        let z = cap_level_for_mass(&g, &Direction::Z, PI, 0.0).unwrap();
        assert!((z - 0.5).abs() < 1e-12, "{z}");
        let z = cap_level_for_mass(&g, &Direction::Z, 0.0, 0.0).unwrap();
        assert_eq!(z, 1.0 - 1e-12);
        let z = cap_level_for_mass(&g, &Direction::Z, 2.0 * PI, 0.0).unwrap();
        assert_eq!(z, 0.0);
        assert!(matches!(
            cap_level_for_mass(&g, &Direction::Z, 7.0, 0.0),
            Err(Error::MassOutOfRange { .. })
        ));
    }
}
