use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{Direction, Region};
use crate::error::{Error, Result};

/// Composite Simpson intervals for axially symmetric mass profiles.
const SIMPSON_INTERVALS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadianceKind {
    Uniform {
        value: f64,
    },
    /// `scale * max(<axis, m>, 0)^power`.
    CosPower {
        axis: Direction,
        power: f64,
        scale: f64,
    },
    /// Piecewise linear in `<axis, m>`; knots sorted by abscissa, clamped
    /// outside the table.
    RadialTable {
        axis: Direction,
        knots: Vec<(f64, f64)>,
    },
}

/// Radiance density of the point source; zero outside `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Radiance {
    pub kind: RadianceKind,
    pub support: Region,
}

impl Radiance {
    pub fn uniform(value: f64, support: Region) -> Self {
        Radiance {
            kind: RadianceKind::Uniform { value },
            support,
        }
    }

    pub fn new(kind: RadianceKind, support: Region) -> Result<Self> {
        let ok = match &kind {
            RadianceKind::Uniform { value } => *value >= 0.0 && value.is_finite(),
            RadianceKind::CosPower { power, scale, .. } => *power >= 0.0 && *scale >= 0.0,
            RadianceKind::RadialTable { knots, .. } => {
                !knots.is_empty()
                    && knots.iter().all(|&(u, v)| v >= 0.0 && (-1.0..=1.0).contains(&u))
                    && knots.windows(2).all(|w| w[0].0 < w[1].0)
            }
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("bad radiance {kind:?}")));
        }
        Ok(Radiance { kind, support })
    }

    pub fn eval(&self, m: &Direction) -> f64 {
        if !self.support.contains(m) {
            return 0.0;
        }
        match &self.kind {
            RadianceKind::Uniform { value } => *value,
            RadianceKind::CosPower { axis, .. } | RadianceKind::RadialTable { axis, .. } => self.density(axis.dot(m)),
        }
    }

    fn density(&self, u: f64) -> f64 {
        match &self.kind {
            RadianceKind::Uniform { value } => *value,
            RadianceKind::CosPower { power, scale, .. } => scale * u.max(0.0).powf(*power),
            RadianceKind::RadialTable { knots, .. } => table_lookup(knots, u),
        }
    }

    fn symmetry_axis(&self) -> Option<Direction> {
        match &self.kind {
            RadianceKind::Uniform { .. } => None,
            RadianceKind::CosPower { axis, .. } | RadianceKind::RadialTable { axis, .. } => Some(*axis),
        }
    }

    /// One-dimensional mass profile when both the density and the support
    /// are rotationally symmetric about `axis`.
    pub fn profile_about(&self, axis: &Direction) -> Option<RadianceProfile<'_>> {
        if let Some(a) = self.symmetry_axis() {
            if (a.as_vec() - axis.as_vec()).norm() > 1e-15 {
                return None;
            }
        }
        let (lo, hi, frac) = self.support.axial_extent(axis)?;
        if frac != 1.0 {
            return None;
        }
        Some(RadianceProfile {
            radiance: self,
            lo,
            hi,
            azimuth_fraction: 1.0,
        })
    }

    /// Deterministic `mu_g(region)` for regions made of bands and at most one
    /// wedge about the radiance axis (+z for uniform radiance).
    pub fn symmetric_mass(&self, region: &Region) -> Option<f64> {
        let axis = self.symmetry_axis().unwrap_or(Direction::Z);
        let (lo, hi, frac) = Region::Intersection {
            parts: vec![region.clone(), self.support.clone()],
        }
        .axial_extent(&axis)?;
        let profile = RadianceProfile {
            radiance: self,
            lo,
            hi,
            azimuth_fraction: frac,
        };
        Some(profile.band_mass(-1.0, 1.0))
    }

    /// Mass of the whole support, when it has a symmetric profile.
    pub fn total_mass(&self) -> Option<f64> {
        self.symmetric_mass(&Region::Full)
    }
}

fn table_lookup(knots: &[(f64, f64)], u: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if u <= first.0 {
        return first.1;
    }
    if u >= last.0 {
        return last.1;
    }
    let idx = knots.partition_point(|k| k.0 <= u);
    let (u0, v0) = knots[idx - 1];
    let (u1, v1) = knots[idx];
    v0 + (v1 - v0) * (u - u0) / (u1 - u0)
}

/// Axially symmetric radiance restricted to `lo < <axis, m> < hi`.
#[derive(Debug, Clone, Copy)]
pub struct RadianceProfile<'a> {
    radiance: &'a Radiance,
    lo: f64,
    hi: f64,
    azimuth_fraction: f64,
}

impl RadianceProfile<'_> {
    /// `mu_g` of the band `a < <axis, m> < b` by composite Simpson.
    pub fn band_mass(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if !(b > a) {
            return 0.0;
        }
        let n = SIMPSON_INTERVALS;
        let h = (b - a) / n as f64;
        let f = |u: f64| self.radiance.density(u);
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        TAU * self.azimuth_fraction * s * h / 3.0
    }
}
