//! Cones over patches and sampled patch-versus-patch interference tests.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conics::Ellipsoid;
use crate::error::{Error, Result};
use crate::sphere::{project, Direction, Region, SphericalSampler};

/// A point is inside a finite cone only if it sits before the patch by at
/// least this fraction of the generating segment.
pub const CONE_CLEARANCE: f64 = 1e-9;

/// Patch: the radial graph of an ellipsoid over a region of directions.
/// The ellipsoid's second focus is the patch's target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub ellipsoid: Ellipsoid,
    pub region: Region,
}

impl PatchGeometry {
    pub fn new(ellipsoid: Ellipsoid, region: Region) -> Self {
        PatchGeometry { ellipsoid, region }
    }

    pub fn target(&self) -> &Vector3<f64> {
        self.ellipsoid.focus()
    }

    /// Sampler over the tightest known cap containing the region.
    pub fn sampler(&self, count: usize, seed: u64) -> SphericalSampler {
        match self.region.bounding_cap() {
            Some((axis, level)) => SphericalSampler::cap(seed, count, axis, level),
            None => SphericalSampler::uniform(seed, count),
        }
    }

    /// Draws of `sampler` that fall in the region, in draw order.
    pub fn sample_directions(&self, sampler: &SphericalSampler) -> Vec<Direction> {
        sampler
            .directions()
            .into_par_iter()
            .filter(|m| self.region.contains(m))
            .collect()
    }

    pub fn sample_points(&self, sampler: &SphericalSampler) -> Vec<Vector3<f64>> {
        self.sample_directions(sampler)
            .iter()
            .map(|m| self.ellipsoid.point(m))
            .collect()
    }

    /// Parameter along the ray `apex + t dir` of each hit of the patch.
    fn hits(&self, apex: &Vector3<f64>, dir: &Direction) -> Vec<f64> {
        let e = &self.ellipsoid;
        let ts = if apex == e.focus() {
            vec![e.focal_radius(dir.as_vec())]
        } else if apex.norm() == 0.0 {
            vec![e.polar_radius(dir)]
        } else {
            e.ray_hit(apex, dir)
        };
        ts.into_iter()
            .filter(|t| {
                project(&(apex + dir.as_vec() * *t))
                    .map(|m| self.region.contains(&m))
                    .unwrap_or(false)
            })
            .collect()
    }
}

/// Union of segments (or, when `infinite`, rays) from `apex` through the
/// points of `patch`.
#[derive(Debug, Clone, Copy)]
pub struct Cone<'a> {
    pub apex: Vector3<f64>,
    pub patch: &'a PatchGeometry,
    pub infinite: bool,
}

impl<'a> Cone<'a> {
    pub fn finite(apex: Vector3<f64>, patch: &'a PatchGeometry) -> Self {
        Cone {
            apex,
            patch,
            infinite: false,
        }
    }

    pub fn infinite(apex: Vector3<f64>, patch: &'a PatchGeometry) -> Self {
        Cone {
            apex,
            patch,
            infinite: true,
        }
    }
}

pub fn cone_contains(c: &Cone<'_>, p: &Vector3<f64>) -> Result<bool> {
    let v = p - c.apex;
    let s = v.norm();
    if s <= 1e-14 * c.apex.norm().max(1.0) {
        return Err(Error::ApexQuery);
    }
    let dir = Direction::new_unchecked(v / s);
    let hits = c.patch.hits(&c.apex, &dir);
    Ok(if c.infinite {
        !hits.is_empty()
    } else {
        hits.iter().any(|t| s <= t * (1.0 - CONE_CLEARANCE))
    })
}

/// Sampling knobs for interference tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams {
    /// Draws per patch from its bounding cap.
    pub samples: usize,
    pub seed: u64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        OcclusionParams {
            samples: 4096,
            seed: 0x0cc1_u64,
        }
    }
}

/// Angular bound of the finite cone from a patch's target over its sampled
/// points, used to skip pairs quickly.
#[derive(Debug, Clone, Copy)]
struct ConeBound {
    axis: Vector3<f64>,
    cos_half_angle: f64,
    reach: f64,
}

const BOUND_ANGLE_MARGIN: f64 = 0.05;
const BOUND_REACH_MARGIN: f64 = 1.05;

impl ConeBound {
    fn new(apex: &Vector3<f64>, points: &[Vector3<f64>]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let units: Vec<Vector3<f64>> = points.iter().map(|q| (q - apex).normalize()).collect();
        let sum: Vector3<f64> = units.iter().sum();
        let axis = if sum.norm() > 1e-12 { sum.normalize() } else { units[0] };
        let max_angle = units
            .iter()
            .map(|u| u.dot(&axis).clamp(-1.0, 1.0).acos())
            .fold(0.0, f64::max);
        let half = (max_angle + BOUND_ANGLE_MARGIN).min(std::f64::consts::PI);
        let reach = points.iter().map(|q| (q - apex).norm()).fold(0.0, f64::max);
        Some(ConeBound {
            axis,
            cos_half_angle: half.cos(),
            reach: reach * BOUND_REACH_MARGIN,
        })
    }

    /// Whether a ball may meet the bounded cone.
    fn may_meet(&self, apex: &Vector3<f64>, center: &Vector3<f64>, radius: f64) -> bool {
        let v = center - apex;
        let dist = v.norm();
        if dist <= radius {
            return true;
        }
        if dist - radius > self.reach {
            return false;
        }
        if self.cos_half_angle <= -1.0 + 1e-12 {
            return true;
        }
        let ang = (v.dot(&self.axis) / dist).clamp(-1.0, 1.0).acos();
        let spread = (radius / dist).asin();
        ang - spread <= self.cos_half_angle.acos()
    }
}

fn bounding_ball(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if points.is_empty() {
        return None;
    }
    let c: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let r = points.iter().map(|q| (q - c).norm()).fold(0.0, f64::max);
    Some((c, r * BOUND_REACH_MARGIN + 1e-12))
}

/// First sampled point of `b` inside the finite cone from `a`'s target over
/// patch `a`.
pub fn blocking_witness(a: &PatchGeometry, b_points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let cone = Cone::finite(*a.target(), a);
    b_points
        .iter()
        .find(|q| cone_contains(&cone, q).unwrap_or(false))
        .copied()
}

/// Whether patch `b` intrudes into the beam reflected by `a` towards its
/// target, decided on the draws of `sampler` that fall in `b`'s region.
pub fn patch_blocks_with(a: &PatchGeometry, b: &PatchGeometry, sampler: &SphericalSampler) -> bool {
    blocking_witness(a, &b.sample_points(sampler)).is_some()
}

pub fn patch_blocks(a: &PatchGeometry, b: &PatchGeometry, params: &OcclusionParams) -> bool {
    patch_blocks_with(a, b, &b.sampler(params.samples, params.seed))
}

/// Outcome of the pairwise clearance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clearance {
    pub clear: bool,
    /// `(a, b)` with `b` inside the cone over `a`.
    pub offending: Option<(usize, usize)>,
    pub witness: Option<Vector3<f64>>,
    pub samples_per_patch: usize,
}

/// Sampled points of each patch; patch `i` uses sampler stream `i`.
pub fn patch_point_sets(patches: &[PatchGeometry], params: &OcclusionParams) -> Vec<Vec<Vector3<f64>>> {
    patches
        .iter()
        .enumerate()
        .map(|(i, p)| p.sample_points(&p.sampler(params.samples, params.seed).with_stream(i as u64)))
        .collect()
}

/// Checks that no patch meets the finite cone of another. Pairs are scanned
/// in `(a, b)` lexicographic order and the first offender is reported.
pub fn mutual_clear(patches: &[PatchGeometry], params: &OcclusionParams) -> Clearance {
    let points = patch_point_sets(patches, params);
    mutual_clear_on(patches, &points, params.samples)
}

pub fn mutual_clear_on(patches: &[PatchGeometry], points: &[Vec<Vector3<f64>>], samples_per_patch: usize) -> Clearance {
    let bounds: Vec<Option<ConeBound>> = patches
        .iter()
        .zip(points)
        .map(|(p, pts)| ConeBound::new(p.target(), pts))
        .collect();
    let balls: Vec<Option<(Vector3<f64>, f64)>> = points.iter().map(|p| bounding_ball(p)).collect();
    let n = patches.len();
    let found = (0..n * n).into_par_iter().find_map_first(|idx| {
        let (a, b) = (idx / n, idx % n);
        if a == b {
            return None;
        }
        let (Some(bound), Some((c, r))) = (bounds[a], balls[b]) else {
            return None;
        };
        if !bound.may_meet(patches[a].target(), &c, r) {
            return None;
        }
        blocking_witness(&patches[a], &points[b]).map(|w| (a, b, w))
    });
    Clearance {
        clear: found.is_none(),
        offending: found.map(|(a, b, _)| (a, b)),
        witness: found.map(|(_, _, w)| w),
        samples_per_patch,
    }
}

/// The two blocking conditions for a same-target pair, each decided
/// independently on samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SameTargetEquivalence {
    /// Neither patch meets the finite cone from the target over the other.
    pub finite_cones_clear: bool,
    /// `b` misses the infinite cone from the target over `a`.
    pub infinite_cone_clear: bool,
}

impl SameTargetEquivalence {
    pub fn agree(&self) -> bool {
        self.finite_cones_clear == self.infinite_cone_clear
    }
}

pub fn same_target_equivalence(
    a: &PatchGeometry,
    b: &PatchGeometry,
    params: &OcclusionParams,
) -> Result<SameTargetEquivalence> {
    if (a.target() - b.target()).norm() > 1e-12 * a.target().norm() {
        return Err(Error::InvalidParameter("patches aim at different targets".into()));
    }
    let pa = a.sample_points(&a.sampler(params.samples, params.seed));
    let pb = b.sample_points(&b.sampler(params.samples, params.seed).with_stream(1));
    let finite_cones_clear = blocking_witness(a, &pb).is_none() && blocking_witness(b, &pa).is_none();
    let cone = Cone::infinite(*a.target(), a);
    let infinite_cone_clear = !pb.iter().any(|q| cone_contains(&cone, q).unwrap_or(false));
    Ok(SameTargetEquivalence {
        finite_cones_clear,
        infinite_cone_clear,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(focus: [f64; 3], d: f64, region: Region) -> PatchGeometry {
        PatchGeometry::new(Ellipsoid::new(Vector3::from(focus), d).unwrap(), region)
    }

    #[test]
    fn radial_cone_membership() {
        let p = patch([0.0, 0.0, -1.0], 1.5, Region::z_cap(0.9));
        let m = Direction::from_axis_coords(&Direction::Z, 0.95, 0.4);
        let q = p.ellipsoid.point(&m);
        let o = Vector3::zeros();
        assert!(cone_contains(&Cone::finite(o, &p), &(q * 0.5)).unwrap());
        assert!(!cone_contains(&Cone::finite(o, &p), &(q * 2.0)).unwrap());
        assert!(cone_contains(&Cone::infinite(o, &p), &(q * 2.0)).unwrap());
        assert!(matches!(cone_contains(&Cone::finite(o, &p), &o), Err(Error::ApexQuery)));
    }

    #[test]
    fn focal_cone_membership() {
        let p = patch([0.5, 0.0, -1.0], 1.5, Region::z_cap(0.9));
        let m = Direction::from_axis_coords(&Direction::Z, 0.97, 2.0);
        let q = p.ellipsoid.point(&m);
        let x = *p.target();
        let mid = x + (q - x) * 0.3;
        assert!(cone_contains(&Cone::finite(x, &p), &mid).unwrap());
        assert!(!cone_contains(&Cone::finite(x, &p), &(x + (q - x) * 1.3)).unwrap());
        assert!(cone_contains(&Cone::infinite(x, &p), &(x + (q - x) * 1.3)).unwrap());
    }

    #[test]
    fn single_patch_is_clear() {
        let p = patch([0.0, 0.0, -1.0], 1.5, Region::z_cap(0.9));
        assert!(mutual_clear(&[p], &OcclusionParams::default()).clear);
    }
}
