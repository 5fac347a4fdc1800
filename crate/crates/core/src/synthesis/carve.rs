use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::carving::Carving;
use crate::conics::Ellipsoid;
use crate::error::{Error, Result};
use crate::reflector::{GeneralizedReflector, Patch, SpatialRestriction};
use crate::sphere::{ConicalCylinder, Direction, Estimate, Radiance, Region, SphericalSampler};

/// Golden-section steps per refinement level.
const GOLDEN_STEPS: usize = 8;
/// Grid doublings tried before giving up on an iteration.
const STALL_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DGrid {
    /// Optional clip of the slab-feasible range.
    pub d_min: Option<f64>,
    pub d_max: Option<f64>,
    pub count: usize,
    /// Refinement levels around the best grid cell.
    pub refinements: usize,
}

impl Default for DGrid {
    fn default() -> Self {
        DGrid {
            d_min: None,
            d_max: None,
            count: 64,
            refinements: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarveParams {
    pub d_grid: DGrid,
    /// Accepted steps reach at least `1 - epsilon_rule` of the best measure
    /// found on the grid.
    pub epsilon_rule: f64,
    /// Stop once the uncovered measure is at most this fraction of the
    /// aperture measure.
    pub stop_residual: f64,
    pub max_patches: usize,
    /// Draws from the aperture's bounding cap used for all measures.
    pub measure_samples: usize,
    pub seed: u64,
}

impl Default for CarveParams {
    fn default() -> Self {
        CarveParams {
            d_grid: DGrid::default(),
            epsilon_rule: 0.05,
            stop_residual: 1e-3,
            max_patches: 200,
            measure_samples: 1 << 15,
            seed: 1,
        }
    }
}

impl CarveParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d_grid.count >= 2
            && (0.0..1.0).contains(&self.epsilon_rule)
            && self.stop_residual > 0.0
            && self.stop_residual < 1.0
            && self.max_patches >= 1
            && self.measure_samples >= 1000;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "carve parameters out of range: {self:?}"
            )))
        }
    }
}

/// One accepted carving step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub d: f64,
    /// Spherical measure of the new patch's projection.
    pub measure: f64,
    /// Best measure seen over the searched focal parameters.
    pub best_measure: f64,
    /// Uncovered aperture measure after the step.
    pub residual: f64,
}

/// Carving in progress: the carving so far and the aperture samples it has
/// not yet covered.
#[derive(Debug, Clone)]
pub struct CarveState {
    pub carving: Carving,
    samples: Vec<Direction>,
    windows: Vec<(f64, f64)>,
    uncovered: Vec<usize>,
    weight: f64,
    draws: usize,
    pub trace: Vec<TraceRecord>,
}

impl CarveState {
    pub fn new(restriction: ConicalCylinder, target: Vector3<f64>, sampler: &SphericalSampler) -> Result<Self> {
        let carving = Carving::new(restriction, target)?;
        let samples: Vec<Direction> = sampler
            .directions()
            .into_iter()
            .filter(|m| carving.restriction().base.contains(m))
            .collect();
        let windows = samples
            .iter()
            .map(|m| carving.radial_window(m).unwrap_or((0.0, 0.0)))
            .collect();
        let uncovered = (0..samples.len()).collect();
        Ok(CarveState {
            carving,
            samples,
            windows,
            uncovered,
            weight: sampler.area() / sampler.count as f64,
            draws: sampler.count,
            trace: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.carving.len()
    }

    /// Estimate of the aperture measure.
    pub fn aperture_measure(&self) -> Estimate {
        self.count_estimate(self.samples.len())
    }

    /// Estimate of the measure not yet covered by any patch.
    pub fn residual(&self) -> Estimate {
        self.count_estimate(self.uncovered.len())
    }

    pub fn uncovered_directions(&self) -> impl Iterator<Item = &Direction> + '_ {
        self.uncovered.iter().map(|&i| &self.samples[i])
    }

    fn count_estimate(&self, count: usize) -> Estimate {
        let a = self.weight * self.draws as f64;
        Estimate::from_sums(count as f64 * a, count as f64 * a * a, self.draws)
    }

    fn covered_by(&self, ell: &Ellipsoid) -> Vec<bool> {
        let d = ell.d();
        let k = self.k();
        self.uncovered
            .par_iter()
            .map(|&i| {
                let (lo, hi) = self.windows[i];
                d > lo && d < hi && self.carving.free_on_uncovered(k, ell, &self.samples[i])
            })
            .collect()
    }

    /// Number of uncovered samples the ellipsoid `E_d` would claim.
    fn claim_count(&self, d: f64) -> usize {
        match Ellipsoid::new(*self.carving.target(), d) {
            Ok(e) => self.covered_by(&e).into_iter().filter(|c| *c).count(),
            Err(_) => 0,
        }
    }

    /// `D_k(d)`: measure of the directions whose point on `E_d` lies in the
    /// current free space.
    pub fn profile(&self, d: f64) -> Estimate {
        self.count_estimate(self.claim_count(d))
    }

    fn feasible_range(&self, grid: &DGrid) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for &i in &self.uncovered {
            let (a, b) = self.windows[i];
            if b > a {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        if let Some(m) = grid.d_min {
            lo = lo.max(m);
        }
        if let Some(m) = grid.d_max {
            hi = hi.min(m);
        }
        let lo = lo.max(1e-12 * self.carving.target().norm());
        (hi > lo).then_some((lo, hi))
    }

    /// Evaluated `(d, claimed samples)` pairs: a log-spaced grid of `count`
    /// points and golden-section refinement around the best cell.
    fn search(&self, grid: &DGrid, count: usize) -> Vec<(f64, usize)> {
        let Some((lo, hi)) = self.feasible_range(grid) else {
            return Vec::new();
        };
        let ratio = hi / lo;
        let ds: Vec<f64> = (0..count)
            .map(|i| lo * ratio.powf((i as f64 + 0.5) / count as f64))
            .collect();
        let mut evals: Vec<(f64, usize)> = ds.par_iter().map(|&d| (d, self.claim_count(d))).collect();
        let best = argmax(&evals);
        let a = if best == 0 { lo } else { evals[best - 1].0 };
        let b = if best + 1 == count { hi } else { evals[best + 1].0 };
        let (mut a, mut b) = (a.ln(), b.ln());
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - phi * (b - a);
        let mut e = a + phi * (b - a);
        let mut fc = self.claim_count(c.exp());
        let mut fe = self.claim_count(e.exp());
        evals.push((c.exp(), fc));
        evals.push((e.exp(), fe));
        for _ in 0..grid.refinements * GOLDEN_STEPS {
            if fc >= fe {
                b = e;
                e = c;
                fe = fc;
                c = b - phi * (b - a);
                fc = self.claim_count(c.exp());
                evals.push((c.exp(), fc));
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + phi * (b - a);
                fe = self.claim_count(e.exp());
                evals.push((e.exp(), fe));
            }
        }
        evals
    }

    /// Chooses and accepts the next focal parameter. Returns `None` when no
    /// searched parameter claims any uncovered sample.
    pub fn step(&mut self, params: &CarveParams) -> Result<Option<TraceRecord>> {
        let mut evals = Vec::new();
        for retry in 0..=STALL_RETRIES {
            evals = self.search(&params.d_grid, params.d_grid.count << retry);
            if evals.iter().any(|e| e.1 > 0) {
                break;
            }
        }
        let Some(top) = evals.iter().map(|e| e.1).max().filter(|&c| c > 0) else {
            return Ok(None);
        };
        let floor = ((1.0 - params.epsilon_rule) * top as f64).ceil() as usize;
        let ceiling = self
            .trace
            .last()
            .map_or(usize::MAX, |t| (t.measure / self.weight).round() as usize);
        // largest claim not above the previous step, ties to the smaller d;
        // the unconstrained best when nothing in the slack band qualifies
        let pick = |limit: usize| {
            evals
                .iter()
                .filter(|e| e.1 <= limit && e.1 >= floor)
                .max_by(|x, y| x.1.cmp(&y.1).then(y.0.total_cmp(&x.0)))
                .copied()
        };
        let (d, claimed) = pick(ceiling).or_else(|| pick(usize::MAX)).expect("top is in range");
        let ell = Ellipsoid::new(*self.carving.target(), d)?;
        let covered = self.covered_by(&ell);
        debug_assert_eq!(covered.iter().filter(|c| **c).count(), claimed);
        let mut it = covered.iter();
        self.uncovered.retain(|_| !*it.next().unwrap());
        self.carving.push(d)?;
        let rec = TraceRecord {
            k: self.k() - 1,
            d,
            measure: claimed as f64 * self.weight,
            best_measure: top as f64 * self.weight,
            residual: self.uncovered.len() as f64 * self.weight,
        };
        self.trace.push(rec.clone());
        Ok(Some(rec))
    }

    pub fn done(&self, params: &CarveParams) -> bool {
        self.uncovered.len() as f64 <= params.stop_residual * self.samples.len() as f64
    }
}

fn argmax(evals: &[(f64, usize)]) -> usize {
    let mut best = 0;
    for (i, e) in evals.iter().enumerate() {
        if e.1 > evals[best].1 {
            best = i;
        }
    }
    best
}

/// Result of carving one conical cylinder towards one target.
#[derive(Debug, Clone)]
pub struct CarveOutcome {
    pub reflector: GeneralizedReflector,
    pub carving: Arc<Carving>,
    pub trace: Vec<TraceRecord>,
    pub aperture_measure: Estimate,
    pub residual: Estimate,
    /// False when `max_patches` stopped the loop first.
    pub converged: bool,
}

/// Patches of a finished carving, ranked from `first_priority` on.
pub fn carving_patches(carving: &Arc<Carving>, first_priority: u32) -> Vec<Patch> {
    (0..carving.len())
        .map(|j| {
            Patch::new(
                carving.ellipsoid(j).clone(),
                Region::Carved {
                    carving: carving.clone(),
                    index: j,
                },
                first_priority + j as u32,
            )
        })
        .collect()
}

pub(crate) fn carve_with_stream(
    restriction: &ConicalCylinder,
    x: &Vector3<f64>,
    g: &Radiance,
    params: &CarveParams,
    stream: u64,
) -> Result<(Arc<Carving>, CarveState, bool)> {
    params.validate()?;
    if !(x.z < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target {x:?} must lie below the source plane"
        )));
    }
    let sampler = match restriction.base.bounding_cap() {
        Some((axis, level)) => SphericalSampler::cap(params.seed, params.measure_samples, axis, level),
        None => SphericalSampler::uniform(params.seed, params.measure_samples),
    }
    .with_stream(stream);
    let mut state = CarveState::new(restriction.clone(), *x, &sampler)?;
    let lit = state.samples.iter().any(|m| g.eval(m) > 0.0);
    let mut converged = true;
    if lit {
        while !state.done(params) {
            if state.k() >= params.max_patches {
                converged = false;
                break;
            }
            if state.step(params)?.is_none() {
                return Err(Error::NoProgress {
                    iteration: state.k(),
                    residual: state.residual().mean,
                    aperture: state.aperture_measure().mean,
                    accepted: state.carving.params().to_vec(),
                });
            }
        }
    }
    Ok((Arc::new(state.carving.clone()), state, converged))
}

/// Covers the base of `restriction` with confocal ellipsoid patches aimed at
/// `x`, each carved out of the space left free by the earlier ones.
pub fn carve_single_target(
    restriction: &ConicalCylinder,
    x: &Vector3<f64>,
    g: &Radiance,
    params: &CarveParams,
) -> Result<CarveOutcome> {
    let (carving, state, converged) = carve_with_stream(restriction, x, g, params, 0)?;
    let reflector = GeneralizedReflector::new(
        carving_patches(&carving, 0),
        restriction.base.clone(),
        SpatialRestriction::ConicalCylinder(restriction.clone()),
    )?;
    Ok(CarveOutcome {
        reflector,
        carving,
        aperture_measure: state.aperture_measure(),
        residual: state.residual(),
        trace: state.trace,
        converged,
    })
}

/// Fraction of `dirs` where the projection of the free space `Q_k` (found
/// by scanning `heights` points through the slab) disagrees with the
/// aperture minus the projections of the first `k` patches.
pub fn projection_identity_disagreement(carving: &Carving, k: usize, dirs: &[Direction], heights: usize) -> f64 {
    let cyl = carving.restriction();
    let bad = dirs
        .par_iter()
        .filter(|m| {
            let in_base = cyl.base.contains(m);
            let rhs = in_base && carving.cover_upto(m, k).is_none();
            let lhs = in_base
                && m.z() > 0.0
                && (0..heights).any(|h| {
                    let z = cyl.z_prime + cyl.delta * (h as f64 + 0.5) / heights as f64;
                    carving.in_free(k, &(m.as_vec() * (z / m.z())))
                });
            lhs != rhs
        })
        .count();
    bad as f64 / dirs.len().max(1) as f64
}
