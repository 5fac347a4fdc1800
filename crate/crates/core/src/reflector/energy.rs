use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeneralizedReflector, MapOutcome};
use crate::error::{Error, Result};
use crate::sphere::{Direction, Estimate, Radiance, SphericalSampler};

/// Where a sample's energy goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bin {
    Target(usize),
    Blocked,
    Lost,
}

/// Running sums of per-sample weighted values routed to one bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinSums {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: u64,
}

impl BinSums {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
        self.count += 1;
    }

    fn merge(&mut self, o: &BinSums) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.count += o.count;
    }
}

/// Per-sample energy routing over one sample stream. Every sample with
/// positive radiance lands in exactly one bin, so bins add up to the
/// radiance total on the same samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTally {
    pub targets: Vec<Vector3<f64>>,
    pub per_target: Vec<BinSums>,
    pub blocked: BinSums,
    pub lost: BinSums,
    /// Samples where the radiance vanishes; they carry no energy.
    pub dark: u64,
    pub samples: usize,
}

impl EnergyTally {
    pub fn collect<F>(targets: &[Vector3<f64>], g: &Radiance, sampler: &SphericalSampler, classify: F) -> Self
    where
        F: Fn(&Direction) -> Bin + Sync + Send,
    {
        let n = targets.len();
        let area = sampler.area();
        let empty = || {
            (
                vec![BinSums::default(); n],
                BinSums::default(),
                BinSums::default(),
                0u64,
            )
        };
        let (per_target, blocked, lost, dark) = sampler.fold(
            empty,
            |acc, _, m| {
                let w = g.eval(m);
                if w <= 0.0 {
                    acc.3 += 1;
                    return;
                }
                let v = area * w;
                match classify(m) {
                    Bin::Target(i) => acc.0[i].add(v),
                    Bin::Blocked => acc.1.add(v),
                    Bin::Lost => acc.2.add(v),
                }
            },
            |mut a, b| {
                for (x, y) in a.0.iter_mut().zip(&b.0) {
                    x.merge(y);
                }
                a.1.merge(&b.1);
                a.2.merge(&b.2);
                a.3 += b.3;
                a
            },
        );
        EnergyTally {
            targets: targets.to_vec(),
            per_target,
            blocked,
            lost,
            dark,
            samples: sampler.count,
        }
    }

    fn estimate(&self, s: &BinSums) -> Estimate {
        Estimate::from_sums(s.sum, s.sum_sq, self.samples)
    }

    pub fn target(&self, i: usize) -> Estimate {
        self.estimate(&self.per_target[i])
    }

    pub fn blocked_energy(&self) -> Estimate {
        self.estimate(&self.blocked)
    }

    pub fn lost_energy(&self) -> Estimate {
        self.estimate(&self.lost)
    }

    /// Energy reaching the targets with the given indices.
    pub fn energy(&self, omega: &[usize]) -> Estimate {
        let mut s = BinSums::default();
        for &i in omega {
            s.merge(&self.per_target[i]);
        }
        self.estimate(&s)
    }

    pub fn all_targets(&self) -> Estimate {
        let all: Vec<usize> = (0..self.targets.len()).collect();
        self.energy(&all)
    }

    /// Radiance total over the same samples.
    pub fn total(&self) -> Estimate {
        let mut s = self.blocked;
        s.merge(&self.lost);
        for b in &self.per_target {
            s.merge(b);
        }
        self.estimate(&s)
    }

    pub fn index_of(&self, x: &Vector3<f64>) -> Option<usize> {
        self.targets
            .iter()
            .position(|t| (t - x).norm() <= 1e-12 * x.norm().max(1.0))
    }
}

/// Tally of the generalized reflector map over `sampler`.
pub fn energy_g1(r: &GeneralizedReflector, g: &Radiance, sampler: &SphericalSampler) -> EnergyTally {
    EnergyTally::collect(r.targets(), g, sampler, |m| match r.alpha1(m) {
        MapOutcome::Target { patch } => Bin::Target(r.target_index_of_patch(patch)),
        MapOutcome::Blocked { .. } => Bin::Blocked,
        MapOutcome::Undefined => Bin::Lost,
    })
}

/// Finite target set with the energy each point must receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPrescription {
    pub points: Vec<Vector3<f64>>,
    pub energies: Vec<f64>,
}

impl TargetPrescription {
    pub fn new(points: Vec<Vector3<f64>>, energies: Vec<f64>) -> Result<Self> {
        if points.len() != energies.len() {
            return Err(Error::InvalidParameter(format!(
                "{} target points but {} energies",
                points.len(),
                energies.len()
            )));
        }
        if let Some(f) = energies.iter().find(|f| !(**f >= 0.0) || !f.is_finite()) {
            return Err(Error::InvalidParameter(format!("negative or non-finite energy {f}")));
        }
        Ok(TargetPrescription { points, energies })
    }

    pub fn empty() -> Self {
        TargetPrescription {
            points: Vec::new(),
            energies: Vec::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.energies.iter().sum()
    }

    /// Total energy conservation against the radiance mass of the aperture.
    pub fn check_conservation(&self, available: f64) -> Result<()> {
        let total = self.total();
        if (total - available).abs() > 1e-6 * available.abs().max(total.abs()) {
            return Err(Error::ConservationViolated {
                prescribed: total,
                available,
            });
        }
        Ok(())
    }

    pub fn index_of(&self, x: &Vector3<f64>) -> Option<usize> {
        self.points
            .iter()
            .position(|t| (t - x).norm() <= 1e-12 * x.norm().max(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakSolutionReport {
    pub pass: bool,
    /// `G({x_i}) - f_i` in prescription order.
    pub deltas: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Energy sent to reflector targets absent from the prescription.
    pub unprescribed: f64,
    pub blocked: f64,
    pub lost: f64,
    pub total: f64,
}

/// Per-point comparison of a tally with a prescription:
/// `|G_i - f_i| <= tol max(f_i, total / |T|) + 3 SE_i` and blocked energy at
/// most `tol` of the total.
pub fn compare_with_prescription(t: &EnergyTally, f: &TargetPrescription, tol: f64) -> WeakSolutionReport {
    let total = t.total().mean;
    let share = total / f.points.len().max(1) as f64;
    let mut pass = true;
    let mut deltas = Vec::with_capacity(f.points.len());
    let mut std_errors = Vec::with_capacity(f.points.len());
    for (x, fi) in f.points.iter().zip(&f.energies) {
        let est = t.index_of(x).map(|i| t.target(i)).unwrap_or(Estimate::zero());
        let delta = est.mean - fi;
        if delta.abs() > tol * fi.max(share) + 3.0 * est.std_error {
            pass = false;
        }
        deltas.push(delta);
        std_errors.push(est.std_error);
    }
    let unprescribed: f64 = (0..t.targets.len())
        .filter(|&i| f.index_of(&t.targets[i]).is_none())
        .map(|i| t.target(i).mean)
        .sum();
    let blocked = t.blocked_energy().mean;
    if blocked > tol * total || unprescribed > tol * total {
        pass = false;
    }
    WeakSolutionReport {
        pass,
        deltas,
        std_errors,
        unprescribed,
        blocked,
        lost: t.lost_energy().mean,
        total,
    }
}

pub fn is_weak_solution(
    r: &GeneralizedReflector,
    g: &Radiance,
    f: &TargetPrescription,
    tol: f64,
    sampler: &SphericalSampler,
) -> WeakSolutionReport {
    compare_with_prescription(&energy_g1(r, g, sampler), f, tol)
}
