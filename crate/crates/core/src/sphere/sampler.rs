use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cap_area, Direction, SPHERE_AREA};

/// Samples per independently keyed block. Fixed so results do not depend
/// on how blocks are spread over workers.
pub const CHUNK: usize = 4096;

/// ChaCha words consumed per sample (two `u64` draws).
const WORDS_PER_SAMPLE: u128 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleScheme {
    UniformSphere,
    /// Uniform over the cap `<axis, m> > level`, stratified in `<axis, m>`
    /// by sample index.
    StratifiedCap {
        axis: Direction,
        level: f64,
    },
}

/// Reproducible stream of sample directions keyed by `(seed, stream)`.
/// Sample `i` depends only on the key and `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalSampler {
    pub seed: u64,
    pub count: usize,
    pub scheme: SampleScheme,
    #[serde(default)]
    pub stream: u64,
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// From the sum and sum of squares of `n` per-sample values.
    pub fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        if n == 0 {
            return Estimate {
                mean: 0.0,
                std_error: 0.0,
            };
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_error: (var / nf).sqrt(),
        }
    }

    pub fn zero() -> Self {
        Estimate {
            mean: 0.0,
            std_error: 0.0,
        }
    }
}

impl SphericalSampler {
    pub fn uniform(seed: u64, count: usize) -> Self {
        SphericalSampler {
            seed,
            count,
            scheme: SampleScheme::UniformSphere,
            stream: 0,
        }
    }

    pub fn cap(seed: u64, count: usize, axis: Direction, level: f64) -> Self {
        SphericalSampler {
            seed,
            count,
            scheme: SampleScheme::StratifiedCap { axis, level },
            stream: 0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    /// Area of the sampled domain; every sample carries weight `area / count`.
    pub fn area(&self) -> f64 {
        match self.scheme {
            SampleScheme::UniformSphere => SPHERE_AREA,
            SampleScheme::StratifiedCap { level, .. } => cap_area(level),
        }
    }

    fn chunk_rng(&self, chunk: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(chunk as u128 * CHUNK as u128 * WORDS_PER_SAMPLE);
        rng
    }

    fn draw(&self, rng: &mut ChaCha8Rng, index: usize) -> Direction {
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let phi = TAU * r2;
        match self.scheme {
            SampleScheme::UniformSphere => Direction::from_axis_coords(&Direction::Z, 2.0 * r1 - 1.0, phi),
            SampleScheme::StratifiedCap { axis, level } => {
                let u = level + (1.0 - level) * (index as f64 + r1) / self.count as f64;
                Direction::from_axis_coords(&axis, u.min(1.0), phi)
            }
        }
    }

    fn num_chunks(&self) -> usize {
        self.count.div_ceil(CHUNK)
    }

    /// Parallel fold over all samples. Each fixed-size chunk is folded in
    /// index order and chunk results are merged left to right, so the result
    /// is bit-identical for any worker count.
    pub fn fold<A, I, S, M>(&self, init: I, step: S, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        S: Fn(&mut A, usize, &Direction) + Sync + Send,
        M: Fn(A, A) -> A,
    {
        let parts: Vec<A> = (0..self.num_chunks())
            .into_par_iter()
            .map(|c| {
                let mut rng = self.chunk_rng(c);
                let mut acc = init();
                let start = c * CHUNK;
                let end = (start + CHUNK).min(self.count);
                for i in start..end {
                    let m = self.draw(&mut rng, i);
                    step(&mut acc, i, &m);
                }
                acc
            })
            .collect();
        parts.into_iter().fold(init(), merge)
    }

    /// All sample directions in index order.
    pub fn directions(&self) -> Vec<Direction> {
        let parts: Vec<Vec<Direction>> = (0..self.num_chunks())
            .into_par_iter()
            .map(|c| {
                let mut rng = self.chunk_rng(c);
                let start = c * CHUNK;
                let end = (start + CHUNK).min(self.count);
                (start..end).map(|i| self.draw(&mut rng, i)).collect()
            })
            .collect();
        parts.concat()
    }

    /// Estimate of the integral of `f` over the sampled domain.
    pub fn estimate<F>(&self, f: F) -> Estimate
    where
        F: Fn(&Direction) -> f64 + Sync + Send,
    {
        let area = self.area();
        let (sum, sum_sq) = self.fold(
            || (0.0, 0.0),
            |acc, _, m| {
                let v = area * f(m);
                acc.0 += v;
                acc.1 += v * v;
            },
            |a, b| (a.0 + b.0, a.1 + b.1),
        );
        Estimate::from_sums(sum, sum_sq, self.count)
    }
}
