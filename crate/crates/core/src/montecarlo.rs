//! Counter-seeded sampling helpers.
//!
//! Work item i always draws from stream i of a ChaCha8 generator keyed by the
//! run seed, so results do not depend on how items are spread over workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::torus::Phase;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed for a named sub-experiment.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = stream_rng(seed, tag ^ 0x9e37_79b9_7f4a_7c15);
    rng.random()
}

/// Uniform phase on 𝕋^d.
pub fn sample_phase<T: Real>(rng: &mut ChaCha8Rng, dim: usize) -> Phase<T> {
    let coords: Vec<T> = (0..dim).map(|_| T::c(rng.random::<f64>())).collect();
    Phase::new(&coords)
}

/// Uniform real in [lo, hi).
pub fn sample_uniform<T: Real>(rng: &mut ChaCha8Rng, lo: T, hi: T) -> T {
    lo + (hi - lo) * T::c(rng.random::<f64>())
}

/// Sample mean and standard error (sample standard deviation / √n).
pub fn mean_and_stderr<T: Real>(v: &[T]) -> (T, T) {
    if v.is_empty() {
        return (T::nan(), T::nan());
    }
    let n = T::from_usize_lossy(v.len());
    let mean = v.iter().copied().sum::<T>() / n;
    if v.len() == 1 {
        return (mean, T::zero());
    }
    let var = v.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Wilson score interval for a binomial proportion at z = 1.96.
pub fn wilson_interval(hits: usize, samples: usize) -> (f64, f64) {
    if samples == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = samples as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Monte-Carlo estimate of the measure of a set defined by an inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSetEstimate {
    pub description: String,
    pub samples: usize,
    pub hits: usize,
    pub estimate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl ExceptionalSetEstimate {
    pub fn new(description: impl Into<String>, hits: usize, samples: usize) -> Self {
        let (lo, hi) = wilson_interval(hits, samples);
        let estimate = if samples == 0 {
            0.0
        } else {
            hits as f64 / samples as f64
        };
        Self {
            description: description.into(),
            samples,
            hits,
            estimate,
            wilson_low: lo.min(estimate),
            wilson_high: hi.max(estimate),
        }
    }
}
