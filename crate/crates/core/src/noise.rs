//! Counter-based Gaussian increments keyed by
//! `(seed, realization, channel, lane, particle, step)`.
//!
//! Every draw is a pure function of its key, so results do not depend on
//! the number of worker threads or on evaluation order.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;
use serde::Serialize;

use crate::error::{invalid, Result};

/// Step index reserved for initial-condition draws.
pub const INIT_STEP: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Idiosyncratic = 1,
    Common = 2,
    AuxCommon = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoisePlan {
    pub seed: u64,
    pub dt: f64,
    pub sigma: f64,
    pub sigma0: f64,
}

impl NoisePlan {
    pub fn new(seed: u64, dt: f64, sigma: f64, sigma0: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if !(sigma >= 0.0 && sigma.is_finite() && sigma0 >= 0.0 && sigma0.is_finite()) {
            return Err(invalid("noise intensities must be non-negative"));
        }
        Ok(Self {
            seed,
            dt,
            sigma,
            sigma0,
        })
    }

    pub fn stream(&self, realization: u64, channel: Channel, lane: u32) -> NoiseStream {
        let mut k = mix(0x6d76_636e_5f6e_6f69, self.seed);
        k = mix(k, realization);
        k = mix(k, channel as u64);
        k = mix(k, lane as u64);
        NoiseStream { key: k }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NoiseStream {
    key: u64,
}

impl NoiseStream {
    pub fn rng(&self, particle: u64, step: u64) -> SplitMix64 {
        SplitMix64::seed_from_u64(mix(mix(self.key, particle), step))
    }

    /// Standard normals for one `(particle, step)` cell.
    pub fn normals(&self, particle: u64, step: u64, out: &mut [f64]) {
        let mut rng = self.rng(particle, step);
        for o in out.iter_mut() {
            *o = rng.sample(StandardNormal);
        }
    }
}

fn mix(acc: u64, word: u64) -> u64 {
    SplitMix64::seed_from_u64(acc ^ word.rotate_left(17)).next_u64()
}
