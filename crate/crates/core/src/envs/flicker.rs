//! Observation dropout: each observation is blanked with probability `p`.
//!
//! A blank is the all-zero vector with the trailing validity bit cleared;
//! genuine observations carry the bit set, so a real zero observation stays
//! distinguishable from a blank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, EnvDescriptor, Environment, InformedStep, Reset};
use crate::{Error, Result};

/// Decorrelates the blanking stream from the wrapped environment's stream.
const SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct Flicker<E> {
    inner: E,
    p: f64,
    descriptor: EnvDescriptor,
    rng: ChaCha8Rng,
}

impl<E: Environment> Flicker<E> {
    pub fn new(inner: E, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!("flicker probability {p} outside [0,1]")));
        }
        let mut descriptor = inner.descriptor().clone();
        descriptor.name = format!("flicker(p={p}):{}", descriptor.name);
        descriptor.obs_dim += 1;
        Ok(Self {
            inner,
            p,
            descriptor,
            rng: ChaCha8Rng::seed_from_u64(SEED_SALT),
        })
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn filter(&mut self, mut observation: Vec<f64>) -> Vec<f64> {
        // always consume one draw so the blanking pattern depends only on the seed
        let u: f64 = self.rng.random();
        if u < self.p {
            observation.iter_mut().for_each(|x| *x = 0.0);
            observation.push(0.0);
        } else {
            observation.push(1.0);
        }
        observation
    }
}

impl<E: Environment> Environment for Flicker<E> {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: u64) -> Reset {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ SEED_SALT);
        let mut r = self.inner.reset(seed);
        r.observation = self.filter(r.observation);
        r
    }

    fn step(&mut self, action: &Action) -> Result<InformedStep> {
        let mut s = self.inner.step(action)?;
        s.observation = self.filter(s.observation);
        Ok(s)
    }

    fn success(&self) -> Option<bool> {
        self.inner.success()
    }
}
