//! String-addressed environment construction.
//!
//! Names: `tiger`, `tmaze-<L>`, `hike/<pos|alt>-<fixed|var>`,
//! `flicker(p=<p>):<inner>` and `tabular:<path to JSON>`.

use std::fs;

use serde::{Deserialize, Serialize};

use super::{
    tiger, tmaze, Action, EnvDescriptor, Environment, Flicker, HikeVariant, InformedStep,
    MountainHike, Reset, TabularEnv, TabularInformedPomdp,
};
use crate::{Error, Result};

const TIGER_MAX_STEPS: usize = 20;
const TABULAR_MAX_STEPS: usize = 100;

/// What the training-time information channel carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationBinding {
    /// The environment's own information.
    Informed,
    /// A copy of the observation (`i = o`): the uninformed baseline.
    Observation,
}

impl InformationBinding {
    pub fn from_informed(informed: bool) -> Self {
        if informed {
            Self::Informed
        } else {
            Self::Observation
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Informed => "informed",
            Self::Observation => "i=o",
        }
    }
}

/// Rebinds the information channel to the observation.
pub struct ObservationAsInformation<E> {
    inner: E,
    descriptor: EnvDescriptor,
}

impl<E: Environment> ObservationAsInformation<E> {
    pub fn new(inner: E) -> Self {
        let mut descriptor = inner.descriptor().clone();
        descriptor.info_dim = descriptor.obs_dim;
        Self { inner, descriptor }
    }
}

impl<E: Environment> Environment for ObservationAsInformation<E> {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: u64) -> Reset {
        let mut r = self.inner.reset(seed);
        r.information = r.observation.clone();
        r
    }

    fn step(&mut self, action: &Action) -> Result<InformedStep> {
        let mut s = self.inner.step(action)?;
        s.information = s.observation.clone();
        Ok(s)
    }

    fn success(&self) -> Option<bool> {
        self.inner.success()
    }
}

fn unknown(name: &str) -> Error {
    Error::UnknownEnv(name.to_string())
}

fn build(name: &str) -> Result<Box<dyn Environment>> {
    if name == "tiger" {
        return Ok(Box::new(
            TabularEnv::new(name, tiger())?.with_max_steps(TIGER_MAX_STEPS),
        ));
    }
    if let Some(len) = name.strip_prefix("tmaze-") {
        let length: usize = len.parse().map_err(|_| unknown(name))?;
        if length == 0 {
            return Err(unknown(name));
        }
        return Ok(Box::new(
            TabularEnv::new(name, tmaze(length))?
                .with_max_steps(4 * (length + 1))
                .with_success_reward(f64::MIN_POSITIVE),
        ));
    }
    if let Some(variant) = name.strip_prefix("hike/") {
        let (obs, start) = variant.split_once('-').ok_or_else(|| unknown(name))?;
        let altitude_obs = match obs {
            "pos" => false,
            "alt" => true,
            _ => return Err(unknown(name)),
        };
        let varying = match start {
            "fixed" => false,
            "var" => true,
            _ => return Err(unknown(name)),
        };
        return Ok(Box::new(MountainHike::new(HikeVariant {
            altitude_obs,
            varying,
        })));
    }
    if let Some(rest) = name.strip_prefix("flicker(p=") {
        let (p, inner) = rest.split_once("):").ok_or_else(|| unknown(name))?;
        let p: f64 = p.parse().map_err(|_| unknown(name))?;
        return Ok(Box::new(Flicker::new(build(inner)?, p)?));
    }
    if let Some(path) = name.strip_prefix("tabular:") {
        let pomdp = TabularInformedPomdp::from_json(&fs::read_to_string(path)?)?;
        return Ok(Box::new(
            TabularEnv::new(name, pomdp)?.with_max_steps(TABULAR_MAX_STEPS),
        ));
    }
    Err(unknown(name))
}

/// Builds the named environment with the requested information binding.
pub fn make_env(name: &str, binding: InformationBinding) -> Result<Box<dyn Environment>> {
    let env = build(name)?;
    env.descriptor().validate()?;
    Ok(match binding {
        InformationBinding::Informed => env,
        InformationBinding::Observation => Box::new(ObservationAsInformation::new(env)),
    })
}
