//! Informed POMDP environments.
//!
//! Every environment emits, per transition, a reward, a training-only
//! information vector, an execution observation and a continuation flag.
//! [`ExecutionEnv`] is the deployment view: it forwards everything except the
//! information channel, which it has no way to expose.

mod flicker;
mod hike;
mod registry;
mod tabular;

pub use flicker::Flicker;
pub use hike::{HikeVariant, MountainHike, MountainHikeState, Orientation, HIKE_TOP};
pub use registry::{make_env, InformationBinding, ObservationAsInformation};
pub use tabular::{
    tiger, tmaze, InfoMode, TabularEnv, TabularInformedPomdp, TabularSizes, TIGER_CUE_ACCURACY,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Width of the vector fed to the networks.
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    /// One-hot for discrete actions, raw values for box actions.
    pub fn encode(&self, action: &Action) -> Result<Vec<f64>> {
        self.check(action)?;
        Ok(match action {
            Action::Discrete(a) => {
                let mut v = vec![0.0; self.encoded_dim()];
                v[*a] = 1.0;
                v
            }
            Action::Continuous(x) => x.clone(),
        })
    }

    /// The null action `a_{-1}`: all zeros.
    pub fn null(&self) -> Vec<f64> {
        vec![0.0; self.encoded_dim()]
    }

    pub fn check(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Box { low, high }, Action::Continuous(x))
                if x.len() == low.len()
                    && x
                        .iter()
                        .zip(low.iter().zip(high))
                        .all(|(v, (l, h))| *v >= *l && *v <= *h) =>
            {
                Ok(())
            }
            _ => Err(Error::Contract(format!(
                "action {action:?} outside action space {self:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub name: String,
    pub action_space: ActionSpace,
    pub obs_dim: usize,
    pub info_dim: usize,
    pub discount: f64,
}

impl EnvDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Contract(format!(
                "discount {} outside [0,1)",
                self.discount
            )));
        }
        if self.obs_dim == 0 || self.info_dim == 0 || self.action_space.encoded_dim() == 0 {
            return Err(Error::Contract("environment dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Initial training-time sample after a reset. `continuation` is always true.
#[derive(Clone, Debug, PartialEq)]
pub struct Reset {
    pub information: Vec<f64>,
    pub observation: Vec<f64>,
    pub continuation: bool,
}

/// One transition `(r_t, i_{t+1}, o_{t+1}, c_{t+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct InformedStep {
    pub reward: f64,
    pub information: Vec<f64>,
    pub observation: Vec<f64>,
    pub continuation: bool,
}

pub trait Environment: Send {
    fn descriptor(&self) -> &EnvDescriptor;

    /// Starts a fresh episode; all episode randomness derives from `seed`.
    fn reset(&mut self, seed: u64) -> Reset;

    /// Errors on out-of-range actions and on stepping a finished episode.
    fn step(&mut self, action: &Action) -> Result<InformedStep>;

    /// Task-level success of the finished episode, when the task defines one.
    fn success(&self) -> Option<bool> {
        None
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn descriptor(&self) -> &EnvDescriptor {
        (**self).descriptor()
    }
    fn reset(&mut self, seed: u64) -> Reset {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &Action) -> Result<InformedStep> {
        (**self).step(action)
    }
    fn success(&self) -> Option<bool> {
        (**self).success()
    }
}

/// Transition as seen at execution time.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecStep {
    pub reward: f64,
    pub observation: Vec<f64>,
    pub continuation: bool,
}

/// Execution-POMDP view of an informed environment.
pub struct ExecutionEnv<E> {
    inner: E,
}

impl<E: Environment> ExecutionEnv<E> {
    pub fn new(inner: E) -> Self {
        Self { inner }
    }

    pub fn descriptor(&self) -> &EnvDescriptor {
        self.inner.descriptor()
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed).observation
    }

    pub fn step(&mut self, action: &Action) -> Result<ExecStep> {
        let s = self.inner.step(action)?;
        Ok(ExecStep {
            reward: s.reward,
            observation: s.observation,
            continuation: s.continuation,
        })
    }

    pub fn success(&self) -> Option<bool> {
        self.inner.success()
    }
}

pub(crate) fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}
