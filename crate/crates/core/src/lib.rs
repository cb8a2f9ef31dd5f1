//! Informed world models.
//!
//! Environments expose a training-only information channel next to the
//! execution observation. A variational recurrent world model learns to
//! reconstruct that information (rather than the observation), a latent
//! actor-critic is trained on imagined rollouts, and exact tabular oracles
//! check the underlying sufficiency and information inequalities.

pub mod diff;
pub mod envs;
pub mod oracle;
pub mod worldmodel;
pub mod behavior;
pub mod trainer;
mod error;

pub use error::{Error, Result};
