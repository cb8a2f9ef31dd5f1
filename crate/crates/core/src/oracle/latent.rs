//! Exact marginal likelihood and evidence lower bound of sequence models
//! with one discrete latent per step, by enumerating every latent path.

use super::DEFAULT_GUARD;
use crate::{Error, Result};

/// Quantities at step `k` given the latent values chosen at steps `< k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStep {
    /// `log p(e_k = c | past)` for every class `c`.
    pub prior_log_probs: Vec<f64>,
    /// `log q(e_k = c | past, evidence)` for every class `c`.
    pub posterior_log_probs: Vec<f64>,
    /// `log p(x_k | past, e_k = c)` for every class `c`.
    pub emission_log_density: Vec<f64>,
}

/// Sequence model whose per-step distributions depend on the latent prefix.
pub trait LatentSequenceModel {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize;

    fn step(&self, prefix: &[usize]) -> Result<LatentStep>;
}

fn check(model: &dyn LatentSequenceModel, step: &LatentStep) -> Result<()> {
    let c = model.num_classes();
    if step.prior_log_probs.len() != c
        || step.posterior_log_probs.len() != c
        || step.emission_log_density.len() != c
    {
        return Err(Error::Shape("latent step tables differ from the class count".into()));
    }
    Ok(())
}

fn guard(model: &dyn LatentSequenceModel) -> Result<()> {
    let c = model.num_classes() as u128;
    // total tree nodes Σ_k c^k
    let mut nodes: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..model.len() {
        level = level.saturating_mul(c);
        nodes = nodes.saturating_add(level);
    }
    if nodes > DEFAULT_GUARD as u128 {
        return Err(Error::GuardExceeded {
            nodes: nodes.min(usize::MAX as u128) as usize,
            limit: DEFAULT_GUARD,
        });
    }
    Ok(())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log Σ_{e_0..e_{T-1}} Π_k p(e_k | past) p(x_k | past, e_k)`.
pub fn exact_log_likelihood(model: &dyn LatentSequenceModel) -> Result<f64> {
    guard(model)?;
    fn rec(model: &dyn LatentSequenceModel, prefix: &mut Vec<usize>) -> Result<f64> {
        if prefix.len() == model.len() {
            return Ok(0.0);
        }
        let step = model.step(prefix)?;
        check(model, &step)?;
        let mut terms = Vec::with_capacity(model.num_classes());
        for c in 0..model.num_classes() {
            prefix.push(c);
            let rest = rec(model, prefix)?;
            prefix.pop();
            terms.push(step.prior_log_probs[c] + step.emission_log_density[c] + rest);
        }
        Ok(log_sum_exp(&terms))
    }
    rec(model, &mut Vec::new())
}

/// `E_q[Σ_k log p(e_k | past) + log p(x_k | past, e_k) − log q(e_k | …)]`
/// with the expectation taken exactly over every latent path.
pub fn enumerated_elbo(model: &dyn LatentSequenceModel) -> Result<f64> {
    guard(model)?;
    fn rec(model: &dyn LatentSequenceModel, prefix: &mut Vec<usize>) -> Result<f64> {
        if prefix.len() == model.len() {
            return Ok(0.0);
        }
        let step = model.step(prefix)?;
        check(model, &step)?;
        let mut total = 0.0;
        for c in 0..model.num_classes() {
            let lq = step.posterior_log_probs[c];
            let q = lq.exp();
            if q == 0.0 {
                continue;
            }
            prefix.push(c);
            let rest = rec(model, prefix)?;
            prefix.pop();
            total += q * (step.prior_log_probs[c] + step.emission_log_density[c] - lq + rest);
        }
        Ok(total)
    }
    rec(model, &mut Vec::new())
}
