//! Exact, enumeration-based reference computations on tabular informed
//! POMDPs: Bayes filtering, finite-horizon optimal values over histories and
//! over beliefs, exact conditional mutual informations, the Markov-blanket
//! factorization of the next observation, predictive-information gaps of
//! history statistics, and exact marginal likelihoods of small discrete
//! latent-variable sequence models.

mod expectimax;
mod information;
mod latent;
mod suites;

pub use expectimax::{
    belief_expectimax, brute_force_value, open_loop_value, BeliefSolution, HistoryPolicy,
    HistorySolution,
};
pub use information::{
    belief_by_conditioning, enumerate_histories, markov_blanket_check, mi_comparison,
    predictive_gap, BlanketRecord, HistoryRecord, MiRecord, Statistic,
};
pub use latent::{enumerated_elbo, exact_log_likelihood, LatentSequenceModel, LatentStep};
pub use suites::{
    run_suite, toy_latent_problem, uniform_policy, with_identity_observation, InstanceReport,
    OracleReport, SUITES,
};

use serde::{Deserialize, Serialize};

use crate::envs::TabularInformedPomdp;
use crate::{Error, Result};

/// Largest number of enumerated nodes any oracle will visit.
pub const DEFAULT_GUARD: usize = 1_000_000;

/// Beliefs closer than this (max-norm) are treated as one node.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// Probability vector over states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief(pub Vec<f64>);

impl Belief {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn close_to(&self, other: &Belief, tol: f64) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| (a - b).abs() <= tol)
    }
}

fn normalize(mut v: Vec<f64>, what: &str) -> Result<(Belief, f64)> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ImpossibleEvidence(what.to_string()));
    }
    v.iter_mut().for_each(|x| *x /= total);
    Ok((Belief(v), total))
}

/// One-step state prediction `Σ_s T(s'|s,a) b(s)`.
pub(crate) fn predict(pomdp: &TabularInformedPomdp, b: &[f64], a: usize) -> Vec<f64> {
    let mut out = vec![0.0; pomdp.num_states];
    for (s, &bs) in b.iter().enumerate() {
        if bs == 0.0 {
            continue;
        }
        for (sp, o) in out.iter_mut().enumerate() {
            *o += pomdp.transition[s][a][sp] * bs;
        }
    }
    out
}

fn check_action_obs(pomdp: &TabularInformedPomdp, a: Option<usize>, o: usize) -> Result<()> {
    if a.is_some_and(|a| a >= pomdp.num_actions) || o >= pomdp.num_obs {
        return Err(Error::Contract(format!(
            "action {a:?} or observation {o} out of range"
        )));
    }
    Ok(())
}

/// Belief after the first observation: `b_0(s) ∝ P(s) O(o_0|s)`.
pub fn initial_belief(pomdp: &TabularInformedPomdp, o: usize) -> Result<Belief> {
    check_action_obs(pomdp, None, o)?;
    let v = (0..pomdp.num_states)
        .map(|s| pomdp.initial[s] * pomdp.obs_given_state(s, o))
        .collect();
    Ok(normalize(v, &format!("initial observation {o} has probability zero"))?.0)
}

/// Bayes filter: `b'(s') ∝ O(o|s') Σ_s T(s'|s,a) b(s)` with the execution
/// observation model `O(o|s') = Σ_i Õ(o|i) Ĩ(i|s')`.
pub fn belief_update(pomdp: &TabularInformedPomdp, b: &Belief, a: usize, o: usize) -> Result<Belief> {
    check_action_obs(pomdp, Some(a), o)?;
    if b.0.len() != pomdp.num_states {
        return Err(Error::Shape("belief length differs from |S|".into()));
    }
    let pred = predict(pomdp, &b.0, a);
    let v = pred
        .iter()
        .enumerate()
        .map(|(s, p)| pomdp.obs_given_state(s, o) * p)
        .collect();
    Ok(normalize(v, &format!("observation {o} after action {a} has probability zero"))?.0)
}
