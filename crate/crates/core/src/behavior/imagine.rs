//! Latent rollouts under the prior and the policy.

use rand::Rng;

use super::policy::{Critic, Policy};
use crate::diff::{reparam_sample, Bound, LatentNoise, Tape, Tensor, Var};
use crate::worldmodel::{Dynamics, Encoded, SequenceBatch};
use crate::{Error, Result};

/// Start triples `(z_{-1}, e_{-1}, a_{-1})`, one row per start, plus the
/// padding mask of the window entry each start came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Starts {
    pub z: Tensor,
    pub e: Tensor,
    pub a: Tensor,
    pub mask: Tensor,
}

fn stack(parts: &[&Tensor]) -> Tensor {
    let rows: Vec<&[f64]> = parts
        .iter()
        .flat_map(|t| (0..t.rows()).map(move |r| t.row_slice(r)))
        .collect();
    Tensor::from_rows(&rows)
}

impl Starts {
    /// Every `(w, n)` pair of an encoded batch, time-major: entry `w` holds
    /// the statistic, latent and action that produce `z_w`.
    pub fn from_encoded(tape: &Tape, enc: &Encoded, batch: &SequenceBatch) -> Result<Self> {
        if enc.z.len() != batch.len() || batch.is_empty() {
            return Err(Error::Shape("encoding and batch lengths differ".into()));
        }
        let z: Vec<&Tensor> = enc.z.iter().map(|&v| tape.value(v)).collect();
        let e: Vec<&Tensor> = enc.e.iter().map(|&v| tape.value(v)).collect();
        let a: Vec<&Tensor> = batch.prev_actions.iter().collect();
        let m: Vec<&Tensor> = batch.mask.iter().collect();
        Ok(Self {
            z: stack(&z),
            e: stack(&e),
            a: stack(&a),
            mask: stack(&m),
        })
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of starts that are not padding.
    pub fn valid(&self) -> f64 {
        self.mask.sum()
    }
}

/// Policy and prior randomness for `K` imagined steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaginationNoise {
    pub action: Vec<LatentNoise>,
    pub latent: Vec<LatentNoise>,
}

impl ImaginationNoise {
    pub fn sample(rng: &mut impl Rng, dynamics: &Dynamics<'_>, policy: &Policy, batch: usize, horizon: usize) -> Self {
        let mut action = Vec::with_capacity(horizon);
        let mut latent = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            action.push(policy.noise(rng, batch));
            latent.push(dynamics.latent().noise(rng, batch));
        }
        Self { action, latent }
    }
}

/// Rollout handles on the tape; every vector has length `K`.
#[derive(Clone, Debug)]
pub struct ImaginedVars {
    pub z: Vec<Var>,
    pub e: Vec<Var>,
    pub actions: Vec<Var>,
    pub log_probs: Vec<Var>,
    pub entropies: Vec<Var>,
    /// Predicted rewards in raw space.
    pub rewards: Vec<Var>,
    /// Predicted continuation probabilities.
    pub conts: Vec<Var>,
}

/// Imagined trajectories as plain values; every vector has length `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaginedTrajectory {
    pub z: Vec<Tensor>,
    pub e: Vec<Tensor>,
    pub actions: Vec<Tensor>,
    pub rewards: Vec<Tensor>,
    pub conts: Vec<Tensor>,
    pub values: Vec<Tensor>,
}

/// For `k = 0..K`: `z_k = u(z_{k-1}, a_{k-1}, ê_{k-1})`, `a_k ~ g(· | z_k)`,
/// `ê_k ~ q^p(· | z_k, a_k)`, and the reward and continuation decoded from
/// `(z_k, ê_k)`. Only the prior side of the world model is reachable here.
#[allow(clippy::too_many_arguments)]
pub fn imagine_on_tape(
    tape: &mut Tape,
    dynamics: &Dynamics<'_>,
    wp: &Bound,
    policy: &Policy,
    pp: &Bound,
    starts: &Starts,
    horizon: usize,
    noise: &ImaginationNoise,
) -> Result<ImaginedVars> {
    if horizon < 1 {
        return Err(Error::Contract("imagination horizon must be at least 1".into()));
    }
    if noise.action.len() != horizon || noise.latent.len() != horizon {
        return Err(Error::Shape(format!(
            "{} action and {} latent noise draws for horizon {horizon}",
            noise.action.len(),
            noise.latent.len()
        )));
    }
    let n = starts.len();
    if starts.z.shape() != (n, dynamics.z_dim())
        || starts.e.shape() != (n, dynamics.latent().sample_dim())
        || starts.a.shape() != (n, dynamics.action_dim())
    {
        return Err(Error::Shape("imagination starts do not match the world model".into()));
    }
    let mut out = ImaginedVars {
        z: Vec::with_capacity(horizon),
        e: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        log_probs: Vec::with_capacity(horizon),
        entropies: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        conts: Vec::with_capacity(horizon),
    };
    let mut z_prev = tape.constant(starts.z.clone());
    let mut e_prev = tape.constant(starts.e.clone());
    let mut a_prev = tape.constant(starts.a.clone());
    for k in 0..horizon {
        let z = dynamics.recur(tape, wp, z_prev, a_prev, e_prev);
        let act = policy.act(tape, pp, z, &noise.action[k])?;
        let prior = dynamics.prior(tape, wp, z, act.action)?;
        let e = reparam_sample(tape, &prior, &noise.latent[k])?;
        let heads = dynamics.heads(tape, wp, z, e);
        out.rewards.push(tape.symexp(heads.reward_mean));
        out.conts.push(tape.sigmoid(heads.cont_logit));
        out.z.push(z);
        out.e.push(e);
        out.actions.push(act.action);
        out.log_probs.push(act.log_prob);
        out.entropies.push(act.entropy);
        (z_prev, e_prev, a_prev) = (z, e, act.action);
    }
    Ok(out)
}

/// Value-only rollout with critic estimates `v(z_k)` attached.
pub fn imagine(
    dynamics: &Dynamics<'_>,
    policy: &Policy,
    critic: &Critic,
    starts: &Starts,
    horizon: usize,
    noise: &ImaginationNoise,
) -> Result<ImaginedTrajectory> {
    let mut tape = Tape::new();
    let wp = dynamics.bind(&mut tape);
    let pp = policy.bind(&mut tape, false);
    let vars = imagine_on_tape(&mut tape, dynamics, &wp, policy, &pp, starts, horizon, noise)?;
    let read = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
    let z = read(&vars.z);
    let values = z.iter().map(|z| critic.values(z)).collect();
    Ok(ImaginedTrajectory {
        e: read(&vars.e),
        actions: read(&vars.actions),
        rewards: read(&vars.rewards),
        conts: read(&vars.conts),
        z,
        values,
    })
}
