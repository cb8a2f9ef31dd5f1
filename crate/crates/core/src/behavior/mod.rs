//! Behaviour learning in latent space: a policy and a critic over the
//! statistic `z`, trained on imagined rollouts of the world model.
//!
//! Discrete policies follow REINFORCE with the critic as baseline and an
//! entropy bonus; box policies ascend the λ-return directly through
//! reparameterized actions and the (frozen) latent dynamics.

mod imagine;
mod policy;
mod returns;

pub use imagine::{imagine, imagine_on_tape, ImaginationNoise, ImaginedTrajectory, ImaginedVars, Starts};
pub use policy::{ActVars, Critic, Policy};
pub use returns::{lambda_returns, lambda_returns_batch, lambda_returns_tape};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{optimizer_step, symlog, AdamConfig, OptimizerState, Tape, Tensor, Var};
use crate::envs::ActionSpace;
use crate::worldmodel::Dynamics;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Imagination horizon `K`.
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_weight: f64,
    /// Decay of the running return percentiles.
    pub return_decay: f64,
    pub actor: AdamConfig,
    pub critic: AdamConfig,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 1,
            horizon: 8,
            gamma: 0.997,
            lambda: 0.95,
            entropy_weight: 3e-4,
            return_decay: 0.99,
            actor: AdamConfig {
                lr: 1e-4,
                ..AdamConfig::default()
            },
            critic: AdamConfig {
                lr: 1e-4,
                ..AdamConfig::default()
            },
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.hidden < 1 {
            return Err(Error::Config("imagination horizon and hidden width must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "γ={} must lie in [0,1) and λ={} in [0,1]",
                self.gamma, self.lambda
            )));
        }
        if !(self.entropy_weight >= 0.0) || !(0.0..1.0).contains(&self.return_decay) {
            return Err(Error::Config("entropy weight must be ≥ 0 and return decay in [0,1)".into()));
        }
        Ok(())
    }
}

/// Running 5th and 95th percentiles of imagined returns; advantages are
/// divided by `max(1, P95 − P5)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReturnScale {
    pub low: f64,
    pub high: f64,
    pub initialized: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ReturnScale {
    pub fn update(&mut self, returns: &[f64], decay: f64) {
        if returns.is_empty() {
            return;
        }
        let mut s = returns.to_vec();
        s.sort_by(f64::total_cmp);
        let (lo, hi) = (percentile(&s, 0.05), percentile(&s, 0.95));
        if self.initialized {
            self.low = decay * self.low + (1.0 - decay) * lo;
            self.high = decay * self.high + (1.0 - decay) * hi;
        } else {
            (self.low, self.high, self.initialized) = (lo, hi, true);
        }
    }

    pub fn scale(&self) -> f64 {
        (self.high - self.low).max(1.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    /// Value of the minimized policy loss.
    pub loss: f64,
    pub entropy: f64,
    pub mean_return: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct PolicyOutcome {
    pub report: PolicyReport,
    /// The rollout the update used, for the critic step.
    pub trajectory: ImaginedTrajectory,
    /// λ-returns `G_k`, each `starts × 1`.
    pub targets: Vec<Tensor>,
}

fn masked_mean_of(tape: &mut Tape, per_step: &[Var], mask: &Tensor) -> Result<Var> {
    let valid = mask.sum();
    if valid == 0.0 || per_step.is_empty() {
        return Err(Error::Contract("no valid imagination starts".into()));
    }
    let m = tape.constant(mask.clone());
    let mut acc: Option<Var> = None;
    for &v in per_step {
        let masked = tape.mul(v, m);
        let s = tape.sum(masked);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    Ok(tape.scale(acc.expect("non-empty"), 1.0 / (valid * per_step.len() as f64)))
}

/// Discrete-action loss
/// `−mean_k,n m·(log g(a_k|z_k)·A_k + η·H[g(·|z_k)])` for fixed advantages.
pub fn reinforce_loss(
    tape: &mut Tape,
    vars: &ImaginedVars,
    advantages: &[Tensor],
    mask: &Tensor,
    entropy_weight: f64,
) -> Result<Var> {
    if advantages.len() != vars.log_probs.len() {
        return Err(Error::Shape("one advantage per imagined step required".into()));
    }
    let mut terms = Vec::with_capacity(advantages.len());
    for (k, adv) in advantages.iter().enumerate() {
        let a = tape.constant(adv.clone());
        let pg = tape.mul(vars.log_probs[k], a);
        let ent = tape.scale(vars.entropies[k], entropy_weight);
        let t = tape.add(pg, ent);
        terms.push(tape.neg(t));
    }
    masked_mean_of(tape, &terms, mask)
}

/// One policy step on fresh imagination from `starts`. Only the policy
/// parameters change; the world model and critic are read as constants.
#[allow(clippy::too_many_arguments)]
pub fn policy_update(
    policy: &mut Policy,
    optimizer: &mut OptimizerState,
    dynamics: &Dynamics<'_>,
    critic: &Critic,
    starts: &Starts,
    noise: &ImaginationNoise,
    config: &BehaviorConfig,
    scale: &mut ReturnScale,
) -> Result<PolicyOutcome> {
    let k = config.horizon;
    let mut tape = Tape::new();
    let wp = dynamics.bind(&mut tape);
    let pp = policy.bind(&mut tape, true);
    let cp = critic.bind(&mut tape, false);
    let vars = imagine_on_tape(&mut tape, dynamics, &wp, policy, &pp, starts, k, noise)?;
    let values: Vec<Var> = vars.z.iter().map(|&z| critic.value(&mut tape, &cp, z)).collect();
    let read = |tape: &Tape, vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
    let value_t = read(&tape, &values);
    let targets = lambda_returns_batch(
        &read(&tape, &vars.rewards),
        &read(&tape, &vars.conts),
        &value_t,
        config.gamma,
        config.lambda,
    )?;
    let valid_returns: Vec<f64> = targets
        .iter()
        .flat_map(|g| {
            g.data()
                .iter()
                .zip(starts.mask.data())
                .filter(|(_, &m)| m > 0.0)
                .map(|(&x, _)| x)
        })
        .collect();
    if valid_returns.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("imagined λ-returns".into()));
    }
    scale.update(&valid_returns, config.return_decay);
    let s = scale.scale();
    let loss = match policy.space {
        ActionSpace::Discrete(_) => {
            let adv: Vec<Tensor> = targets
                .iter()
                .zip(&value_t)
                .map(|(g, v)| g.zip_map(v, |g, v| (g - v) / s))
                .collect();
            reinforce_loss(&mut tape, &vars, &adv, &starts.mask, config.entropy_weight)?
        }
        ActionSpace::Box { .. } => {
            let g = lambda_returns_tape(&mut tape, &vars.rewards, &vars.conts, &values, config.gamma, config.lambda)?;
            let mut terms = Vec::with_capacity(k);
            for (gk, hk) in g.iter().zip(&vars.entropies) {
                let a = tape.scale(*gk, 1.0 / s);
                let b = tape.scale(*hk, config.entropy_weight);
                let t = tape.add(a, b);
                terms.push(tape.neg(t));
            }
            masked_mean_of(&mut tape, &terms, &starts.mask)?
        }
    };
    let loss_value = tape.item(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("policy loss".into()));
    }
    let entropy_vars = vars.entropies.clone();
    let entropy = masked_mean_of(&mut tape, &entropy_vars, &starts.mask)?;
    let entropy = tape.item(entropy);
    tape.backward(loss)?;
    let grads = policy.params.grads(&tape, &pp);
    let step = optimizer_step(&mut policy.params, &grads, optimizer)?;
    let valid = starts.valid() * k as f64;
    let trajectory = ImaginedTrajectory {
        z: read(&tape, &vars.z),
        e: read(&tape, &vars.e),
        actions: read(&tape, &vars.actions),
        rewards: read(&tape, &vars.rewards),
        conts: read(&tape, &vars.conts),
        values: value_t,
    };
    Ok(PolicyOutcome {
        report: PolicyReport {
            loss: loss_value,
            entropy,
            mean_return: valid_returns.iter().sum::<f64>() / valid,
            grad_norm: step.grad_norm,
        },
        trajectory,
        targets,
    })
}

/// Symlog-space regression `½·mean m·(v(z_k) − symlog G_k)²`, on the tape.
pub fn critic_loss(tape: &mut Tape, critic: &Critic, cp: &crate::diff::Bound, z: &[Tensor], targets: &[Tensor], mask: &Tensor) -> Result<Var> {
    if z.len() != targets.len() {
        return Err(Error::Shape("one target per imagined statistic required".into()));
    }
    let mut terms = Vec::with_capacity(z.len());
    for (zk, gk) in z.iter().zip(targets) {
        let zv = tape.constant(zk.clone());
        let pred = critic.forward(tape, cp, zv);
        let t = tape.constant(gk.map(symlog));
        let d = tape.sub(pred, t);
        let sq = tape.square(d);
        terms.push(tape.scale(sq, 0.5));
    }
    masked_mean_of(tape, &terms, mask)
}

/// One critic step towards fixed targets; returns the loss before the step.
pub fn critic_update(
    critic: &mut Critic,
    optimizer: &mut OptimizerState,
    z: &[Tensor],
    targets: &[Tensor],
    mask: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let cp = critic.bind(&mut tape, true);
    let loss = critic_loss(&mut tape, critic, &cp, z, targets, mask)?;
    let value = tape.item(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    tape.backward(loss)?;
    let grads = critic.params.grads(&tape, &cp);
    optimizer_step(&mut critic.params, &grads, optimizer)?;
    Ok(value)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub policy: PolicyReport,
    pub critic_loss: f64,
}

/// Policy, critic, their optimizers and the return normalizer.
#[derive(Clone, Debug)]
pub struct Behavior {
    pub config: BehaviorConfig,
    pub policy: Policy,
    pub critic: Critic,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub scale: ReturnScale,
}

impl Behavior {
    pub fn new(space: ActionSpace, z_dim: usize, config: BehaviorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let policy = Policy::new(space, z_dim, config.hidden, config.layers, rng)?;
        let critic = Critic::new(z_dim, config.hidden, config.layers, rng);
        let actor_opt = OptimizerState::new("policy", &policy.params, config.actor);
        let critic_opt = OptimizerState::new("critic", &critic.params, config.critic);
        Ok(Self {
            config,
            policy,
            critic,
            actor_opt,
            critic_opt,
            scale: ReturnScale::default(),
        })
    }

    /// Imagines from `starts`, then updates the policy and the critic.
    pub fn update(&mut self, dynamics: &Dynamics<'_>, starts: &Starts, rng: &mut impl Rng) -> Result<BehaviorReport> {
        let noise = ImaginationNoise::sample(rng, dynamics, &self.policy, starts.len(), self.config.horizon);
        let out = policy_update(
            &mut self.policy,
            &mut self.actor_opt,
            dynamics,
            &self.critic,
            starts,
            &noise,
            &self.config,
            &mut self.scale,
        )?;
        let critic_loss = critic_update(
            &mut self.critic,
            &mut self.critic_opt,
            &out.trajectory.z,
            &out.targets,
            &starts.mask,
        )?;
        Ok(BehaviorReport {
            policy: out.report,
            critic_loss,
        })
    }
}
