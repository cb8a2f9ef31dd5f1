//! Variational recurrent world model.
//!
//! A deterministic statistic `z` is updated by a gated recurrent cell from
//! the previous action and a stochastic latent `e`. The encoder
//! `q^e(e | z, a, o')` sees the next observation, the prior `q^p(e | z, a)`
//! does not. Decoders read `(z, e)` and predict the next information vector,
//! the reward and the continuation flag. Nothing ever reconstructs the
//! observation.

mod batch;
mod enumerate;

pub use batch::{SequenceBatch, Window, WindowEntry};
pub use enumerate::{exact_elbo, SequenceAdapter};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::dist::kl_latent;
use crate::diff::{
    reparam_sample, symexp, Bound, CategoricalLatent, DiagGaussian, GruCell, LatentDist,
    LatentNoise, Linear, Mlp, ParamSet, Tape, Tensor, Var,
};
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentKind {
    Gaussian { dim: usize },
    Categorical { groups: usize, classes: usize },
}

impl LatentKind {
    /// Width of a latent sample.
    pub fn sample_dim(self) -> usize {
        match self {
            LatentKind::Gaussian { dim } => dim,
            LatentKind::Categorical { groups, classes } => groups * classes,
        }
    }

    /// Width of the network output parameterizing the distribution.
    pub fn param_dim(self) -> usize {
        match self {
            LatentKind::Gaussian { dim } => 2 * dim,
            LatentKind::Categorical { groups, classes } => groups * classes,
        }
    }

    pub fn noise(self, rng: &mut impl Rng, batch: usize) -> LatentNoise {
        match self {
            LatentKind::Gaussian { dim } => LatentNoise::gaussian(rng, batch, dim),
            LatentKind::Categorical { groups, .. } => LatentNoise::categorical(rng, batch, groups),
        }
    }

    fn dist(self, tape: &mut Tape, raw: Var) -> Result<LatentDist> {
        match self {
            LatentKind::Gaussian { dim } => {
                let mean = tape.slice_cols(raw, 0, dim);
                let std = tape.slice_cols(raw, dim, dim);
                Ok(LatentDist::Gaussian(DiagGaussian::from_raw(tape, mean, std)))
            }
            LatentKind::Categorical { groups, classes } => Ok(LatentDist::Categorical(
                CategoricalLatent::new(tape, raw, groups, classes)?,
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModelConfig {
    pub z_dim: usize,
    pub hidden: usize,
    /// Hidden layers per network head.
    pub layers: usize,
    pub latent: LatentKind,
    /// Weight of the prior-training KL term.
    pub kl_balance: f64,
    /// Per-step floor (nats) of each KL term.
    pub free_bits: f64,
    pub cont_weight: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            z_dim: 128,
            hidden: 128,
            layers: 1,
            latent: LatentKind::Categorical {
                groups: 8,
                classes: 8,
            },
            kl_balance: 0.8,
            free_bits: 1.0,
            cont_weight: 1.0,
        }
    }
}

impl WorldModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.hidden == 0 || self.latent.sample_dim() == 0 {
            return Err(Error::Config("world model widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_balance) {
            return Err(Error::Config(format!("kl_balance {} outside [0,1]", self.kl_balance)));
        }
        if !(self.free_bits >= 0.0) || !(self.cont_weight >= 0.0) {
            return Err(Error::Config("free_bits and cont_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Interface widths taken from the environment descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub action: usize,
    pub obs: usize,
    pub info: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Nets {
    encoder: Mlp,
    prior: Mlp,
    rec_in: Linear,
    gru: GruCell,
    info_head: Mlp,
    reward_head: Mlp,
    cont_head: Mlp,
}

/// Architecture plus the parameter set `θ`.
#[derive(Clone, Debug)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    pub dims: ModelDims,
    pub params: ParamSet,
    nets: Nets,
}

/// Symlog-space decoder outputs on the tape.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub info_mean: Var,
    pub reward_mean: Var,
    pub cont_logit: Var,
}

/// Decoder predictions in raw space.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedHeads {
    pub reward_mean: Tensor,
    pub info_mean: Tensor,
    pub cont_prob: Tensor,
}

/// Output of [`WorldModel::encode_sequence`]. Index `w` holds the pair
/// `(z_{w-1}, e_{w-1})` and the posterior `e_{w-1}` was drawn from, for
/// `w = 0..W`.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub z: Vec<Var>,
    pub e: Vec<Var>,
    pub posterior: Vec<LatentDist>,
    /// `z_{W-1}`, the statistic after the last entry.
    pub z_last: Var,
}

/// Loss components on the tape, each a masked mean over batch and time.
#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub total: Var,
    pub info_nll: Var,
    pub reward_nll: Var,
    pub cont_nll: Var,
    /// Unregularized `KL(q^e ∥ q^p)`.
    pub kl: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub info_nll: f64,
    pub reward_nll: f64,
    pub cont_nll: f64,
    pub kl: f64,
    /// `info_nll + reward_nll + cont_weight·cont_nll + regularized KL`.
    pub total: f64,
}

impl ElboVars {
    /// Reads the values and rejects non-finite components by name.
    pub fn breakdown(&self, tape: &Tape) -> Result<LossBreakdown> {
        let b = LossBreakdown {
            info_nll: tape.item(self.info_nll),
            reward_nll: tape.item(self.reward_nll),
            cont_nll: tape.item(self.cont_nll),
            kl: tape.item(self.kl),
            total: tape.item(self.total),
        };
        for (name, v) in [
            ("information", b.info_nll),
            ("reward", b.reward_nll),
            ("continuation", b.cont_nll),
            ("kl", b.kl),
            ("total", b.total),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("world-model loss component `{name}`")));
            }
        }
        Ok(b)
    }
}

/// Negative unit-variance Gaussian log-density in symlog space, per row.
fn symlog_gaussian_nll(tape: &mut Tape, mean: Var, target: &Tensor) -> Var {
    let dim = target.cols() as f64;
    let t = tape.constant(target.map(crate::diff::symlog));
    let d = tape.sub(mean, t);
    let sq = tape.square(d);
    let s = tape.sum_cols(sq);
    let half = tape.scale(s, 0.5);
    tape.add_scalar(half, dim * HALF_LN_2PI)
}

/// Negative Bernoulli log-likelihood from logits, per row.
fn bernoulli_nll(tape: &mut Tape, logit: Var, target: &Tensor) -> Var {
    let sp = tape.softplus(logit);
    let c = tape.constant(target.clone());
    let cl = tape.mul(c, logit);
    tape.sub(sp, cl)
}

/// `α·max(KL(sg(post) ∥ prior), β) + (1−α)·max(KL(post ∥ sg(prior)), β)`,
/// floored per row; `batch × 1`.
pub fn kl_regularizer(
    tape: &mut Tape,
    posterior: &LatentDist,
    prior: &LatentDist,
    balance: f64,
    free_bits: f64,
) -> Result<Var> {
    let post_sg = posterior.detached(tape);
    let prior_sg = prior.detached(tape);
    let dyn_kl = kl_latent(tape, &post_sg, prior)?;
    let rep_kl = kl_latent(tape, posterior, &prior_sg)?;
    let dyn_kl = tape.max_scalar(dyn_kl, free_bits);
    let rep_kl = tape.max_scalar(rep_kl, free_bits);
    let a = tape.scale(dyn_kl, balance);
    let b = tape.scale(rep_kl, 1.0 - balance);
    Ok(tape.add(a, b))
}

impl WorldModel {
    pub fn new(config: WorldModelConfig, dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if dims.action == 0 || dims.obs == 0 || dims.info == 0 {
            return Err(Error::Config("model interface widths must be positive".into()));
        }
        let mut p = ParamSet::new();
        let (zd, h, l) = (config.z_dim, config.hidden, config.layers);
        let ed = config.latent.sample_dim();
        let pd = config.latent.param_dim();
        let nets = Nets {
            encoder: Mlp::new(&mut p, "encoder", zd + dims.action + dims.obs, h, l, pd, false, rng),
            prior: Mlp::new(&mut p, "prior", zd + dims.action, h, l, pd, false, rng),
            rec_in: Linear::new(&mut p, "recurrence.in", ed + dims.action, h, false, rng),
            gru: GruCell::new(&mut p, "recurrence.gru", h, zd, rng),
            info_head: Mlp::new(&mut p, "decoder.info", zd + ed, h, l, dims.info, false, rng),
            reward_head: Mlp::new(&mut p, "decoder.reward", zd + ed, h, l, 1, true, rng),
            cont_head: Mlp::new(&mut p, "decoder.cont", zd + ed, h, l, 1, false, rng),
        };
        Ok(Self {
            config,
            dims,
            params: p,
            nets,
        })
    }

    /// Replaces the parameters, e.g. after loading a checkpoint.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if params.names() != self.params.names()
            || params
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint(
                "world-model parameters do not match the architecture".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn z_dim(&self) -> usize {
        self.config.z_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent.sample_dim()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    /// `q^e(· | z, a, o')`.
    pub fn posterior(&self, tape: &mut Tape, p: &Bound, z: Var, a: Var, o: Var) -> Result<LatentDist> {
        let x = tape.concat_cols(&[z, a, o]);
        let raw = self.nets.encoder.forward(tape, p, x);
        self.config.latent.dist(tape, raw)
    }

    /// `q^p(· | z, a)`.
    pub fn prior(&self, tape: &mut Tape, p: &Bound, z: Var, a: Var) -> Result<LatentDist> {
        let x = tape.concat_cols(&[z, a]);
        let raw = self.nets.prior.forward(tape, p, x);
        self.config.latent.dist(tape, raw)
    }

    /// `z' = u(z, a, e)`.
    pub fn recur(&self, tape: &mut Tape, p: &Bound, z: Var, a: Var, e: Var) -> Var {
        let x = tape.concat_cols(&[e, a]);
        let x = self.nets.rec_in.forward(tape, p, x);
        let x = tape.silu(x);
        self.nets.gru.forward(tape, p, x, z)
    }

    /// Decoder outputs at `(z, e)`.
    pub fn heads(&self, tape: &mut Tape, p: &Bound, z: Var, e: Var) -> HeadVars {
        let x = tape.concat_cols(&[z, e]);
        HeadVars {
            info_mean: self.nets.info_head.forward(tape, p, x),
            reward_mean: self.nets.reward_head.forward(tape, p, x),
            cont_logit: self.nets.cont_head.forward(tape, p, x),
        }
    }

    fn check_latent_shapes(&self, z: &Tensor, e: &Tensor) -> Result<()> {
        if z.cols() != self.z_dim() || e.cols() != self.latent_dim() || z.rows() != e.rows() {
            return Err(Error::Shape(format!(
                "(z, e) shapes {:?}, {:?} do not match z_dim {} and latent dim {}",
                z.shape(),
                e.shape(),
                self.z_dim(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    /// Reward, information and continuation predictions at `(z, e)`, with
    /// means mapped back to raw space.
    pub fn decode_heads(&self, z: &Tensor, e: &Tensor) -> Result<DecodedHeads> {
        self.check_latent_shapes(z, e)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let ev = tape.constant(e.clone());
        let h = self.heads(&mut tape, &p, zv, ev);
        let cont = tape.sigmoid(h.cont_logit);
        Ok(DecodedHeads {
            reward_mean: tape.value(h.reward_mean).map(symexp),
            info_mean: tape.value(h.info_mean).map(symexp),
            cont_prob: tape.value(cont).clone(),
        })
    }

    /// Log-densities of raw targets under the decoders at `(z, e)`, per row:
    /// `(log q^i(i'), log q^r(r), log q^c(c'))`.
    pub fn head_log_densities(
        &self,
        z: &Tensor,
        e: &Tensor,
        info: &Tensor,
        reward: &Tensor,
        cont: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_latent_shapes(z, e)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let ev = tape.constant(e.clone());
        let h = self.heads(&mut tape, &p, zv, ev);
        let i = symlog_gaussian_nll(&mut tape, h.info_mean, info);
        let r = symlog_gaussian_nll(&mut tape, h.reward_mean, reward);
        let c = bernoulli_nll(&mut tape, h.cont_logit, cont);
        let neg = |t: &Tensor| t.map(|x| -x);
        Ok((neg(tape.value(i)), neg(tape.value(r)), neg(tape.value(c))))
    }

    fn check_batch(&self, batch: &SequenceBatch, noise: &[LatentNoise]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Contract("window length must be at least 1".into()));
        }
        if noise.len() != batch.len() {
            return Err(Error::Shape(format!(
                "{} noise draws for a window of length {}",
                noise.len(),
                batch.len()
            )));
        }
        let n = batch.batch_size();
        for w in 0..batch.len() {
            let ok = batch.prev_actions[w].shape() == (n, self.dims.action)
                && batch.observations[w].shape() == (n, self.dims.obs)
                && batch.information[w].shape() == (n, self.dims.info)
                && batch.prev_rewards[w].shape() == (n, 1)
                && batch.continuations[w].shape() == (n, 1)
                && batch.mask[w].shape() == (n, 1);
            if !ok {
                return Err(Error::Shape(format!(
                    "batch step {w} does not match model widths {:?}",
                    self.dims
                )));
            }
        }
        Ok(())
    }

    /// Runs the encoder and recurrence over the windows: `z_{-1} = 0` and,
    /// for `w = 0..W`, `e_{w-1} ~ q^e(z_{w-1}, a_{w-1}, o_w)`,
    /// `z_w = m_w · u(z_{w-1}, a_{w-1}, e_{w-1})` where `m_w` is the padding
    /// mask (so padded steps keep the statistic at zero).
    pub fn encode_sequence(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &SequenceBatch,
        noise: &[LatentNoise],
    ) -> Result<Encoded> {
        self.check_batch(batch, noise)?;
        let n = batch.batch_size();
        let mut z_prev = tape.constant(Tensor::zeros(n, self.z_dim()));
        let mut out = Encoded {
            z: Vec::with_capacity(batch.len()),
            e: Vec::with_capacity(batch.len()),
            posterior: Vec::with_capacity(batch.len()),
            z_last: z_prev,
        };
        for w in 0..batch.len() {
            let a = tape.constant(batch.prev_actions[w].clone());
            let o = tape.constant(batch.observations[w].clone());
            let post = self.posterior(tape, p, z_prev, a, o)?;
            let e = reparam_sample(tape, &post, &noise[w])?;
            let z = self.recur(tape, p, z_prev, a, e);
            let m = tape.constant(batch.mask[w].clone());
            let z = tape.mul_col(z, m);
            out.z.push(z_prev);
            out.e.push(e);
            out.posterior.push(post);
            z_prev = z;
        }
        out.z_last = z_prev;
        Ok(out)
    }

    /// Negative evidence lower bound of the windows. Term `w` decodes
    /// `(i_w, c_w, r_{w-1})` from `(z_{w-1}, e_{w-1})` and regularizes
    /// `q^e(· | z_{w-1}, a_{w-1}, o_w)` towards `q^p(· | z_{w-1}, a_{w-1})`.
    /// Padded steps are excluded from every average.
    pub fn elbo_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &SequenceBatch,
        noise: &[LatentNoise],
    ) -> Result<(ElboVars, Encoded)> {
        let enc = self.encode_sequence(tape, p, batch, noise)?;
        let count: f64 = batch.mask.iter().map(Tensor::sum).sum();
        if count == 0.0 {
            return Err(Error::Contract("batch contains no valid steps".into()));
        }
        let mut acc: [Option<Var>; 5] = [None; 5];
        for w in 0..batch.len() {
            let a = tape.constant(batch.prev_actions[w].clone());
            let prior = self.prior(tape, p, enc.z[w], a)?;
            let h = self.heads(tape, p, enc.z[w], enc.e[w]);
            let info = symlog_gaussian_nll(tape, h.info_mean, &batch.information[w]);
            let reward = symlog_gaussian_nll(tape, h.reward_mean, &batch.prev_rewards[w]);
            let cont = bernoulli_nll(tape, h.cont_logit, &batch.continuations[w]);
            let kl = kl_latent(tape, &enc.posterior[w], &prior)?;
            let reg = kl_regularizer(
                tape,
                &enc.posterior[w],
                &prior,
                self.config.kl_balance,
                self.config.free_bits,
            )?;
            let m = tape.constant(batch.mask[w].clone());
            for (slot, v) in acc.iter_mut().zip([info, reward, cont, kl, reg]) {
                let masked = tape.mul(v, m);
                let s = tape.sum(masked);
                *slot = Some(match *slot {
                    Some(prev) => tape.add(prev, s),
                    None => s,
                });
            }
        }
        let [info, reward, cont, kl, reg] =
            acc.map(|v| tape.scale(v.expect("window length checked"), 1.0 / count));
        let weighted_cont = tape.scale(cont, self.config.cont_weight);
        let t = tape.add(info, reward);
        let t = tape.add(t, weighted_cont);
        let total = tape.add(t, reg);
        Ok((
            ElboVars {
                total,
                info_nll: info,
                reward_nll: reward,
                cont_nll: cont,
                kl,
            },
            enc,
        ))
    }

    /// Fresh noise for one window batch.
    pub fn sample_noise(&self, rng: &mut impl Rng, batch: usize, len: usize) -> Vec<LatentNoise> {
        (0..len).map(|_| self.config.latent.noise(rng, batch)).collect()
    }

    /// One execution-time filtering step:
    /// `e ~ q^e(z, a, o')`, `z' = u(z, a, e)`. Returns `(z', e)`.
    pub fn observe(
        &self,
        z: &Tensor,
        prev_action: &Tensor,
        observation: &Tensor,
        noise: &LatentNoise,
    ) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let a = tape.constant(prev_action.clone());
        let o = tape.constant(observation.clone());
        let post = self.posterior(&mut tape, &p, zv, a, o)?;
        let e = reparam_sample(&mut tape, &post, noise)?;
        let z_next = self.recur(&mut tape, &p, zv, a, e);
        Ok((tape.value(z_next).clone(), tape.value(e).clone()))
    }
}

/// Prior-only view of a [`WorldModel`]: latent dynamics and decoders, with
/// no access to the encoder. Imagination is written against this type, so it
/// cannot consume observations.
#[derive(Clone, Copy, Debug)]
pub struct Dynamics<'a> {
    model: &'a WorldModel,
}

impl WorldModel {
    pub fn dynamics(&self) -> Dynamics<'_> {
        Dynamics { model: self }
    }
}

impl Dynamics<'_> {
    pub fn z_dim(&self) -> usize {
        self.model.z_dim()
    }

    pub fn latent(&self) -> LatentKind {
        self.model.config.latent
    }

    pub fn action_dim(&self) -> usize {
        self.model.dims.action
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.model.bind(tape, false)
    }

    pub fn prior(&self, tape: &mut Tape, p: &Bound, z: Var, a: Var) -> Result<LatentDist> {
        self.model.prior(tape, p, z, a)
    }

    pub fn recur(&self, tape: &mut Tape, p: &Bound, z: Var, a: Var, e: Var) -> Var {
        self.model.recur(tape, p, z, a, e)
    }

    pub fn heads(&self, tape: &mut Tape, p: &Bound, z: Var, e: Var) -> HeadVars {
        self.model.heads(tape, p, z, e)
    }
}

#[cfg(test)]
mod tests;
