//! Exact latent-path enumeration for small categorical world models.
//!
//! With `classes^groups` joint latent values per step and a short window,
//! every latent path can be visited, which makes both the evidence lower
//! bound and the marginal likelihood exactly computable.

use super::{bernoulli_nll, symlog_gaussian_nll, LatentKind, SequenceBatch, WorldModel};
use crate::diff::{Bound, Tape, Tensor, Var};
use crate::oracle::{LatentSequenceModel, LatentStep};
use crate::{Error, Result};

/// Joint latent values per step above which enumeration is refused.
pub const MAX_JOINT_CLASSES: usize = 64;

fn joint_classes(latent: LatentKind) -> Result<(usize, usize, usize)> {
    match latent {
        LatentKind::Categorical { groups, classes } => {
            let joint = (classes as u128).checked_pow(groups as u32).unwrap_or(u128::MAX);
            if joint > MAX_JOINT_CLASSES as u128 {
                return Err(Error::GuardExceeded {
                    nodes: joint.min(usize::MAX as u128) as usize,
                    limit: MAX_JOINT_CLASSES,
                });
            }
            Ok((groups, classes, joint as usize))
        }
        LatentKind::Gaussian { .. } => Err(Error::Contract(
            "exact enumeration needs a categorical latent".into(),
        )),
    }
}

/// One-hot sample vector of joint class `c` (group 0 is the least
/// significant digit).
fn joint_one_hot(c: usize, groups: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; groups * classes];
    let mut rest = c;
    for g in 0..groups {
        v[g * classes + rest % classes] = 1.0;
        rest /= classes;
    }
    v
}

/// Log-probability of every joint class under per-group log-probabilities.
fn joint_log_probs(group_lp: &[f64], groups: usize, classes: usize, joint: usize) -> Vec<f64> {
    (0..joint)
        .map(|c| {
            let mut rest = c;
            let mut s = 0.0;
            for g in 0..groups {
                s += group_lp[g * classes + rest % classes];
                rest /= classes;
            }
            s
        })
        .collect()
}

fn repeat_row(row: &[f64], n: usize) -> Tensor {
    let rows = vec![row; n];
    Tensor::from_rows(&rows)
}

/// Exact evidence lower bound of every window, summed over time and
/// averaged over the batch, as a value differentiable in the parameters `p`:
/// `E_{q(e_{-1:W-2})}[Σ_w log q^i + log q^r + log q^c + log q^p(e) − log q^e(e)]`.
pub fn exact_elbo(model: &WorldModel, tape: &mut Tape, p: &Bound, batch: &SequenceBatch) -> Result<Var> {
    let (groups, classes, joint) = joint_classes(model.config.latent)?;
    let len = batch.len();
    let n = batch.batch_size();
    if len == 0 || n == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let paths = (joint as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if paths > crate::oracle::DEFAULT_GUARD as u128 {
        return Err(Error::GuardExceeded {
            nodes: paths.min(usize::MAX as u128) as usize,
            limit: crate::oracle::DEFAULT_GUARD,
        });
    }
    if batch.mask.iter().any(|m| m.data().iter().any(|&x| x != 1.0)) {
        return Err(Error::Contract("exact enumeration does not support padding".into()));
    }
    let actions: Vec<Var> = batch.prev_actions.iter().map(|t| tape.constant(t.clone())).collect();
    let observations: Vec<Var> = batch.observations.iter().map(|t| tape.constant(t.clone())).collect();
    let onehots: Vec<Var> = (0..joint)
        .map(|c| tape.constant(repeat_row(&joint_one_hot(c, groups, classes), n)))
        .collect();

    // Depth-first over path prefixes; each prefix's tape values are shared
    // by all of its extensions.
    struct Frame {
        z: Var,
        log_q: Option<Var>,
        inner: Option<Var>,
    }
    let z0 = tape.constant(Tensor::zeros(n, model.z_dim()));
    let mut total: Option<Var> = None;
    let mut stack = vec![(0usize, Frame { z: z0, log_q: None, inner: None })];
    while let Some((w, frame)) = stack.pop() {
        if w == len {
            let lq = frame.log_q.expect("non-empty path");
            let q = tape.exp(lq);
            let c = tape.mul(q, frame.inner.expect("non-empty path"));
            total = Some(match total {
                Some(t) => tape.add(t, c),
                None => c,
            });
            continue;
        }
        let post = model.posterior(tape, p, frame.z, actions[w], observations[w])?;
        let prior = model.prior(tape, p, frame.z, actions[w])?;
        let (post, prior) = match (post, prior) {
            (crate::diff::LatentDist::Categorical(a), crate::diff::LatentDist::Categorical(b)) => (a, b),
            _ => unreachable!("categorical latent checked above"),
        };
        let post_lp = post.log_probs(tape);
        let prior_lp = prior.log_probs(tape);
        for c in (0..joint).rev() {
            let e = onehots[c];
            let lq_terms = tape.mul(e, post_lp);
            let lq = tape.sum_cols(lq_terms);
            let lp_terms = tape.mul(e, prior_lp);
            let lp = tape.sum_cols(lp_terms);
            let h = model.heads(tape, p, frame.z, e);
            let i = symlog_gaussian_nll(tape, h.info_mean, &batch.information[w]);
            let r = symlog_gaussian_nll(tape, h.reward_mean, &batch.prev_rewards[w]);
            let cn = bernoulli_nll(tape, h.cont_logit, &batch.continuations[w]);
            let nll = tape.add(i, r);
            let nll = tape.add(nll, cn);
            let step = tape.sub(lp, lq);
            let step = tape.sub(step, nll);
            let z = model.recur(tape, p, frame.z, actions[w], e);
            let log_q = match frame.log_q {
                Some(prev) => tape.add(prev, lq),
                None => lq,
            };
            let inner = match frame.inner {
                Some(prev) => tape.add(prev, step),
                None => step,
            };
            stack.push((
                w + 1,
                Frame {
                    z,
                    log_q: Some(log_q),
                    inner: Some(inner),
                },
            ));
        }
    }
    let per_row = total.expect("at least one path");
    Ok(tape.mean(per_row))
}

/// Exposes one batch row of a categorical world model to the
/// enumeration oracles.
pub struct SequenceAdapter<'a> {
    model: &'a WorldModel,
    batch: &'a SequenceBatch,
    row: usize,
    groups: usize,
    classes: usize,
    joint: usize,
}

impl<'a> SequenceAdapter<'a> {
    pub fn new(model: &'a WorldModel, batch: &'a SequenceBatch, row: usize) -> Result<Self> {
        let (groups, classes, joint) = joint_classes(model.config.latent)?;
        if row >= batch.batch_size() {
            return Err(Error::Contract(format!("row {row} outside the batch")));
        }
        if batch.mask.iter().any(|m| m.get(row, 0) != 1.0) {
            return Err(Error::Contract("exact enumeration does not support padding".into()));
        }
        Ok(Self {
            model,
            batch,
            row,
            groups,
            classes,
            joint,
        })
    }

    fn row_of(&self, t: &Tensor) -> Tensor {
        Tensor::row(t.row_slice(self.row))
    }
}

impl LatentSequenceModel for SequenceAdapter<'_> {
    fn len(&self) -> usize {
        self.batch.len()
    }

    fn num_classes(&self) -> usize {
        self.joint
    }

    fn step(&self, prefix: &[usize]) -> Result<LatentStep> {
        let w = prefix.len();
        let m = self.model;
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, false);
        let mut z = tape.constant(Tensor::zeros(1, m.z_dim()));
        for (k, &c) in prefix.iter().enumerate() {
            let a = tape.constant(self.row_of(&self.batch.prev_actions[k]));
            let e = tape.constant(Tensor::row(&joint_one_hot(c, self.groups, self.classes)));
            z = m.recur(&mut tape, &p, z, a, e);
        }
        let a = tape.constant(self.row_of(&self.batch.prev_actions[w]));
        let o = tape.constant(self.row_of(&self.batch.observations[w]));
        let post = m.posterior(&mut tape, &p, z, a, o)?;
        let prior = m.prior(&mut tape, &p, z, a)?;
        let lp = |tape: &mut Tape, d: crate::diff::LatentDist| match d {
            crate::diff::LatentDist::Categorical(c) => {
                let v = c.log_probs(tape);
                tape.value(v).data().to_vec()
            }
            crate::diff::LatentDist::Gaussian(_) => unreachable!("categorical latent checked"),
        };
        let post_lp = lp(&mut tape, post);
        let prior_lp = lp(&mut tape, prior);
        let z_val = tape.value(z).clone();
        let info = self.row_of(&self.batch.information[w]);
        let reward = self.row_of(&self.batch.prev_rewards[w]);
        let cont = self.row_of(&self.batch.continuations[w]);
        let emission_log_density = (0..self.joint)
            .map(|c| {
                let e = Tensor::row(&joint_one_hot(c, self.groups, self.classes));
                let (i, r, cn) = m.head_log_densities(&z_val, &e, &info, &reward, &cont)?;
                Ok(i.item() + r.item() + cn.item())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(LatentStep {
            prior_log_probs: joint_log_probs(&prior_lp, self.groups, self.classes, self.joint),
            posterior_log_probs: joint_log_probs(&post_lp, self.groups, self.classes, self.joint),
            emission_log_density,
        })
    }
}
