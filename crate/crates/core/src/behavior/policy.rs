//! Latent policy `g(a | z)` and critic `v(z)`.

use rand::Rng;

use crate::diff::dist::one_hot_by_inverse_cdf;
use crate::diff::{Bound, CategoricalLatent, LatentNoise, Mlp, ParamSet, Tape, Tensor, Var};
use crate::envs::{Action, ActionSpace};
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Lower bound on the pre-squash standard deviation of box policies.
const MIN_ACTION_STDDEV: f64 = 0.05;

/// Policy outputs for one batch of statistics.
#[derive(Clone, Copy, Debug)]
pub struct ActVars {
    /// Encoded action fed to the world model: a constant one-hot for discrete
    /// spaces, a reparameterized (differentiable) vector for box spaces.
    pub action: Var,
    /// `log g(a | z)`, `batch × 1`.
    pub log_prob: Var,
    /// Entropy of `g(· | z)`, `batch × 1`. Box policies report the entropy
    /// of the Gaussian before squashing.
    pub entropy: Var,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub space: ActionSpace,
    pub params: ParamSet,
    net: Mlp,
}

impl Policy {
    /// The output layer starts at zero, so a discrete policy starts uniform
    /// and a box policy starts centred.
    pub fn new(space: ActionSpace, z_dim: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Result<Self> {
        let out = match &space {
            ActionSpace::Discrete(0) => {
                return Err(Error::Config("discrete action space with no actions".into()))
            }
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Box { low, high } => {
                if low.is_empty() || low.len() != high.len() || low.iter().zip(high).any(|(l, h)| !(l < h)) {
                    return Err(Error::Config(format!("invalid box action space {space:?}")));
                }
                2 * low.len()
            }
        };
        let mut params = ParamSet::new();
        let net = Mlp::new(&mut params, "policy", z_dim, hidden, layers, out, true, rng);
        Ok(Self { space, params, net })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    pub fn noise(&self, rng: &mut impl Rng, batch: usize) -> LatentNoise {
        match &self.space {
            ActionSpace::Discrete(_) => LatentNoise::categorical(rng, batch, 1),
            ActionSpace::Box { low, .. } => LatentNoise::gaussian(rng, batch, low.len()),
        }
    }

    /// Samples `a ~ g(· | z)` on the tape.
    pub fn act(&self, tape: &mut Tape, p: &Bound, z: Var, noise: &LatentNoise) -> Result<ActVars> {
        let out = self.net.forward(tape, p, z);
        let batch = tape.shape(z).0;
        match (&self.space, noise) {
            (ActionSpace::Discrete(n), LatentNoise::Categorical(u)) => {
                if u.shape() != (batch, 1) {
                    return Err(Error::Shape(format!("action noise {:?} for batch {batch}", u.shape())));
                }
                let dist = CategoricalLatent::new(tape, out, 1, *n)?;
                let probs = dist.probs(tape);
                let onehot = one_hot_by_inverse_cdf(tape.value(probs), u, *n);
                let action = tape.constant(onehot);
                let lp = dist.log_probs(tape);
                let picked = tape.mul(lp, action);
                let log_prob = tape.sum_cols(picked);
                let entropy = dist.entropy(tape);
                Ok(ActVars {
                    action,
                    log_prob,
                    entropy,
                })
            }
            (ActionSpace::Box { low, high }, LatentNoise::Gaussian(eps)) => {
                let d = low.len();
                if eps.shape() != (batch, d) {
                    return Err(Error::Shape(format!("action noise {:?} for batch {batch}", eps.shape())));
                }
                if !tape.value(out).all_finite() {
                    return Err(Error::NonFinite("policy outputs".into()));
                }
                let mean = tape.slice_cols(out, 0, d);
                let raw = tape.slice_cols(out, d, d);
                let sp = tape.softplus(raw);
                let std = tape.add_scalar(sp, MIN_ACTION_STDDEV);
                let e = tape.constant(eps.clone());
                let scaled = tape.mul(std, e);
                let pre = tape.add(mean, scaled);
                let squashed = tape.tanh(pre);
                // a = low + (high − low)·(tanh(x) + 1)/2
                let half_range = Tensor::row(&low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect::<Vec<_>>());
                let centre = Tensor::row(&low.iter().zip(high).map(|(l, h)| 0.5 * (h + l)).collect::<Vec<_>>());
                let hr = tape.constant(half_range.clone());
                let ce = tape.constant(centre);
                let ones = tape.constant(Tensor::filled(batch, 1, 1.0));
                let hr_b = tape.matmul(ones, hr);
                let a = tape.mul(squashed, hr_b);
                let action = tape.add_row(a, ce);
                // log N(x; μ, σ) − Σ log(half_range·(1 − tanh²x))
                let ln_std = tape.ln(std);
                let sum_ln_std = tape.sum_cols(ln_std);
                let eps_term = eps.data().chunks(d).map(|r| 0.5 * r.iter().map(|x| x * x).sum::<f64>());
                let eps_term = tape.constant(Tensor::col(&eps_term.collect::<Vec<_>>()));
                let gauss = tape.add(sum_ln_std, eps_term);
                let gauss = tape.add_scalar(gauss, d as f64 * HALF_LN_2PI);
                let sq = tape.square(squashed);
                let one_minus = tape.neg(sq);
                let one_minus = tape.add_scalar(one_minus, 1.0 + 1e-6);
                let ln_jac = tape.ln(one_minus);
                let ln_jac = tape.sum_cols(ln_jac);
                let ln_range: f64 = half_range.data().iter().map(|h| h.ln()).sum();
                let ln_jac = tape.add_scalar(ln_jac, ln_range);
                let neg_lp = tape.add(gauss, ln_jac);
                let log_prob = tape.neg(neg_lp);
                let entropy = tape.add_scalar(sum_ln_std, d as f64 * (0.5 + HALF_LN_2PI));
                Ok(ActVars {
                    action,
                    log_prob,
                    entropy,
                })
            }
            _ => Err(Error::Contract("action noise does not match the action space".into())),
        }
    }

    /// Draws environment actions and their encodings for a batch of
    /// statistics, outside any training graph.
    pub fn sample(&self, z: &Tensor, noise: &LatentNoise) -> Result<(Vec<Action>, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.act(&mut tape, &p, zv, noise)?;
        let enc = tape.value(out.action).clone();
        let actions = (0..enc.rows())
            .map(|r| {
                let row = enc.row_slice(r);
                match &self.space {
                    ActionSpace::Discrete(_) => Action::Discrete(row.iter().position(|&x| x == 1.0).unwrap_or(0)),
                    ActionSpace::Box { low, high } => Action::Continuous(
                        row.iter().zip(low.iter().zip(high)).map(|(x, (l, h))| x.clamp(*l, *h)).collect(),
                    ),
                }
            })
            .collect();
        Ok((actions, enc))
    }

    /// Action probabilities of a discrete policy, `batch × |A|`.
    pub fn probabilities(&self, z: &Tensor) -> Result<Tensor> {
        let ActionSpace::Discrete(n) = self.space else {
            return Err(Error::Contract("probabilities of a box policy".into()));
        };
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.net.forward(&mut tape, &p, zv);
        let probs = tape.group_softmax(out, n);
        Ok(tape.value(probs).clone())
    }
}

/// Scalar critic predicting `symlog` of the return.
#[derive(Clone, Debug)]
pub struct Critic {
    pub params: ParamSet,
    net: Mlp,
}

impl Critic {
    pub fn new(z_dim: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let net = Mlp::new(&mut params, "critic", z_dim, hidden, layers, 1, true, rng);
        Self { params, net }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    /// Prediction in symlog space, `batch × 1`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, z: Var) -> Var {
        self.net.forward(tape, p, z)
    }

    /// Value in raw return space.
    pub fn value(&self, tape: &mut Tape, p: &Bound, z: Var) -> Var {
        let s = self.forward(tape, p, z);
        tape.symexp(s)
    }

    pub fn values(&self, z: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let v = self.value(&mut tape, &p, zv);
        tape.value(v).clone()
    }
}
