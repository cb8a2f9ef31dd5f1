//! Exact information-theoretic quantities over enumerated histories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{belief_update, initial_belief, predict, Belief, DEFAULT_GUARD, MERGE_TOLERANCE};
use crate::envs::TabularInformedPomdp;
use crate::{Error, Result};

/// A reachable history with its probability under the generating policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// `[o_0, a_0, o_1, …, o_t]`.
    pub history: Vec<usize>,
    /// Number of actions taken.
    pub t: usize,
    pub prob: f64,
    pub belief: Belief,
}

fn obs_prob(pomdp: &TabularInformedPomdp, pred: &[f64], o: usize) -> f64 {
    pred.iter()
        .enumerate()
        .map(|(s, p)| pomdp.obs_given_state(s, o) * p)
        .sum()
}

fn checked_policy(
    pomdp: &TabularInformedPomdp,
    policy: &dyn Fn(&[usize]) -> Vec<f64>,
    h: &[usize],
) -> Result<Vec<f64>> {
    let pa = policy(h);
    if pa.len() != pomdp.num_actions || pa.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Contract(format!(
            "policy must give every action positive probability, got {pa:?} at {h:?}"
        )));
    }
    Ok(pa)
}

/// Every history with `t < depth` actions and positive probability under
/// `policy` (which must be positive everywhere), in depth-first order.
pub fn enumerate_histories(
    pomdp: &TabularInformedPomdp,
    depth: usize,
    policy: &dyn Fn(&[usize]) -> Vec<f64>,
) -> Result<Vec<HistoryRecord>> {
    pomdp.validate()?;
    let mut out = Vec::new();
    let mut stack: Vec<HistoryRecord> = Vec::new();
    if depth == 0 {
        return Ok(out);
    }
    for o in (0..pomdp.num_obs).rev() {
        let p: f64 = (0..pomdp.num_states)
            .map(|s| pomdp.initial[s] * pomdp.obs_given_state(s, o))
            .sum();
        if p > 0.0 {
            stack.push(HistoryRecord {
                history: vec![o],
                t: 0,
                prob: p,
                belief: initial_belief(pomdp, o)?,
            });
        }
    }
    while let Some(rec) = stack.pop() {
        if out.len() >= DEFAULT_GUARD {
            return Err(Error::GuardExceeded {
                nodes: out.len() + 1,
                limit: DEFAULT_GUARD,
            });
        }
        if rec.t + 1 < depth {
            let pa = checked_policy(pomdp, policy, &rec.history)?;
            for a in (0..pomdp.num_actions).rev() {
                let pred = predict(pomdp, &rec.belief.0, a);
                for o in (0..pomdp.num_obs).rev() {
                    let po = obs_prob(pomdp, &pred, o);
                    if po <= 0.0 {
                        continue;
                    }
                    let mut history = rec.history.clone();
                    history.extend([a, o]);
                    stack.push(HistoryRecord {
                        history,
                        t: rec.t + 1,
                        prob: rec.prob * pa[a] * po,
                        belief: belief_update(pomdp, &rec.belief, a, o)?,
                    });
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// `p(s_t | h_t)` by summing the joint over every state path, without any
/// recursive filtering.
pub fn belief_by_conditioning(pomdp: &TabularInformedPomdp, history: &[usize]) -> Result<Belief> {
    if history.len() % 2 != 1 {
        return Err(Error::Contract("history must be [o_0, a_0, o_1, …, o_t]".into()));
    }
    let t = history.len() / 2;
    let ns = pomdp.num_states;
    let paths = (ns as u128).checked_pow(t as u32 + 1).unwrap_or(u128::MAX);
    if paths > DEFAULT_GUARD as u128 {
        return Err(Error::GuardExceeded {
            nodes: paths.min(usize::MAX as u128) as usize,
            limit: DEFAULT_GUARD,
        });
    }
    let mut marginal = vec![0.0; ns];
    let mut path = vec![0usize; t + 1];
    for code in 0..paths as usize {
        let mut rest = code;
        for s in path.iter_mut() {
            *s = rest % ns;
            rest /= ns;
        }
        let mut p = pomdp.initial[path[0]] * pomdp.obs_given_state(path[0], history[0]);
        for k in 1..=t {
            let a = history[2 * k - 1];
            let o = history[2 * k];
            p *= pomdp.transition[path[k - 1]][a][path[k]] * pomdp.obs_given_state(path[k], o);
        }
        marginal[path[t]] += p;
    }
    let total: f64 = marginal.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ImpossibleEvidence(format!("history {history:?}")));
    }
    Ok(Belief(marginal.into_iter().map(|x| x / total).collect()))
}

/// Joint `p(s', i', o' | h, a)` indexed `[s'][i'][o']`.
fn next_joint(pomdp: &TabularInformedPomdp, b: &Belief, a: usize) -> Vec<Vec<Vec<f64>>> {
    let pred = predict(pomdp, &b.0, a);
    pred.iter()
        .enumerate()
        .map(|(s, &ps)| {
            (0..pomdp.num_infos)
                .map(|i| {
                    let psi = ps * pomdp.information[s][i];
                    (0..pomdp.num_obs).map(|o| psi * pomdp.observation[i][o]).collect()
                })
                .collect()
        })
        .collect()
}

/// `I(X; Y)` in nats from a joint table.
fn mutual_information(joint: &[Vec<f64>]) -> f64 {
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let cols = joint.first().map_or(0, Vec::len);
    let py: Vec<f64> = (0..cols).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (y, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).ln();
            }
        }
    }
    mi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiRecord {
    pub history: Vec<usize>,
    pub action: usize,
    /// `I(s'; i' | h, a)`, nats.
    pub info: f64,
    /// `I(s'; o' | h, a)`, nats.
    pub obs: f64,
}

/// Exact `I(s'; i' | h, a)` and `I(s'; o' | h, a)` for every history with
/// fewer than `depth` actions and every action.
pub fn mi_comparison(
    pomdp: &TabularInformedPomdp,
    policy: &dyn Fn(&[usize]) -> Vec<f64>,
    depth: usize,
) -> Result<Vec<MiRecord>> {
    let mut out = Vec::new();
    for rec in enumerate_histories(pomdp, depth, policy)? {
        for a in 0..pomdp.num_actions {
            let joint = next_joint(pomdp, &rec.belief, a);
            let s_i: Vec<Vec<f64>> = joint
                .iter()
                .map(|per_i| per_i.iter().map(|per_o| per_o.iter().sum()).collect())
                .collect();
            let s_o: Vec<Vec<f64>> = joint
                .iter()
                .map(|per_i| {
                    (0..pomdp.num_obs)
                        .map(|o| per_i.iter().map(|per_o| per_o[o]).sum())
                        .collect()
                })
                .collect();
            out.push(MiRecord {
                history: rec.history.clone(),
                action: a,
                info: mutual_information(&s_i),
                obs: mutual_information(&s_o),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlanketRecord {
    pub history: Vec<usize>,
    pub action: usize,
    pub reward: f64,
    pub observation: usize,
    /// `Σ_i' Õ(o'|i') p(r, i' | h, a)`.
    pub factorized: f64,
    /// `p(r, o' | h, a)` marginalized directly from the joint.
    pub direct: f64,
}

/// Distinct rewards reachable under `a`, with the states producing each.
fn reward_classes(pomdp: &TabularInformedPomdp, a: usize) -> BTreeMap<u64, (f64, Vec<usize>)> {
    let mut classes: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
    for s in 0..pomdp.num_states {
        let r = pomdp.reward[s][a];
        classes.entry(r.to_bits()).or_insert((r, Vec::new())).1.push(s);
    }
    classes
}

/// Joint `p(s, s', i', o' | h, a)` restricted to states in `states`,
/// summed over `s` and `s'`: returns `[i'][o']`.
fn restricted_joint(pomdp: &TabularInformedPomdp, b: &Belief, a: usize, states: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; pomdp.num_obs]; pomdp.num_infos];
    for &s in states {
        for sp in 0..pomdp.num_states {
            let pss = b.0[s] * pomdp.transition[s][a][sp];
            for (i, row) in out.iter_mut().enumerate() {
                let p = pss * pomdp.information[sp][i];
                for (o, x) in row.iter_mut().enumerate() {
                    *x += p * pomdp.observation[i][o];
                }
            }
        }
    }
    out
}

/// Checks that the next observation is screened off by the next information:
/// for every enumerated `(h, a, r, o')`, `Σ_i' p(o'|i') p(r, i'|h, a)` is
/// compared with `p(r, o'|h, a)`, both taken from the same joint.
pub fn markov_blanket_check(
    pomdp: &TabularInformedPomdp,
    policy: &dyn Fn(&[usize]) -> Vec<f64>,
    depth: usize,
) -> Result<Vec<BlanketRecord>> {
    let mut out = Vec::new();
    for rec in enumerate_histories(pomdp, depth, policy)? {
        for a in 0..pomdp.num_actions {
            for (r, states) in reward_classes(pomdp, a).into_values() {
                let joint = restricted_joint(pomdp, &rec.belief, a, &states);
                let p_ri: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
                for o in 0..pomdp.num_obs {
                    let factorized = (0..pomdp.num_infos)
                        .map(|i| pomdp.observation[i][o] * p_ri[i])
                        .sum();
                    let direct = joint.iter().map(|row| row[o]).sum();
                    out.push(BlanketRecord {
                        history: rec.history.clone(),
                        action: a,
                        reward: r,
                        observation: o,
                        factorized,
                        direct,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// History statistics whose predictive sufficiency can be measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// The Bayes belief.
    Belief,
    /// The full history (trivially sufficient).
    History,
    /// Only the latest observation.
    LastObservation,
    /// No information at all.
    Constant,
}

/// Predictive distribution `p(r, i' | h, a)` keyed by `(reward bits, i')`.
fn predictive(pomdp: &TabularInformedPomdp, b: &Belief, a: usize) -> BTreeMap<(u64, usize), f64> {
    let mut out = BTreeMap::new();
    for (r, states) in reward_classes(pomdp, a).into_values() {
        let joint = restricted_joint(pomdp, b, a, &states);
        for (i, row) in joint.iter().enumerate() {
            let p: f64 = row.iter().sum();
            if p > 0.0 {
                *out.entry((r.to_bits(), i)).or_insert(0.0) += p;
            }
        }
    }
    out
}

/// `E log p(r, i' | h, a) − E log p(r, i' | f(h), a)` summed over every
/// time step `t < depth`, where `p(r, i' | f(h), a)` pools all histories
/// sharing the statistic value. Non-negative for every statistic; zero when
/// the statistic determines the predictive distribution.
pub fn predictive_gap(
    pomdp: &TabularInformedPomdp,
    policy: &dyn Fn(&[usize]) -> Vec<f64>,
    depth: usize,
    statistic: Statistic,
) -> Result<f64> {
    let histories = enumerate_histories(pomdp, depth, policy)?;
    let mut gap = 0.0;
    for t in 0..depth {
        let level: Vec<&HistoryRecord> = histories.iter().filter(|h| h.t == t).collect();
        // group index per history
        let mut beliefs: Vec<Belief> = Vec::new();
        let mut keys: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let groups: Vec<usize> = level
            .iter()
            .map(|h| match statistic {
                Statistic::Belief => {
                    match beliefs.iter().position(|b| b.close_to(&h.belief, MERGE_TOLERANCE)) {
                        Some(k) => k,
                        None => {
                            beliefs.push(h.belief.clone());
                            beliefs.len() - 1
                        }
                    }
                }
                _ => {
                    let key = match statistic {
                        Statistic::History => h.history.clone(),
                        Statistic::LastObservation => vec![*h.history.last().expect("non-empty")],
                        _ => Vec::new(),
                    };
                    let next = keys.len();
                    *keys.entry(key).or_insert(next)
                }
            })
            .collect();
        let num_groups = groups.iter().max().map_or(0, |m| m + 1);
        for a in 0..pomdp.num_actions {
            let preds: Vec<BTreeMap<(u64, usize), f64>> =
                level.iter().map(|h| predictive(pomdp, &h.belief, a)).collect();
            let weights: Vec<f64> = level
                .iter()
                .map(|h| Ok(h.prob * checked_policy(pomdp, policy, &h.history)?[a]))
                .collect::<Result<_>>()?;
            let mut pooled = vec![BTreeMap::<(u64, usize), f64>::new(); num_groups];
            let mut mass = vec![0.0; num_groups];
            for ((g, w), pred) in groups.iter().zip(&weights).zip(&preds) {
                mass[*g] += w;
                for (k, p) in pred {
                    *pooled[*g].entry(*k).or_insert(0.0) += w * p;
                }
            }
            for ((g, w), pred) in groups.iter().zip(&weights).zip(&preds) {
                for (k, p) in pred {
                    let q = pooled[*g][k] / mass[*g];
                    gap += w * p * (p / q).ln();
                }
            }
        }
    }
    Ok(gap)
}
