//! Finite-horizon optimal control by exhaustive expectimax, once over raw
//! histories and once over beliefs merged across histories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{predict, Belief, DEFAULT_GUARD, MERGE_TOLERANCE};
use crate::envs::TabularInformedPomdp;
use crate::{Error, Result};

/// Deterministic history policy. Keys are `[o_0, a_0, o_1, …, o_t]`.
pub type HistoryPolicy = BTreeMap<Vec<usize>, usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistorySolution {
    /// `max_η J_H(η)`, the optimal expected discounted `H`-step return.
    pub value: f64,
    pub policy: HistoryPolicy,
    /// Decision nodes visited.
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSolution {
    pub value: f64,
    /// Distinct belief nodes after merging.
    pub nodes: usize,
    pub level_sizes: Vec<usize>,
}

fn bump(nodes: &mut usize, guard: usize) -> Result<()> {
    *nodes += 1;
    if *nodes > guard {
        return Err(Error::GuardExceeded {
            nodes: *nodes,
            limit: guard,
        });
    }
    Ok(())
}

/// Unnormalized forward message after acting `a` and observing `o`:
/// `α'(s') = O(o|s') Σ_s T(s'|s,a) α(s)`.
fn advance(pomdp: &TabularInformedPomdp, alpha: &[f64], a: usize, o: usize) -> Vec<f64> {
    predict(pomdp, alpha, a)
        .into_iter()
        .enumerate()
        .map(|(s, p)| pomdp.obs_given_state(s, o) * p)
        .collect()
}

fn immediate(pomdp: &TabularInformedPomdp, weights: &[f64], a: usize) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(s, w)| w * pomdp.reward[s][a])
        .sum()
}

struct HistorySearch<'a> {
    pomdp: &'a TabularInformedPomdp,
    horizon: usize,
    guard: usize,
    nodes: usize,
    policy: HistoryPolicy,
    history: Vec<usize>,
}

impl HistorySearch<'_> {
    /// Reach-weighted optimal value below the current history, whose
    /// forward message is `alpha`.
    fn value(&mut self, alpha: &[f64], t: usize) -> Result<f64> {
        bump(&mut self.nodes, self.guard)?;
        let p = self.pomdp;
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0;
        for a in 0..p.num_actions {
            let mut q = immediate(p, alpha, a);
            if t + 1 < self.horizon {
                let mut future = 0.0;
                for o in 0..p.num_obs {
                    let next = advance(p, alpha, a, o);
                    if next.iter().sum::<f64>() <= 0.0 {
                        continue;
                    }
                    self.history.extend([a, o]);
                    future += self.value(&next, t + 1)?;
                    self.history.truncate(self.history.len() - 2);
                }
                q += p.discount * future;
            }
            if q > best {
                best = q;
                best_a = a;
            }
        }
        self.policy.insert(self.history.clone(), best_a);
        Ok(best)
    }
}

/// Exact expectimax over every observable history `(o_0, a_0, …, o_t)` up
/// to horizon `H`, carrying unnormalized forward messages so that each
/// subtree value is already weighted by its reach probability.
pub fn brute_force_value(pomdp: &TabularInformedPomdp, horizon: usize) -> Result<HistorySolution> {
    brute_force_value_guarded(pomdp, horizon, DEFAULT_GUARD)
}

pub(crate) fn brute_force_value_guarded(
    pomdp: &TabularInformedPomdp,
    horizon: usize,
    guard: usize,
) -> Result<HistorySolution> {
    pomdp.validate()?;
    let mut search = HistorySearch {
        pomdp,
        horizon,
        guard,
        nodes: 0,
        policy: HistoryPolicy::new(),
        history: Vec::new(),
    };
    let mut value = 0.0;
    if horizon > 0 {
        for o in 0..pomdp.num_obs {
            let alpha: Vec<f64> = (0..pomdp.num_states)
                .map(|s| pomdp.initial[s] * pomdp.obs_given_state(s, o))
                .collect();
            if alpha.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            search.history.push(o);
            value += search.value(&alpha, 0)?;
            search.history.clear();
        }
    }
    Ok(HistorySolution {
        value,
        policy: search.policy,
        nodes: search.nodes,
    })
}

struct Level {
    beliefs: Vec<Belief>,
    /// `children[node][a]` lists `(p(o | b, a), child index)`.
    children: Vec<Vec<Vec<(f64, usize)>>>,
}

fn find_or_insert(beliefs: &mut Vec<Belief>, b: Belief) -> usize {
    match beliefs.iter().position(|x| x.close_to(&b, MERGE_TOLERANCE)) {
        Some(k) => k,
        None => {
            beliefs.push(b);
            beliefs.len() - 1
        }
    }
}

/// Expectimax whose nodes are beliefs; histories leading to the same belief
/// (within `1e-12`) share one node.
pub fn belief_expectimax(pomdp: &TabularInformedPomdp, horizon: usize) -> Result<BeliefSolution> {
    belief_expectimax_guarded(pomdp, horizon, DEFAULT_GUARD)
}

pub(crate) fn belief_expectimax_guarded(
    pomdp: &TabularInformedPomdp,
    horizon: usize,
    guard: usize,
) -> Result<BeliefSolution> {
    pomdp.validate()?;
    if horizon == 0 {
        return Ok(BeliefSolution {
            value: 0.0,
            nodes: 0,
            level_sizes: Vec::new(),
        });
    }
    let mut nodes = 0;
    let mut roots: Vec<(f64, usize)> = Vec::new();
    let mut first = Vec::new();
    for o in 0..pomdp.num_obs {
        let alpha: Vec<f64> = (0..pomdp.num_states)
            .map(|s| pomdp.initial[s] * pomdp.obs_given_state(s, o))
            .collect();
        let total: f64 = alpha.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let b = Belief(alpha.into_iter().map(|x| x / total).collect());
        roots.push((total, find_or_insert(&mut first, b)));
    }
    let mut levels = vec![Level {
        beliefs: first,
        children: Vec::new(),
    }];
    for _ in 0..levels[0].beliefs.len() {
        bump(&mut nodes, guard)?;
    }
    for t in 0..horizon - 1 {
        let mut next = Vec::new();
        let mut children = Vec::with_capacity(levels[t].beliefs.len());
        for b in &levels[t].beliefs {
            let mut per_action = Vec::with_capacity(pomdp.num_actions);
            for a in 0..pomdp.num_actions {
                let pred = predict(pomdp, &b.0, a);
                let mut outs = Vec::new();
                for o in 0..pomdp.num_obs {
                    let v: Vec<f64> = pred
                        .iter()
                        .enumerate()
                        .map(|(s, p)| pomdp.obs_given_state(s, o) * p)
                        .collect();
                    let p_o: f64 = v.iter().sum();
                    if p_o <= 0.0 {
                        continue;
                    }
                    let before = next.len();
                    let k = find_or_insert(&mut next, Belief(v.into_iter().map(|x| x / p_o).collect()));
                    if next.len() > before {
                        bump(&mut nodes, guard)?;
                    }
                    outs.push((p_o, k));
                }
                per_action.push(outs);
            }
            children.push(per_action);
        }
        levels[t].children = children;
        levels.push(Level {
            beliefs: next,
            children: Vec::new(),
        });
    }
    // backward induction
    let mut values: Vec<f64> = Vec::new();
    for t in (0..horizon).rev() {
        let level = &levels[t];
        let current: Vec<f64> = level
            .beliefs
            .iter()
            .enumerate()
            .map(|(k, b)| {
                (0..pomdp.num_actions)
                    .map(|a| {
                        let mut q = immediate(pomdp, &b.0, a);
                        if t + 1 < horizon {
                            let future: f64 =
                                level.children[k][a].iter().map(|&(p, c)| p * values[c]).sum();
                            q += pomdp.discount * future;
                        }
                        q
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        values = current;
    }
    let value = roots.iter().map(|&(p, k)| p * values[k]).sum();
    Ok(BeliefSolution {
        value,
        nodes,
        level_sizes: levels.iter().map(|l| l.beliefs.len()).collect(),
    })
}

/// Expected return of a history-independent stochastic policy
/// `π(a)`: `Σ_{t<H} γ^t E[R(s_t, a_t)]`.
pub fn open_loop_value(
    pomdp: &TabularInformedPomdp,
    action_probs: &[f64],
    horizon: usize,
    discount: f64,
) -> Result<f64> {
    if action_probs.len() != pomdp.num_actions {
        return Err(Error::Shape("action distribution length differs from |A|".into()));
    }
    let mut dist = pomdp.initial.clone();
    let mut value = 0.0;
    let mut scale = 1.0;
    for _ in 0..horizon {
        for (a, &pa) in action_probs.iter().enumerate() {
            value += scale * pa * immediate(pomdp, &dist, a);
        }
        let mut next = vec![0.0; pomdp.num_states];
        for (a, &pa) in action_probs.iter().enumerate() {
            for (n, x) in next.iter_mut().zip(predict(pomdp, &dist, a)) {
                *n += pa * x;
            }
        }
        dist = next;
        scale *= discount;
    }
    Ok(value)
}
