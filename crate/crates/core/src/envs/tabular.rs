//! Finite informed POMDPs `(S, A, I, O, T, R, Ĩ, Õ, P, γ)` with the
//! `s → i → o` factorization built into the representation: the observation
//! table is indexed by information only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{one_hot, Action, ActionSpace, EnvDescriptor, Environment, InformedStep, Reset};
use crate::{Error, Result};

pub const TIGER_CUE_ACCURACY: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularInformedPomdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_infos: usize,
    pub num_obs: usize,
    /// `P(s)`.
    pub initial: Vec<f64>,
    /// `T(s' | s, a)` as `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `R(s, a)` as `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    /// `Ĩ(i | s)` as `information[s][i]`.
    pub information: Vec<Vec<f64>>,
    /// `Õ(o | i)` as `observation[i][o]`.
    pub observation: Vec<Vec<f64>>,
    pub discount: f64,
    /// Vector encoding of each information symbol; one-hot when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub information_features: Option<Vec<Vec<f64>>>,
    /// Vector encoding of each observation symbol; one-hot when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_features: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularSizes {
    pub states: usize,
    pub actions: usize,
    pub infos: usize,
    pub observations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoMode {
    /// Dirichlet rows for `Ĩ`.
    Random,
    /// `i = s`: `|I| = |S|` and `Ĩ` is the identity channel.
    State,
}

fn dirichlet_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= s;
    }
    row
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::Contract(format!("{what}: negative or non-finite probability")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Contract(format!("{what}: row sums to {s}")));
    }
    Ok(())
}

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_row(rng: &mut impl Rng, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

impl TabularInformedPomdp {
    /// Random instance with Dirichlet(1) rows and rewards uniform in `[-1, 1]`.
    pub fn generate(sizes: TabularSizes, mode: InfoMode, seed: u64) -> Self {
        assert!(
            sizes.states >= 1 && sizes.actions >= 1 && sizes.infos >= 1 && sizes.observations >= 1,
            "all sizes must be at least 1"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ns = sizes.states;
        let ni = match mode {
            InfoMode::Random => sizes.infos,
            InfoMode::State => ns,
        };
        let initial = dirichlet_row(&mut rng, ns);
        let transition = (0..ns)
            .map(|_| (0..sizes.actions).map(|_| dirichlet_row(&mut rng, ns)).collect())
            .collect();
        let reward = (0..ns)
            .map(|_| (0..sizes.actions).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let information = match mode {
            InfoMode::Random => (0..ns).map(|_| dirichlet_row(&mut rng, ni)).collect(),
            InfoMode::State => (0..ns).map(|s| one_hot(ns, s)).collect(),
        };
        let observation = (0..ni)
            .map(|_| dirichlet_row(&mut rng, sizes.observations))
            .collect();
        Self {
            num_states: ns,
            num_actions: sizes.actions,
            num_infos: ni,
            num_obs: sizes.observations,
            initial,
            transition,
            reward,
            information,
            observation,
            discount: 0.95,
            information_features: None,
            observation_features: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na, ni, no) = (self.num_states, self.num_actions, self.num_infos, self.num_obs);
        if ns == 0 || na == 0 || ni == 0 || no == 0 {
            return Err(Error::Contract("tabular sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Contract(format!("discount {} outside [0,1)", self.discount)));
        }
        let shape_err = |what: &str| Error::Shape(format!("tabular table `{what}` has wrong shape"));
        if self.initial.len() != ns {
            return Err(shape_err("initial"));
        }
        check_row(&self.initial, "P")?;
        if self.transition.len() != ns || self.reward.len() != ns || self.information.len() != ns {
            return Err(shape_err("transition/reward/information"));
        }
        for s in 0..ns {
            if self.transition[s].len() != na || self.reward[s].len() != na {
                return Err(shape_err("transition/reward"));
            }
            for a in 0..na {
                if self.transition[s][a].len() != ns {
                    return Err(shape_err("transition"));
                }
                check_row(&self.transition[s][a], &format!("T(·|{s},{a})"))?;
                if !self.reward[s][a].is_finite() {
                    return Err(Error::Contract(format!("R({s},{a}) is not finite")));
                }
            }
            if self.information[s].len() != ni {
                return Err(shape_err("information"));
            }
            check_row(&self.information[s], &format!("Ĩ(·|{s})"))?;
        }
        if self.observation.len() != ni {
            return Err(shape_err("observation"));
        }
        for i in 0..ni {
            if self.observation[i].len() != no {
                return Err(shape_err("observation"));
            }
            check_row(&self.observation[i], &format!("Õ(·|{i})"))?;
        }
        if let Some(f) = &self.information_features {
            if f.len() != ni || f.iter().any(|v| v.len() != f[0].len() || v.is_empty()) {
                return Err(shape_err("information_features"));
            }
        }
        if let Some(f) = &self.observation_features {
            if f.len() != no || f.iter().any(|v| v.len() != f[0].len() || v.is_empty()) {
                return Err(shape_err("observation_features"));
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> TabularSizes {
        TabularSizes {
            states: self.num_states,
            actions: self.num_actions,
            infos: self.num_infos,
            observations: self.num_obs,
        }
    }

    /// Execution-POMDP observation model `O(o | s) = Σ_i Õ(o | i) Ĩ(i | s)`.
    pub fn obs_given_state(&self, s: usize, o: usize) -> f64 {
        (0..self.num_infos)
            .map(|i| self.observation[i][o] * self.information[s][i])
            .sum()
    }

    /// States that are absorbing under every action and pay nothing.
    pub fn terminal_states(&self) -> Vec<bool> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .all(|a| self.transition[s][a][s] == 1.0 && self.reward[s][a] == 0.0)
            })
            .collect()
    }

    pub fn information_vector(&self, i: usize) -> Vec<f64> {
        match &self.information_features {
            Some(f) => f[i].clone(),
            None => one_hot(self.num_infos, i),
        }
    }

    pub fn observation_vector(&self, o: usize) -> Vec<f64> {
        match &self.observation_features {
            Some(f) => f[o].clone(),
            None => one_hot(self.num_obs, o),
        }
    }

    pub fn info_dim(&self) -> usize {
        self.information_features
            .as_ref()
            .map_or(self.num_infos, |f| f[0].len())
    }

    pub fn obs_dim(&self) -> usize {
        self.observation_features
            .as_ref()
            .map_or(self.num_obs, |f| f[0].len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// The classic tiger problem as an episodic informed POMDP.
///
/// States: tiger left/right before listening, tiger left/right after a
/// listen, and an absorbing end state. Actions: listen, open left, open
/// right. Information is the one-hot true state; the observation is a cue
/// (correct with probability 0.85) after listening and "no cue" otherwise.
pub fn tiger() -> TabularInformedPomdp {
    const LISTEN: f64 = -0.1;
    const CORRECT: f64 = 1.0;
    const WRONG: f64 = -10.0;
    // states: 0 L0, 1 R0, 2 L1, 3 R1, 4 done
    // obs: 0 no-cue, 1 hear-left, 2 hear-right
    let ns = 5;
    let done = 4;
    let mut transition = vec![vec![vec![0.0; ns]; 3]; ns];
    let mut reward = vec![vec![0.0; 3]; ns];
    for s in 0..4 {
        let left = s % 2 == 0;
        transition[s][0][if left { 2 } else { 3 }] = 1.0;
        transition[s][1][done] = 1.0;
        transition[s][2][done] = 1.0;
        reward[s][0] = LISTEN;
        // opening the tiger's door is the wrong choice
        reward[s][1] = if left { WRONG } else { CORRECT };
        reward[s][2] = if left { CORRECT } else { WRONG };
    }
    for a in 0..3 {
        transition[done][a][done] = 1.0;
    }
    let acc = TIGER_CUE_ACCURACY;
    let observation = vec![
        vec![1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![0.0, acc, 1.0 - acc],
        vec![0.0, 1.0 - acc, acc],
        vec![1.0, 0.0, 0.0],
    ];
    TabularInformedPomdp {
        num_states: ns,
        num_actions: 3,
        num_infos: ns,
        num_obs: 3,
        initial: vec![0.5, 0.5, 0.0, 0.0, 0.0],
        transition,
        reward,
        information: (0..ns).map(|s| one_hot(ns, s)).collect(),
        observation,
        discount: 0.95,
        information_features: None,
        observation_features: None,
    }
}

/// T-maze with a corridor of `length` cells ending at a junction.
///
/// The goal side (up or down) is drawn uniformly and shown as a cue only in
/// the very first observation. Actions: forward, up, down. Up/down in the
/// corridor are no-ops; at the junction they end the episode with +4 for the
/// goal side and −0.1 otherwise. Information is `(observation, goal side)`.
pub fn tmaze(length: usize) -> TabularInformedPomdp {
    assert!(length >= 1, "corridor length must be positive");
    const SUCCESS: f64 = 4.0;
    const FAILURE: f64 = -0.1;
    // obs symbols: 0 cue-up, 1 cue-down, 2 corridor, 3 junction, 4 end
    let no = 5;
    // per side: 0 start, 1..=length+1 corridor cells 0..=length, length+2 end
    let per_side = length + 3;
    let ns = 2 * per_side;
    let idx = |side: usize, k: usize| side * per_side + k;
    let corridor = |side: usize, p: usize| idx(side, 1 + p);
    let end = |side: usize| idx(side, length + 2);

    let mut transition = vec![vec![vec![0.0; ns]; 3]; ns];
    let mut reward = vec![vec![0.0; 3]; ns];
    let mut obs_symbol = vec![0usize; ns];
    for side in 0..2 {
        let s0 = idx(side, 0);
        transition[s0][0][corridor(side, 1.min(length))] = 1.0;
        transition[s0][1][corridor(side, 0)] = 1.0;
        transition[s0][2][corridor(side, 0)] = 1.0;
        obs_symbol[s0] = side;
        for p in 0..=length {
            let s = corridor(side, p);
            obs_symbol[s] = if p == length { 3 } else { 2 };
            if p < length {
                transition[s][0][corridor(side, p + 1)] = 1.0;
                transition[s][1][s] = 1.0;
                transition[s][2][s] = 1.0;
            } else {
                transition[s][0][s] = 1.0;
                transition[s][1][end(side)] = 1.0;
                transition[s][2][end(side)] = 1.0;
                reward[s][1] = if side == 0 { SUCCESS } else { FAILURE };
                reward[s][2] = if side == 1 { SUCCESS } else { FAILURE };
            }
        }
        let e = end(side);
        obs_symbol[e] = 4;
        for a in 0..3 {
            transition[e][a][e] = 1.0;
        }
    }
    // information symbol = obs_symbol * 2 + side
    let ni = no * 2;
    let information = (0..ns)
        .map(|s| one_hot(ni, obs_symbol[s] * 2 + s / per_side))
        .collect();
    let observation = (0..ni).map(|i| one_hot(no, i / 2)).collect();
    let information_features = (0..ni)
        .map(|i| {
            let mut v = one_hot(no, i / 2);
            v.extend(one_hot(2, i % 2));
            v
        })
        .collect();
    let mut initial = vec![0.0; ns];
    initial[idx(0, 0)] = 0.5;
    initial[idx(1, 0)] = 0.5;
    TabularInformedPomdp {
        num_states: ns,
        num_actions: 3,
        num_infos: ni,
        num_obs: no,
        initial,
        transition,
        reward,
        information,
        observation,
        discount: 0.95,
        information_features: Some(information_features),
        observation_features: None,
    }
}

/// Runs a [`TabularInformedPomdp`] as an [`Environment`] with vector-encoded
/// symbols. Episodes end on entering a terminal state or after `max_steps`.
pub struct TabularEnv {
    pomdp: TabularInformedPomdp,
    descriptor: EnvDescriptor,
    terminal: Vec<bool>,
    max_steps: Option<usize>,
    success_reward: Option<f64>,
    rng: ChaCha8Rng,
    state: usize,
    steps: usize,
    done: bool,
    last_reward: f64,
    /// Symbol indices of the latest information and observation.
    pub last_symbols: (usize, usize),
}

impl TabularEnv {
    pub fn new(name: impl Into<String>, pomdp: TabularInformedPomdp) -> Result<Self> {
        pomdp.validate()?;
        let descriptor = EnvDescriptor {
            name: name.into(),
            action_space: ActionSpace::Discrete(pomdp.num_actions),
            obs_dim: pomdp.obs_dim(),
            info_dim: pomdp.info_dim(),
            discount: pomdp.discount,
        };
        Ok(Self {
            terminal: pomdp.terminal_states(),
            pomdp,
            descriptor,
            max_steps: None,
            success_reward: None,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: 0,
            steps: 0,
            done: true,
            last_reward: 0.0,
            last_symbols: (0, 0),
        })
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = Some(max_steps);
        self
    }

    /// Episodes ending on a reward of at least `threshold` count as successes.
    pub fn with_success_reward(mut self, threshold: f64) -> Self {
        self.success_reward = Some(threshold);
        self
    }

    pub fn pomdp(&self) -> &TabularInformedPomdp {
        &self.pomdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn emit(&mut self) -> (Vec<f64>, Vec<f64>) {
        let i = sample_row(&mut self.rng, &self.pomdp.information[self.state]);
        let o = sample_row(&mut self.rng, &self.pomdp.observation[i]);
        self.last_symbols = (i, o);
        (self.pomdp.information_vector(i), self.pomdp.observation_vector(o))
    }
}

impl Environment for TabularEnv {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: u64) -> Reset {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = sample_row(&mut self.rng, &self.pomdp.initial);
        self.steps = 0;
        self.done = false;
        self.last_reward = 0.0;
        let (information, observation) = self.emit();
        Reset {
            information,
            observation,
            continuation: true,
        }
    }

    fn step(&mut self, action: &Action) -> Result<InformedStep> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        self.descriptor.action_space.check(action)?;
        let Action::Discrete(a) = *action else {
            unreachable!("checked against a discrete action space")
        };
        let reward = self.pomdp.reward[self.state][a];
        self.state = sample_row(&mut self.rng, &self.pomdp.transition[self.state][a]);
        self.steps += 1;
        let (information, observation) = self.emit();
        let timed_out = self.max_steps.is_some_and(|m| self.steps >= m);
        let continuation = !self.terminal[self.state] && !timed_out;
        self.done = !continuation;
        self.last_reward = reward;
        Ok(InformedStep {
            reward,
            information,
            observation,
            continuation,
        })
    }

    fn success(&self) -> Option<bool> {
        let threshold = self.success_reward?;
        if !self.done {
            return None;
        }
        Some(self.terminal[self.state] && self.last_reward >= threshold)
    }
}
