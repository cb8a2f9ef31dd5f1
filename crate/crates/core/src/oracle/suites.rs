//! Batch runners over random instances, producing JSON-serializable reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    belief_expectimax, brute_force_value, enumerated_elbo, exact_log_likelihood,
    markov_blanket_check, mi_comparison,
};
use crate::diff::Tape;
use crate::envs::{InfoMode, TabularInformedPomdp, TabularSizes};
use crate::worldmodel::{
    exact_elbo, LatentKind, ModelDims, SequenceAdapter, SequenceBatch, WindowEntry, WorldModel,
    WorldModelConfig,
};
use crate::{Error, Result};

pub const SUITES: [&str; 4] = ["mi", "sufficiency", "elbo", "markov-blanket"];

/// Slack allowed for the data-processing inequality.
const MI_SLACK: f64 = 1e-12;
/// Agreement required between history and belief expectimax.
const VALUE_TOLERANCE: f64 = 1e-9;
/// Agreement required for the Markov-blanket factorization.
const BLANKET_TOLERANCE: f64 = 1e-12;
/// Slack allowed for `ELBO ≤ log-likelihood` and for cross-checks.
const ELBO_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub seed: u64,
    pub depth: usize,
    pub pass: bool,
    /// Largest violation of the checked relation (0 when it holds).
    pub max_violation: f64,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub suite: String,
    pub count: usize,
    pub seed: u64,
    pub pass: bool,
    pub violations: usize,
    pub instances: Vec<InstanceReport>,
}

pub fn uniform_policy(num_actions: usize) -> impl Fn(&[usize]) -> Vec<f64> {
    move |_| vec![1.0 / num_actions as f64; num_actions]
}

fn instance_seed(seed: u64, k: usize) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).random()
}

fn random_sizes(rng: &mut impl Rng, max: usize) -> TabularSizes {
    TabularSizes {
        states: rng.random_range(1..=max),
        actions: rng.random_range(1..=max),
        infos: rng.random_range(1..=max),
        observations: rng.random_range(1..=max),
    }
}

/// Copy of `pomdp` whose observation is the information itself (`Õ = I`).
pub fn with_identity_observation(pomdp: &TabularInformedPomdp) -> TabularInformedPomdp {
    let mut p = pomdp.clone();
    p.num_obs = p.num_infos;
    p.observation = (0..p.num_infos)
        .map(|i| (0..p.num_infos).map(|o| f64::from(u8::from(i == o))).collect())
        .collect();
    p.observation_features = None;
    p
}

fn mi_instance(seed: u64) -> Result<InstanceReport> {
    let depth = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = random_sizes(&mut rng, 4);
    let pomdp = TabularInformedPomdp::generate(sizes, InfoMode::Random, seed);
    let policy = uniform_policy(sizes.actions);
    let records = mi_comparison(&pomdp, &policy, depth)?;
    let max_violation = records
        .iter()
        .map(|r| (r.obs - r.info).max(0.0))
        .fold(0.0, f64::max);
    let identity = with_identity_observation(&pomdp);
    let eq_records = mi_comparison(&identity, &policy, depth)?;
    let equality_exact = eq_records.iter().all(|r| r.info == r.obs);
    let pass = max_violation <= MI_SLACK && equality_exact;
    Ok(InstanceReport {
        seed,
        depth,
        pass,
        max_violation,
        detail: json!({
            "sizes": sizes,
            "pairs": records
                .iter()
                .map(|r| json!({"history": r.history, "action": r.action, "i_info": r.info, "i_obs": r.obs}))
                .collect::<Vec<_>>(),
            "identity_channel_equal": equality_exact,
        }),
    })
}

fn sufficiency_instance(seed: u64) -> Result<InstanceReport> {
    let depth = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = random_sizes(&mut rng, 4);
    let pomdp = TabularInformedPomdp::generate(sizes, InfoMode::Random, seed);
    let history = brute_force_value(&pomdp, depth)?;
    let belief = belief_expectimax(&pomdp, depth)?;
    let diff = (history.value - belief.value).abs();
    Ok(InstanceReport {
        seed,
        depth,
        pass: diff <= VALUE_TOLERANCE && belief.nodes <= history.nodes,
        max_violation: diff,
        detail: json!({
            "sizes": sizes,
            "history_value": history.value,
            "belief_value": belief.value,
            "history_nodes": history.nodes,
            "belief_nodes": belief.nodes,
        }),
    })
}

fn blanket_instance(seed: u64) -> Result<InstanceReport> {
    let depth = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = random_sizes(&mut rng, 4);
    let pomdp = TabularInformedPomdp::generate(sizes, InfoMode::Random, seed);
    let records = markov_blanket_check(&pomdp, &uniform_policy(sizes.actions), depth)?;
    let max_violation = records
        .iter()
        .map(|r| (r.factorized - r.direct).abs())
        .fold(0.0, f64::max);
    Ok(InstanceReport {
        seed,
        depth,
        pass: max_violation <= BLANKET_TOLERANCE,
        max_violation,
        detail: json!({"sizes": sizes, "nodes": records.len()}),
    })
}

/// Small random categorical world model with random windows and no padding.
pub fn toy_latent_problem(seed: u64, len: usize, batch: usize) -> Result<(WorldModel, SequenceBatch)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = WorldModelConfig {
        z_dim: 4,
        hidden: 8,
        layers: 1,
        latent: LatentKind::Categorical {
            groups: 1,
            classes: 2,
        },
        kl_balance: 0.5,
        free_bits: 0.0,
        cont_weight: 1.0,
    };
    let dims = ModelDims {
        action: 2,
        obs: 2,
        info: 2,
    };
    let mut model = WorldModel::new(config, dims, &mut rng)?;
    // random output layers so the decoders depend on the latent
    for t in model.params.tensors_mut() {
        for x in t.data_mut() {
            if *x == 0.0 {
                *x = rng.random_range(-0.5..0.5);
            }
        }
    }
    let windows: Vec<Vec<WindowEntry>> = (0..batch)
        .map(|_| {
            (0..len)
                .map(|w| {
                    let a = if w == 0 { 2 } else { rng.random_range(0..2) };
                    let mut prev_action = vec![0.0; 2];
                    if a < 2 {
                        prev_action[a] = 1.0;
                    }
                    WindowEntry {
                        prev_action,
                        prev_reward: rng.random_range(-1.0..1.0),
                        information: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        observation: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        continuation: rng.random_bool(0.8),
                        valid: true,
                    }
                })
                .collect()
        })
        .collect();
    let refs: Vec<&Vec<WindowEntry>> = windows.iter().collect();
    Ok((model, SequenceBatch::from_windows(&refs)?))
}

fn elbo_instance(seed: u64) -> Result<InstanceReport> {
    let len = 3;
    let (model, batch) = toy_latent_problem(seed, len, 2)?;
    let mut rows = Vec::new();
    let mut max_violation: f64 = 0.0;
    let mut elbo_sum = 0.0;
    for row in 0..batch.batch_size() {
        let adapter = SequenceAdapter::new(&model, &batch, row)?;
        let ll = exact_log_likelihood(&adapter)?;
        let elbo = enumerated_elbo(&adapter)?;
        max_violation = max_violation.max(elbo - ll);
        elbo_sum += elbo;
        rows.push(json!({"row": row, "log_likelihood": ll, "elbo": elbo}));
    }
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let tape_elbo = exact_elbo(&model, &mut tape, &p, &batch)?;
    let cross = (tape.item(tape_elbo) - elbo_sum / batch.batch_size() as f64).abs();
    Ok(InstanceReport {
        seed,
        depth: len,
        pass: max_violation <= ELBO_TOLERANCE && cross <= ELBO_TOLERANCE,
        max_violation: max_violation.max(0.0),
        detail: json!({"rows": rows, "tape_crosscheck_error": cross}),
    })
}

/// Runs `count` random instances of the named suite.
pub fn run_suite(name: &str, count: usize, seed: u64) -> Result<OracleReport> {
    let runner: fn(u64) -> Result<InstanceReport> = match name {
        "mi" => mi_instance,
        "sufficiency" => sufficiency_instance,
        "elbo" => elbo_instance,
        "markov-blanket" => blanket_instance,
        other => {
            return Err(Error::Config(format!(
                "unknown oracle suite `{other}` (expected one of {})",
                SUITES.join(", ")
            )))
        }
    };
    let instances = (0..count)
        .map(|k| runner(instance_seed(seed, k)))
        .collect::<Result<Vec<_>>>()?;
    let violations = instances.iter().filter(|r| !r.pass).count();
    Ok(OracleReport {
        suite: name.to_string(),
        count,
        seed,
        pass: violations == 0,
        violations,
        instances,
    })
}
