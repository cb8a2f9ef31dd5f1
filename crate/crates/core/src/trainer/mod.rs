//! The outer training loop: act with the execution policy, store windows,
//! and interleave world-model and behaviour updates at a fixed train ratio.
//!
//! Each environment step runs the filtering policy (encoder, recurrence,
//! policy), appends the transition to the episode, stores the window of the
//! last `W` entries, then performs gradient phases while
//! `|B| ≥ F ∧ g < R·s`. A gradient phase fits the world model on `N`
//! sampled windows, then trains the policy and critic on imagination started
//! from every encoded step of that batch.

mod config;
mod replay;

pub use config::TrainConfig;
pub use replay::ReplayBuffer;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::behavior::{Behavior, BehaviorReport, Starts};
use crate::diff::{load_params, optimizer_step, save_params, OptimizerState, ParamSet, Tape, Tensor};
use crate::envs::{make_env, Action, EnvDescriptor, Environment, ExecutionEnv, InformationBinding};
use crate::worldmodel::{LossBreakdown, ModelDims, SequenceBatch, Window, WindowEntry, WorldModel};
use crate::{Error, Result};

pub const METRICS_HEADER: &str =
    "env_step,grad_step,episode,return,length,loss_total,loss_info,loss_reward,loss_cont,loss_kl,wall_s";
pub const EVAL_HEADER: &str = "env_step,grad_step,episodes,mean_return,min_return,max_return,success_rate";

/// Version string recorded in run manifests.
pub fn code_version() -> String {
    format!("iwm-core {}", env!("CARGO_PKG_VERSION"))
}

/// Git-style object hash `sha256("blob <len>\0<content>")`, hex encoded.
pub fn content_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent random streams of one run.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_ENV: u64 = 2;
const STREAM_ACT: u64 = 3;
const STREAM_REPLAY: u64 = 4;
const STREAM_LEARN: u64 = 5;
const STREAM_EVAL: u64 = 6;

/// Losses of one gradient phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub world: LossBreakdown,
    pub behavior: BehaviorReport,
}

/// Recurrent state of the execution policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecState {
    pub z: Tensor,
    pub prev_action: Tensor,
}

/// World model, behaviour and the world-model optimizer.
#[derive(Clone, Debug)]
pub struct Agent {
    pub descriptor: EnvDescriptor,
    pub world: WorldModel,
    pub world_opt: OptimizerState,
    pub behavior: Behavior,
}

fn replace_params(target: &mut ParamSet, source: ParamSet, what: &str) -> Result<()> {
    let compatible = source.names() == target.names()
        && source
            .tensors()
            .iter()
            .zip(target.tensors())
            .all(|(a, b)| a.shape() == b.shape());
    if !compatible {
        return Err(Error::Checkpoint(format!("{what} parameters do not match the architecture")));
    }
    *target = source;
    Ok(())
}

/// Run metadata stored next to checkpoint parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Sidecar {
    config: serde_json::Value,
    descriptor: EnvDescriptor,
    gamma: f64,
    env_step: u64,
    grad_step: u64,
}

fn sidecar_path(stem: &Path) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

impl Agent {
    pub fn new(config: &TrainConfig, descriptor: EnvDescriptor, rng: &mut impl Rng) -> Result<Self> {
        descriptor.validate()?;
        let dims = ModelDims {
            action: descriptor.action_space.encoded_dim(),
            obs: descriptor.obs_dim,
            info: descriptor.info_dim,
        };
        let world = WorldModel::new(config.world_model()?, dims, rng)?;
        let world_opt = OptimizerState::new("world", &world.params, config.model_optimizer());
        let gamma = config.resolve_gamma(descriptor.discount);
        let behavior = Behavior::new(
            descriptor.action_space.clone(),
            world.z_dim(),
            config.behavior(gamma)?,
            rng,
        )?;
        Ok(Self {
            descriptor,
            world,
            world_opt,
            behavior,
        })
    }

    /// World-model update on `windows`, then a behaviour update on
    /// imagination from the encoded batch.
    pub fn train_step(&mut self, windows: &[&Window], rng: &mut impl Rng) -> Result<StepLosses> {
        let batch = SequenceBatch::from_windows(windows)?;
        let noise = self.world.sample_noise(rng, batch.batch_size(), batch.len());
        let mut tape = Tape::new();
        let p = self.world.bind(&mut tape, true);
        let (vars, enc) = self.world.elbo_loss(&mut tape, &p, &batch, &noise)?;
        let world = vars.breakdown(&tape)?;
        let starts = Starts::from_encoded(&tape, &enc, &batch)?;
        tape.backward(vars.total)?;
        let grads = self.world.params.grads(&tape, &p);
        drop(tape);
        optimizer_step(&mut self.world.params, &grads, &mut self.world_opt)?;
        let behavior = self.behavior.update(&self.world.dynamics(), &starts, rng)?;
        Ok(StepLosses { world, behavior })
    }

    pub fn initial_state(&self) -> ExecState {
        ExecState {
            z: Tensor::zeros(1, self.world.z_dim()),
            prev_action: Tensor::row(&self.descriptor.action_space.null()),
        }
    }

    /// Execution policy: `e ~ q^e(z, a, o)`, `z ← u(z, a, e)`, `a ~ g(z)`.
    /// Reads only the observation.
    pub fn act(&self, state: &mut ExecState, observation: &[f64], rng: &mut impl Rng) -> Result<Action> {
        if observation.len() != self.descriptor.obs_dim {
            return Err(Error::Shape(format!(
                "observation of width {} for a model expecting {}",
                observation.len(),
                self.descriptor.obs_dim
            )));
        }
        let noise = self.world.config.latent.noise(rng, 1);
        let (z, _) = self.world.observe(&state.z, &state.prev_action, &Tensor::row(observation), &noise)?;
        let action_noise = self.behavior.policy.noise(rng, 1);
        let (mut actions, encoded) = self.behavior.policy.sample(&z, &action_noise)?;
        state.z = z;
        state.prev_action = encoded;
        Ok(actions.remove(0))
    }

    fn save(&self, stem: &Path, config: &TrainConfig, env_step: u64, grad_step: u64) -> Result<()> {
        if let Some(dir) = stem.parent() {
            fs::create_dir_all(dir)?;
        }
        save_params(
            stem,
            &[
                ("world", &self.world.params),
                ("policy", &self.behavior.policy.params),
                ("critic", &self.behavior.critic.params),
            ],
        )?;
        let sidecar = Sidecar {
            config: config.to_json(),
            descriptor: self.descriptor.clone(),
            gamma: self.behavior.config.gamma,
            env_step,
            grad_step,
        };
        fs::write(sidecar_path(stem), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Rebuilds an agent from a checkpoint written by [`run`].
    pub fn load(stem: &Path) -> Result<(Self, TrainConfig)> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(stem))?)?;
        let config = TrainConfig::from_json_str(&serde_json::to_string_pretty(&sidecar.config)?)?;
        let mut agent = Self::new(&config, sidecar.descriptor, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (group, params) in load_params(stem)? {
            match group.as_str() {
                "world" => agent.world.set_params(params)?,
                "policy" => replace_params(&mut agent.behavior.policy.params, params, "policy")?,
                "critic" => replace_params(&mut agent.behavior.critic.params, params, "critic")?,
                other => return Err(Error::Checkpoint(format!("unexpected parameter group `{other}`"))),
            }
        }
        Ok((agent, config))
    }
}

/// Undiscounted evaluation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub mean_length: f64,
    /// Fraction of successful episodes, for tasks that define success.
    pub success_rate: Option<f64>,
}

impl EvalStats {
    fn from_episodes(returns: &[f64], lengths: &[usize], successes: &[Option<bool>]) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let success_rate = successes
            .iter()
            .map(|s| s.map(f64::from))
            .sum::<Option<f64>>()
            .map(|k| k / n);
        Self {
            episodes: returns.len(),
            mean,
            std: var.sqrt(),
            min: returns.iter().cloned().fold(f64::INFINITY, f64::min),
            max: returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean_length: lengths.iter().sum::<usize>() as f64 / n,
            success_rate,
        }
    }
}

/// Runs the execution policy for `episodes` episodes. The environment is
/// wrapped in [`ExecutionEnv`], so the information channel is unreachable.
pub fn evaluate_agent<E: Environment>(
    agent: &Agent,
    env: &mut ExecutionEnv<E>,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::Contract("evaluation needs at least one episode".into()));
    }
    let d = env.descriptor();
    if d.obs_dim != agent.descriptor.obs_dim || d.action_space != agent.descriptor.action_space {
        return Err(Error::Contract(format!(
            "environment `{}` does not match the agent's interface (trained on `{}`)",
            d.name, agent.descriptor.name
        )));
    }
    let mut seeds = stream(seed, STREAM_ENV);
    let mut rng = stream(seed, STREAM_ACT);
    let mut returns = Vec::with_capacity(episodes);
    let mut lengths = Vec::with_capacity(episodes);
    let mut successes = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(seeds.random());
        let mut state = agent.initial_state();
        let (mut ret, mut len) = (0.0, 0);
        loop {
            let action = agent.act(&mut state, &obs, &mut rng)?;
            let step = env.step(&action)?;
            ret += step.reward;
            len += 1;
            obs = step.observation;
            if !step.continuation {
                break;
            }
        }
        returns.push(ret);
        lengths.push(len);
        successes.push(env.success());
    }
    Ok(EvalStats::from_episodes(&returns, &lengths, &successes))
}

/// Loads a checkpoint and evaluates it on `env_name` (default: the
/// environment it was trained on).
pub fn evaluate(checkpoint: &Path, env_name: Option<&str>, episodes: usize, seed: u64) -> Result<EvalStats> {
    let (agent, _) = Agent::load(checkpoint)?;
    let name = env_name.unwrap_or(&agent.descriptor.name).to_string();
    let mut env = ExecutionEnv::new(make_env(&name, InformationBinding::Informed)?);
    evaluate_agent(&agent, &mut env, episodes, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub env_step: u64,
    pub grad_step: u64,
    pub stats: EvalStats,
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub env_steps: u64,
    pub grad_steps: u64,
    pub episodes: u64,
    /// Losses of every gradient phase, in order.
    pub losses: Vec<StepLosses>,
    pub evaluations: Vec<EvalRecord>,
    pub final_checkpoint: PathBuf,
    pub agent: Agent,
}

impl RunOutcome {
    /// First evaluation step whose success rate reached `threshold`.
    pub fn steps_to_success(&self, threshold: f64) -> Option<u64> {
        self.evaluations
            .iter()
            .find(|e| e.stats.success_rate.is_some_and(|s| s >= threshold))
            .map(|e| e.env_step)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Accumulates losses between metric rows.
#[derive(Default)]
struct LossMeter {
    sum: [f64; 5],
    count: usize,
}

impl LossMeter {
    fn add(&mut self, l: &LossBreakdown) {
        for (s, v) in self.sum.iter_mut().zip([l.total, l.info_nll, l.reward_nll, l.cont_nll, l.kl]) {
            *s += v;
        }
        self.count += 1;
    }

    fn take(&mut self) -> [Option<f64>; 5] {
        let out = if self.count == 0 {
            [None; 5]
        } else {
            self.sum.map(|s| Some(s / self.count as f64))
        };
        *self = Self::default();
        out
    }
}

struct Metrics {
    out: BufWriter<File>,
    meter: LossMeter,
    started: Instant,
    wall_clock: bool,
}

impl Metrics {
    fn row(&mut self, s: u64, g: u64, episode: u64, ret: Option<f64>, len: Option<usize>) -> Result<()> {
        let l = self.meter.take();
        let wall = if self.wall_clock {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        writeln!(
            self.out,
            "{s},{g},{episode},{},{},{},{},{},{},{},{wall}",
            fmt_opt(ret),
            len.map_or_else(String::new, |n| n.to_string()),
            fmt_opt(l[0]),
            fmt_opt(l[1]),
            fmt_opt(l[2]),
            fmt_opt(l[3]),
            fmt_opt(l[4]),
        )?;
        Ok(())
    }
}

/// Window of the last `len` entries, left-padded at episode start.
fn last_window(entries: &[WindowEntry], len: usize, d: &EnvDescriptor) -> Window {
    let have = entries.len().min(len);
    let mut w = Vec::with_capacity(len);
    for _ in have..len {
        w.push(WindowEntry::padding(d.action_space.encoded_dim(), d.info_dim, d.obs_dim));
    }
    w.extend_from_slice(&entries[entries.len() - have..]);
    w
}

fn write_manifest(out: &Path, config: &TrainConfig, descriptor: &EnvDescriptor, gamma: f64, summary: serde_json::Value) -> Result<()> {
    let version = code_version();
    let config_json = config.to_json();
    let manifest = json!({
        "code_version": version,
        "code_hash": content_hash(&version),
        "config_hash": content_hash(&serde_json::to_string(&config_json)?),
        "config": config_json,
        "information": config.binding().label(),
        "environment": descriptor,
        "gamma": gamma,
        "summary": summary,
    });
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Trains from scratch, writing `metrics.csv`, `eval.csv`, `manifest.json`
/// and `checkpoints/` under `out`.
pub fn run(config: &TrainConfig, out: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out.join("checkpoints"))?;
    let mut env = make_env(&config.env, config.binding())?;
    let descriptor = env.descriptor().clone();
    let gamma = config.resolve_gamma(descriptor.discount);
    write_manifest(out, config, &descriptor, gamma, json!({"status": "running"}))?;

    let mut agent = Agent::new(config, descriptor.clone(), &mut stream(config.seed, STREAM_INIT))?;
    let mut env_seeds = stream(config.seed, STREAM_ENV);
    let mut act_rng = stream(config.seed, STREAM_ACT);
    let mut replay_rng = stream(config.seed, STREAM_REPLAY);
    let mut learn_rng = stream(config.seed, STREAM_LEARN);
    let mut eval_seeds = stream(config.seed, STREAM_EVAL);
    let mut eval_env = if config.eval_interval > 0 {
        Some(ExecutionEnv::new(make_env(&config.env, InformationBinding::Informed)?))
    } else {
        None
    };

    let mut metrics = Metrics {
        out: BufWriter::new(File::create(out.join("metrics.csv"))?),
        meter: LossMeter::default(),
        started: Instant::now(),
        wall_clock: config.wall_clock,
    };
    writeln!(metrics.out, "{METRICS_HEADER}")?;
    let mut eval_out = BufWriter::new(File::create(out.join("eval.csv"))?);
    writeln!(eval_out, "{EVAL_HEADER}")?;

    let mut buffer = ReplayBuffer::new(config.capacity)?;
    let (mut s, mut g, mut episodes) = (0u64, 0u64, 0u64);
    let mut losses = Vec::new();
    let mut evaluations = Vec::new();

    let reset = env.reset(env_seeds.random());
    let mut entries = vec![WindowEntry {
        prev_action: descriptor.action_space.null(),
        prev_reward: 0.0,
        information: reset.information,
        observation: reset.observation,
        continuation: true,
        valid: true,
    }];
    let mut state = agent.initial_state();
    let mut ep_return = 0.0;
    let mut stop = false;

    while s < config.steps && !stop {
        let obs = entries.last().expect("episode has an entry").observation.clone();
        let action = agent.act(&mut state, &obs, &mut act_rng)?;
        let step = env.step(&action)?;
        s += 1;
        ep_return += step.reward;
        let done = !step.continuation;
        entries.push(WindowEntry {
            prev_action: descriptor.action_space.encode(&action)?,
            prev_reward: step.reward,
            information: step.information,
            observation: step.observation,
            continuation: step.continuation,
            valid: true,
        });
        let t = entries.len() - 1;
        if !config.stride_window || t % config.window == 0 || done {
            buffer.add(last_window(&entries, config.window, &descriptor));
        }

        while s >= config.prefill && !buffer.is_empty() && (g as f64) < config.train_ratio * s as f64 {
            let windows = buffer.sample(config.batch, &mut replay_rng)?;
            let step_losses = agent.train_step(&windows, &mut learn_rng)?;
            metrics.meter.add(&step_losses.world);
            losses.push(step_losses);
            g += 1;
        }

        if done {
            episodes += 1;
            metrics.row(s, g, episodes, Some(ep_return), Some(t))?;
            let reset = env.reset(env_seeds.random());
            entries.clear();
            entries.push(WindowEntry {
                prev_action: descriptor.action_space.null(),
                prev_reward: 0.0,
                information: reset.information,
                observation: reset.observation,
                continuation: true,
                valid: true,
            });
            state = agent.initial_state();
            ep_return = 0.0;
        }
        if config.log_interval > 0 && s % config.log_interval == 0 {
            metrics.row(s, g, episodes, None, None)?;
        }
        if let Some(eval_env) = eval_env.as_mut() {
            if s % config.eval_interval == 0 {
                let stats = evaluate_agent(&agent, eval_env, config.eval_episodes, eval_seeds.random())?;
                writeln!(
                    eval_out,
                    "{s},{g},{},{},{},{},{}",
                    stats.episodes,
                    stats.mean,
                    stats.min,
                    stats.max,
                    fmt_opt(stats.success_rate)
                )?;
                eval_out.flush()?;
                stop = matches!((config.stop_success, stats.success_rate), (Some(t), Some(r)) if r >= t);
                evaluations.push(EvalRecord {
                    env_step: s,
                    grad_step: g,
                    stats,
                });
            }
        }
        if config.checkpoint_interval > 0 && s % config.checkpoint_interval == 0 {
            agent.save(&out.join("checkpoints").join(format!("step-{s:08}")), config, s, g)?;
            metrics.out.flush()?;
        }
    }
    metrics.out.flush()?;
    let final_checkpoint = out.join("checkpoints").join("final");
    agent.save(&final_checkpoint, config, s, g)?;
    write_manifest(
        out,
        config,
        &descriptor,
        gamma,
        json!({
            "status": "complete",
            "env_steps": s,
            "grad_steps": g,
            "episodes": episodes,
            "final_checkpoint": "checkpoints/final",
        }),
    )?;
    Ok(RunOutcome {
        env_steps: s,
        grad_steps: g,
        episodes,
        losses,
        evaluations,
        final_checkpoint,
        agent,
    })
}
