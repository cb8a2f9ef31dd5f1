//! Run configuration: a flat JSON object with `env.*`, `train.*` and
//! `model.*` keys. Unknown keys and ill-typed values are errors that name
//! the offending line.

use serde_json::{Map, Value};

use crate::behavior::BehaviorConfig;
use crate::diff::AdamConfig;
use crate::envs::InformationBinding;
use crate::worldmodel::{LatentKind, WorldModelConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub informed: bool,
    /// Environment steps `S`.
    pub steps: u64,
    /// Steps before training `F`.
    pub prefill: u64,
    /// Gradient steps per environment step `R`.
    pub train_ratio: f64,
    /// Backpropagation horizon `W`.
    pub window: usize,
    /// Imagination horizon `K`.
    pub horizon: usize,
    /// Batch size `N`.
    pub batch: usize,
    /// Replay capacity `B`, in windows.
    pub capacity: usize,
    /// `None` uses the environment's own discount.
    pub gamma: Option<f64>,
    pub lambda: f64,
    pub seed: u64,
    /// Store one window every `W` steps instead of every step.
    pub stride_window: bool,
    pub log_interval: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub checkpoint_interval: u64,
    /// Stop once a periodic evaluation reaches this success rate.
    pub stop_success: Option<f64>,
    /// Record elapsed seconds in the metrics (breaks byte-identical reruns).
    pub wall_clock: bool,
    pub model_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip: f64,
    pub entropy: f64,
    pub return_decay: f64,
    pub z_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// `categorical` or `gaussian`.
    pub latent: String,
    pub groups: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub kl_balance: f64,
    pub free_bits: f64,
    pub cont_weight: f64,
    pub behavior_hidden: usize,
    pub behavior_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: String::new(),
            informed: true,
            steps: 100_000,
            prefill: 1024,
            train_ratio: 0.5,
            window: 16,
            horizon: 8,
            batch: 16,
            capacity: 100_000,
            gamma: None,
            lambda: 0.95,
            seed: 0,
            stride_window: false,
            log_interval: 1000,
            eval_interval: 0,
            eval_episodes: 10,
            checkpoint_interval: 0,
            stop_success: None,
            wall_clock: false,
            model_lr: 3e-4,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            grad_clip: 100.0,
            entropy: 3e-4,
            return_decay: 0.99,
            z_dim: 128,
            hidden: 128,
            layers: 1,
            latent: "categorical".into(),
            groups: 8,
            classes: 8,
            latent_dim: 16,
            kl_balance: 0.8,
            free_bits: 1.0,
            cont_weight: 1.0,
            behavior_hidden: 128,
            behavior_layers: 1,
        }
    }
}

/// 1-based line of the first occurrence of `"key"` in `text`.
fn line_of(text: &str, key: &str) -> usize {
    let quoted = format!("\"{key}\"");
    text.find(&quoted)
        .map_or(0, |pos| text[..pos].matches('\n').count() + 1)
}

fn type_error(key: &str, want: &str, v: &Value) -> String {
    format!("`{key}` must be {want}, got {v}")
}

fn as_u64(key: &str, v: &Value) -> std::result::Result<u64, String> {
    v.as_u64().ok_or_else(|| type_error(key, "a non-negative integer", v))
}

fn as_usize(key: &str, v: &Value) -> std::result::Result<usize, String> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_f64(key: &str, v: &Value) -> std::result::Result<f64, String> {
    v.as_f64().ok_or_else(|| type_error(key, "a number", v))
}

fn as_bool(key: &str, v: &Value) -> std::result::Result<bool, String> {
    v.as_bool().ok_or_else(|| type_error(key, "true or false", v))
}

fn as_string(key: &str, v: &Value) -> std::result::Result<String, String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| type_error(key, "a string", v))
}

impl TrainConfig {
    /// Every recognized key, in manifest order.
    pub const KEYS: [&'static str; 37] = [
        "env.name",
        "env.informed",
        "train.steps",
        "train.prefill",
        "train.train_ratio",
        "train.window",
        "train.horizon",
        "train.batch",
        "train.capacity",
        "train.gamma",
        "train.lambda",
        "train.seed",
        "train.stride_window",
        "train.log_interval",
        "train.eval_interval",
        "train.eval_episodes",
        "train.checkpoint_interval",
        "train.stop_success",
        "train.wall_clock",
        "train.model_lr",
        "train.actor_lr",
        "train.critic_lr",
        "train.grad_clip",
        "train.entropy",
        "train.return_decay",
        "model.z_dim",
        "model.hidden",
        "model.layers",
        "model.latent",
        "model.groups",
        "model.classes",
        "model.latent_dim",
        "model.kl_balance",
        "model.free_bits",
        "model.cont_weight",
        "model.behavior_hidden",
        "model.behavior_layers",
    ];

    /// Sets one key; `Err` carries a message without location.
    pub fn set(&mut self, key: &str, v: &Value) -> std::result::Result<(), String> {
        match key {
            "env.name" => self.env = as_string(key, v)?,
            "env.informed" => self.informed = as_bool(key, v)?,
            "train.steps" => self.steps = as_u64(key, v)?,
            "train.prefill" => self.prefill = as_u64(key, v)?,
            "train.train_ratio" => self.train_ratio = as_f64(key, v)?,
            "train.window" => self.window = as_usize(key, v)?,
            "train.horizon" => self.horizon = as_usize(key, v)?,
            "train.batch" => self.batch = as_usize(key, v)?,
            "train.capacity" => self.capacity = as_usize(key, v)?,
            "train.gamma" => {
                self.gamma = if v.is_null() {
                    None
                } else {
                    Some(as_f64(key, v)?)
                }
            }
            "train.lambda" => self.lambda = as_f64(key, v)?,
            "train.seed" => self.seed = as_u64(key, v)?,
            "train.stride_window" => self.stride_window = as_bool(key, v)?,
            "train.log_interval" => self.log_interval = as_u64(key, v)?,
            "train.eval_interval" => self.eval_interval = as_u64(key, v)?,
            "train.eval_episodes" => self.eval_episodes = as_usize(key, v)?,
            "train.checkpoint_interval" => self.checkpoint_interval = as_u64(key, v)?,
            "train.stop_success" => {
                self.stop_success = if v.is_null() {
                    None
                } else {
                    Some(as_f64(key, v)?)
                }
            }
            "train.wall_clock" => self.wall_clock = as_bool(key, v)?,
            "train.model_lr" => self.model_lr = as_f64(key, v)?,
            "train.actor_lr" => self.actor_lr = as_f64(key, v)?,
            "train.critic_lr" => self.critic_lr = as_f64(key, v)?,
            "train.grad_clip" => self.grad_clip = as_f64(key, v)?,
            "train.entropy" => self.entropy = as_f64(key, v)?,
            "train.return_decay" => self.return_decay = as_f64(key, v)?,
            "model.z_dim" => self.z_dim = as_usize(key, v)?,
            "model.hidden" => self.hidden = as_usize(key, v)?,
            "model.layers" => self.layers = as_usize(key, v)?,
            "model.latent" => self.latent = as_string(key, v)?,
            "model.groups" => self.groups = as_usize(key, v)?,
            "model.classes" => self.classes = as_usize(key, v)?,
            "model.latent_dim" => self.latent_dim = as_usize(key, v)?,
            "model.kl_balance" => self.kl_balance = as_f64(key, v)?,
            "model.free_bits" => self.free_bits = as_f64(key, v)?,
            "model.cont_weight" => self.cont_weight = as_f64(key, v)?,
            "model.behavior_hidden" => self.behavior_hidden = as_usize(key, v)?,
            "model.behavior_layers" => self.behavior_layers = as_usize(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses and validates a configuration file's contents.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}: {e}", e.line())))?;
        let Value::Object(map) = root else {
            return Err(Error::Config("line 1: configuration must be a JSON object".into()));
        };
        let mut config = Self::default();
        for (key, v) in &map {
            config
                .set(key, v)
                .map_err(|m| Error::Config(format!("line {}: {m}", line_of(text, key))))?;
        }
        if config.env.is_empty() {
            return Err(Error::Config("missing required key `env.name`".into()));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.window < 2 {
            return fail(format!("train.window = {} must be at least 2", self.window));
        }
        if self.horizon < 1 || self.batch < 1 {
            return fail("train.horizon and train.batch must be at least 1".into());
        }
        if self.capacity < 1 || self.prefill > self.capacity as u64 {
            return fail(format!(
                "train.prefill = {} must not exceed train.capacity = {}",
                self.prefill, self.capacity
            ));
        }
        if !(self.train_ratio >= 0.0) || !self.train_ratio.is_finite() {
            return fail(format!("train.train_ratio = {} must be ≥ 0", self.train_ratio));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return fail(format!("train.gamma = {g} must lie in [0,1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("train.lambda = {} must lie in [0,1]", self.lambda));
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return fail("train.eval_episodes must be positive when evaluating".into());
        }
        for (k, lr) in [
            ("train.model_lr", self.model_lr),
            ("train.actor_lr", self.actor_lr),
            ("train.critic_lr", self.critic_lr),
            ("train.grad_clip", self.grad_clip),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return fail(format!("{k} = {lr} must be positive"));
            }
        }
        self.world_model()?.validate()?;
        self.behavior(0.9)?.validate()
    }

    pub fn binding(&self) -> InformationBinding {
        InformationBinding::from_informed(self.informed)
    }

    pub fn latent_kind(&self) -> Result<LatentKind> {
        match self.latent.as_str() {
            "categorical" => Ok(LatentKind::Categorical {
                groups: self.groups,
                classes: self.classes,
            }),
            "gaussian" => Ok(LatentKind::Gaussian {
                dim: self.latent_dim,
            }),
            other => Err(Error::Config(format!(
                "model.latent = `{other}` (expected `categorical` or `gaussian`)"
            ))),
        }
    }

    pub fn world_model(&self) -> Result<WorldModelConfig> {
        Ok(WorldModelConfig {
            z_dim: self.z_dim,
            hidden: self.hidden,
            layers: self.layers,
            latent: self.latent_kind()?,
            kl_balance: self.kl_balance,
            free_bits: self.free_bits,
            cont_weight: self.cont_weight,
        })
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            clip: self.grad_clip,
            ..AdamConfig::default()
        }
    }

    pub fn model_optimizer(&self) -> AdamConfig {
        self.adam(self.model_lr)
    }

    /// Behaviour settings given the resolved discount.
    pub fn behavior(&self, gamma: f64) -> Result<BehaviorConfig> {
        let c = BehaviorConfig {
            hidden: self.behavior_hidden,
            layers: self.behavior_layers,
            horizon: self.horizon,
            gamma,
            lambda: self.lambda,
            entropy_weight: self.entropy,
            return_decay: self.return_decay,
            actor: self.adam(self.actor_lr),
            critic: self.adam(self.critic_lr),
        };
        c.validate()?;
        Ok(c)
    }

    /// Explicit `train.gamma`, else the environment's declared discount.
    pub fn resolve_gamma(&self, env_discount: f64) -> f64 {
        self.gamma.unwrap_or(env_discount)
    }

    /// Flat JSON object of every key, in [`Self::KEYS`] order.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("env.name", self.env.clone().into());
        put("env.informed", self.informed.into());
        put("train.steps", self.steps.into());
        put("train.prefill", self.prefill.into());
        put("train.train_ratio", self.train_ratio.into());
        put("train.window", self.window.into());
        put("train.horizon", self.horizon.into());
        put("train.batch", self.batch.into());
        put("train.capacity", self.capacity.into());
        put("train.gamma", self.gamma.map_or(Value::Null, Value::from));
        put("train.lambda", self.lambda.into());
        put("train.seed", self.seed.into());
        put("train.stride_window", self.stride_window.into());
        put("train.log_interval", self.log_interval.into());
        put("train.eval_interval", self.eval_interval.into());
        put("train.eval_episodes", self.eval_episodes.into());
        put("train.checkpoint_interval", self.checkpoint_interval.into());
        put("train.stop_success", self.stop_success.map_or(Value::Null, Value::from));
        put("train.wall_clock", self.wall_clock.into());
        put("train.model_lr", self.model_lr.into());
        put("train.actor_lr", self.actor_lr.into());
        put("train.critic_lr", self.critic_lr.into());
        put("train.grad_clip", self.grad_clip.into());
        put("train.entropy", self.entropy.into());
        put("train.return_decay", self.return_decay.into());
        put("model.z_dim", self.z_dim.into());
        put("model.hidden", self.hidden.into());
        put("model.layers", self.layers.into());
        put("model.latent", self.latent.clone().into());
        put("model.groups", self.groups.into());
        put("model.classes", self.classes.into());
        put("model.latent_dim", self.latent_dim.into());
        put("model.kl_balance", self.kl_balance.into());
        put("model.free_bits", self.free_bits.into());
        put("model.cont_weight", self.cont_weight.into());
        put("model.behavior_hidden", self.behavior_hidden.into());
        put("model.behavior_layers", self.behavior_layers.into());
        Value::Object(m)
    }
}
