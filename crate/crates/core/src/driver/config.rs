//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::env::{EnvSpec, Task};
use crate::error::{Error, Result};
use crate::networks::Support;
use crate::numeric::OptimizerKind;
use crate::objectives::{FilterCritic, PolicyObjectiveConfig};
use crate::targets::CriticLossMode;

/// Where teacher advice comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TeacherSource {
    Scripted,
    Checkpoint(PathBuf),
}

impl FromStr for TeacherSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::Config("empty teacher source".into())),
            "scripted" => Ok(Self::Scripted),
            path => Ok(Self::Checkpoint(PathBuf::from(path))),
        }
    }
}

impl std::fmt::Display for TeacherSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Scripted => f.write_str("scripted"),
            Self::Checkpoint(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Which critic answers teacher-gradient queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherCritic {
    /// The critic stored with the teacher, if any.
    Own,
    /// A critic fitted to the teacher policy on its demonstrations.
    Fitted,
    None,
}

impl FromStr for TeacherCritic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "own" => Ok(Self::Own),
            "fitted" => Ok(Self::Fitted),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown teacher critic '{other}'"))),
        }
    }
}

impl std::fmt::Display for TeacherCritic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Own => "own",
            Self::Fitted => "fitted",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub episode_length: usize,
    pub seed: u64,
    pub cycles: u32,
    pub total_actor_steps: u64,
    pub batch_size: usize,
    pub spi: u64,
    pub n_step: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    /// Exploration standard deviation; `None` means 0.3 × action bound.
    pub noise_sigma: Option<f64>,
    /// Critic support; `None` means `[0, 1 / (1 − γ)]`.
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub atoms: usize,
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub target_update_period: u64,
    pub critic_loss: CriticLossMode,
    pub objective: PolicyObjectiveConfig,
    pub teacher: TeacherSource,
    pub teacher_critic: TeacherCritic,
    /// Existing demonstration file; generated from the teacher when absent.
    pub demos: Option<PathBuf>,
    pub demo_episodes: usize,
    pub pretrain: bool,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub critic_pretrain_steps: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    /// Online teacher training: actor steps, warm-up size and checkpoint spacing.
    pub teacher_train_steps: u64,
    pub min_replay: usize,
    pub checkpoint_period: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::PendulumSwingup,
            episode_length: crate::env::DEFAULT_EPISODE_LENGTH,
            seed: 0,
            cycles: 4,
            total_actor_steps: 40_000,
            batch_size: 64,
            spi: 32,
            n_step: 5,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            optimizer: OptimizerKind::Adam,
            noise_sigma: None,
            v_min: None,
            v_max: None,
            atoms: Support::DEFAULT_ATOMS,
            hidden_size: 64,
            hidden_layers: 3,
            target_update_period: 100,
            critic_loss: CriticLossMode::Distributional,
            objective: PolicyObjectiveConfig::default(),
            teacher: TeacherSource::Scripted,
            teacher_critic: TeacherCritic::Own,
            demos: None,
            demo_episodes: 50,
            pretrain: true,
            pretrain_epochs: 20,
            pretrain_lr: 1e-3,
            critic_pretrain_steps: 2_000,
            eval_period: 250,
            eval_episodes: 5,
            teacher_train_steps: 100_000,
            min_replay: 1_000,
            checkpoint_period: 2_500,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value '{value}' for '{key}'"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), ToString::to_string)
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "task" => self.task = v.parse()?,
            "episode_length" => self.episode_length = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "cycles" => self.cycles = parse(key, v)?,
            "total_actor_steps" => self.total_actor_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "spi" => self.spi = parse(key, v)?,
            "n_step" => self.n_step = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "actor_lr" => self.actor_lr = parse(key, v)?,
            "critic_lr" => self.critic_lr = parse(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "noise_sigma" => self.noise_sigma = parse_opt(key, v)?,
            "v_min" => self.v_min = parse_opt(key, v)?,
            "v_max" => self.v_max = parse_opt(key, v)?,
            "atoms" => self.atoms = parse(key, v)?,
            "hidden_size" => self.hidden_size = parse(key, v)?,
            "hidden_layers" => self.hidden_layers = parse(key, v)?,
            "target_update_period" => self.target_update_period = parse(key, v)?,
            "critic_loss" => self.critic_loss = v.parse()?,
            "mode" => self.objective.mode = v.parse()?,
            "lambda" => self.objective.lambda = parse(key, v)?,
            "decay_rate" => self.objective.decay_rate = parse(key, v)?,
            "beta" => self.objective.beta = parse(key, v)?,
            "filter_critic" => self.objective.filter_critic = v.parse::<FilterCritic>()?,
            "teacher" => self.teacher = v.parse()?,
            "teacher_critic" => self.teacher_critic = v.parse()?,
            "demos" => self.demos = if v == "auto" { None } else { Some(PathBuf::from(v)) },
            "demo_episodes" => self.demo_episodes = parse(key, v)?,
            "pretrain" => self.pretrain = parse_bool(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "critic_pretrain_steps" => self.critic_pretrain_steps = parse(key, v)?,
            "eval_period" => self.eval_period = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "teacher_train_steps" => self.teacher_train_steps = parse(key, v)?,
            "min_replay" => self.min_replay = parse(key, v)?,
            "checkpoint_period" => self.checkpoint_period = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a config document over the defaults. Blank lines and lines
    /// starting with `#` are ignored; repeated keys are errors.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// The configuration as a document [`parse_str`](Self::parse_str) accepts.
    pub fn to_kv(&self) -> String {
        let o = &self.objective;
        let pairs: Vec<(&str, String)> = vec![
            ("task", self.task.to_string()),
            ("episode_length", self.episode_length.to_string()),
            ("seed", self.seed.to_string()),
            ("cycles", self.cycles.to_string()),
            ("total_actor_steps", self.total_actor_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("spi", self.spi.to_string()),
            ("n_step", self.n_step.to_string()),
            ("gamma", self.gamma.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("noise_sigma", show_opt(&self.noise_sigma)),
            ("v_min", show_opt(&self.v_min)),
            ("v_max", show_opt(&self.v_max)),
            ("atoms", self.atoms.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("hidden_layers", self.hidden_layers.to_string()),
            ("target_update_period", self.target_update_period.to_string()),
            ("critic_loss", self.critic_loss.to_string()),
            ("mode", o.mode.to_string()),
            ("lambda", o.lambda.to_string()),
            ("decay_rate", o.decay_rate.to_string()),
            ("beta", o.beta.to_string()),
            ("filter_critic", o.filter_critic.to_string()),
            ("teacher", self.teacher.to_string()),
            ("teacher_critic", self.teacher_critic.to_string()),
            (
                "demos",
                self.demos
                    .as_ref()
                    .map_or_else(|| "auto".to_string(), |p| p.display().to_string()),
            ),
            ("demo_episodes", self.demo_episodes.to_string()),
            ("pretrain", self.pretrain.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("critic_pretrain_steps", self.critic_pretrain_steps.to_string()),
            ("eval_period", self.eval_period.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("teacher_train_steps", self.teacher_train_steps.to_string()),
            ("min_replay", self.min_replay.to_string()),
            ("checkpoint_period", self.checkpoint_period.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.cycles == 0 {
            return fail("cycles must be at least 1".into());
        }
        if self.total_actor_steps == 0 || self.total_actor_steps % u64::from(self.cycles) != 0 {
            return fail(format!(
                "total_actor_steps {} is not divisible by {} cycles",
                self.total_actor_steps, self.cycles
            ));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("pretrain_lr", self.pretrain_lr),
            ("decay_rate", self.objective.decay_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.objective.lambda < 0.0 || self.objective.beta < 0.0 {
            return fail("lambda and beta must be non-negative".into());
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return fail(format!("noise_sigma must be non-negative, got {s}"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size as u64),
            ("spi", self.spi),
            ("n_step", self.n_step as u64),
            ("hidden_size", self.hidden_size as u64),
            ("episode_length", self.episode_length as u64),
            ("target_update_period", self.target_update_period),
            ("eval_period", self.eval_period),
            ("eval_episodes", self.eval_episodes as u64),
            ("checkpoint_period", self.checkpoint_period),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.demos.is_none() && self.pretrain && self.demo_episodes == 0 {
            return fail("pretraining needs demo_episodes > 0 or a demos file".into());
        }
        self.support()?;
        Ok(())
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::with_episode_length(self.task, self.episode_length)
    }

    pub fn support(&self) -> Result<Support> {
        let v_min = self.v_min.unwrap_or(0.0);
        let v_max = self.v_max.unwrap_or(1.0 / (1.0 - self.gamma));
        Support::new(v_min, v_max, self.atoms)
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
            .unwrap_or_else(|| 0.3 * self.env_spec().action_bound)
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_size; self.hidden_layers]
    }

    pub fn actor_steps_per_cycle(&self) -> u64 {
        self.total_actor_steps / u64::from(self.cycles)
    }

    pub fn total_learner_steps(&self) -> u64 {
        crate::replay::paced_batches(self.total_actor_steps, self.spi, self.batch_size as u64)
    }

    pub fn mode_needs_teacher(&self) -> bool {
        let m = self.objective.mode;
        m.needs_teacher_actions() || m.needs_teacher_gradients()
    }
}
