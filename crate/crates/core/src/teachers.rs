//! Queryable teachers: demonstrations, action annotations `a* = π*(s)` and
//! action-gradient annotations `G_a(s, a) = ∇_a Q*(s, a)`.

use std::path::Path;

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::env::{Env, EnvSpec, Physics, Task};
use crate::error::{dim_mismatch, Error, Result};
use crate::networks::{ActionGradientSource, Actor, CriticNet, PolicyNet};
use crate::numeric::Matrix;
use crate::replay::{ReplayStore, Transition, DEFAULT_CAPACITY};

/// Energy-shaping swing-up with a PD capture near upright.
///
/// Away from upright (`|θ| > capture_angle`) the torque pumps energy
/// `E = ½θ̇² + g·cos θ` toward the upright energy `g`; inside the capture window a
/// PD law holds the pole. Both laws are clamped to the torque bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedPendulumExpert {
    pub energy_gain: f64,
    pub kp: f64,
    pub kd: f64,
    pub capture_angle: f64,
    pub torque_bound: f64,
    pub gravity: f64,
}

impl Default for ScriptedPendulumExpert {
    fn default() -> Self {
        // kp must exceed g for the upright to be stable under PD control.
        Self {
            energy_gain: 1.0,
            kp: 20.0,
            kd: 5.0,
            capture_angle: 0.3,
            torque_bound: 2.0,
            gravity: 10.0,
        }
    }
}

impl ScriptedPendulumExpert {
    pub fn for_spec(spec: &EnvSpec) -> Result<Self> {
        match spec.physics {
            Physics::Pendulum { gravity, .. } => Ok(Self {
                gravity,
                torque_bound: spec.action_bound,
                ..Self::default()
            }),
            _ => Err(Error::Config(format!("no scripted expert for task {}", spec.task))),
        }
    }

    /// Torque for angle `theta` (from upright) and angular velocity `omega`.
    pub fn torque(&self, theta: f64, omega: f64) -> f64 {
        let u = if theta.abs() > self.capture_angle {
            let energy = 0.5 * omega * omega + self.gravity * theta.cos();
            let sign = if omega >= 0.0 { 1.0 } else { -1.0 };
            self.energy_gain * (self.gravity - energy) * sign
        } else {
            -self.kp * theta - self.kd * omega
        };
        u.clamp(-self.torque_bound, self.torque_bound)
    }
}

impl Actor for ScriptedPendulumExpert {
    fn obs_dim(&self) -> usize {
        3
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn act_batch(&self, obs: &Matrix) -> Result<Matrix> {
        if obs.cols() != 3 {
            return Err(dim_mismatch("pendulum observation", 3, obs.cols()));
        }
        let mut out = Matrix::zeros(obs.rows(), 1);
        for r in 0..obs.rows() {
            let o = obs.row(r);
            out.set(r, 0, self.torque(o[1].atan2(o[0]), o[2]));
        }
        Ok(out)
    }
}

pub fn scripted_pendulum_expert(theta: f64, omega: f64) -> f64 {
    ScriptedPendulumExpert::default().torque(theta, omega)
}

#[derive(Debug, Clone)]
pub enum TeacherPolicy {
    Scripted(ScriptedPendulumExpert),
    Snapshot(PolicyNet),
}

impl TeacherPolicy {
    fn actor(&self) -> &dyn Actor {
        match self {
            Self::Scripted(s) => s,
            Self::Snapshot(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub demos: bool,
    pub actions: bool,
    pub gradients: bool,
}

/// A frozen, queryable source of advice.
#[derive(Debug, Clone)]
pub struct Teacher {
    id: String,
    policy: TeacherPolicy,
    critic: Option<CriticNet>,
}

impl Teacher {
    pub fn scripted(expert: ScriptedPendulumExpert) -> Self {
        Self {
            id: "scripted-pendulum".into(),
            policy: TeacherPolicy::Scripted(expert),
            critic: None,
        }
    }

    pub fn snapshot(id: impl Into<String>, checkpoint: Checkpoint) -> Self {
        Self {
            id: id.into(),
            policy: TeacherPolicy::Snapshot(checkpoint.policy),
            critic: checkpoint.critic,
        }
    }

    /// Attaches (or replaces) the critic that answers gradient queries.
    pub fn with_critic(mut self, critic: CriticNet) -> Self {
        self.critic = Some(critic);
        self
    }

    pub fn without_critic(mut self) -> Self {
        self.critic = None;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn policy(&self) -> &TeacherPolicy {
        &self.policy
    }

    pub fn critic(&self) -> Option<&CriticNet> {
        self.critic.as_ref()
    }

    pub fn capabilities(&self) -> Capabilities {
        Capabilities {
            demos: true,
            actions: true,
            gradients: self.critic.is_some(),
        }
    }

    pub fn annotate_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.act(s)
    }

    pub fn annotate_actions(&self, states: &Matrix) -> Result<Matrix> {
        self.act_batch(states)
    }

    pub fn annotate_gradient(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .action_gradient_batch(&Matrix::row_vector(s), &Matrix::row_vector(a))?
            .into_vec())
    }
}

impl Actor for Teacher {
    fn obs_dim(&self) -> usize {
        self.policy.actor().obs_dim()
    }

    fn act_dim(&self) -> usize {
        self.policy.actor().act_dim()
    }

    fn act_batch(&self, obs: &Matrix) -> Result<Matrix> {
        self.policy.actor().act_batch(obs)
    }
}

impl ActionGradientSource for Teacher {
    fn action_gradient_batch(&self, obs: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let critic = self.critic.as_ref().ok_or_else(|| {
            Error::AnnotationUnavailable(format!("teacher '{}' has no critic", self.id))
        })?;
        critic.action_gradients(obs, actions)
    }
}

/// Loads a checkpoint file as a teacher named after the file.
pub fn make_snapshot_teacher(path: impl AsRef<Path>) -> Result<Teacher> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map_or_else(|| "snapshot".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Teacher::snapshot(id, Checkpoint::load(path)?))
}

/// Complete teacher episodes in replay format.
#[derive(Debug, Clone)]
pub struct DemoDataset {
    pub store: ReplayStore,
    pub episodes: usize,
    pub teacher_id: String,
}

impl DemoDataset {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.save(path)
    }

    pub fn load(path: impl AsRef<Path>, teacher_id: impl Into<String>) -> Result<Self> {
        let store = ReplayStore::load(path)?;
        Ok(Self {
            episodes: store.episode_count(),
            store,
            teacher_id: teacher_id.into(),
        })
    }
}

/// Runs `actor` without exploration noise for `episodes` full episodes and
/// appends every step to `store` under the given cycle tag. Returns the
/// undiscounted return of each episode.
pub fn rollout_into(
    actor: &dyn Actor,
    spec: &EnvSpec,
    episodes: usize,
    first_episode_id: u64,
    cycle: u32,
    store: &mut ReplayStore,
    rng: &mut dyn rand::RngCore,
) -> Result<Vec<f64>> {
    if actor.obs_dim() != spec.obs_dim || actor.act_dim() != spec.act_dim {
        return Err(Error::Config(format!(
            "actor ({} -> {}) does not fit task {} ({} -> {})",
            actor.obs_dim(),
            actor.act_dim(),
            spec.task,
            spec.obs_dim,
            spec.act_dim
        )));
    }
    let mut env = Env::new(*spec);
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut obs = env.reset(rng);
        let mut total = 0.0;
        for step in 0..spec.episode_length {
            let action = actor.act(&obs)?;
            let out = env.step(&action)?;
            total += out.reward;
            store.append(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: out.reward,
                next_obs: out.obs.clone(),
                terminal: out.terminal,
                episode_id: first_episode_id + e as u64,
                step_index: step as u64,
                cycle,
            })?;
            obs = out.obs;
            if out.terminal || out.time_limit {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Teacher demonstrations: `episodes` noise-free episodes tagged cycle 0.
pub fn generate_demos<R: Rng>(teacher: &Teacher, spec: &EnvSpec, episodes: usize, rng: &mut R) -> Result<DemoDataset> {
    let mut store = ReplayStore::new(spec.obs_dim, spec.act_dim, DEFAULT_CAPACITY)?;
    rollout_into(teacher, spec, episodes, 0, 0, &mut store, rng)?;
    Ok(DemoDataset {
        store,
        episodes,
        teacher_id: teacher.id().to_string(),
    })
}

/// The default teacher for a task, when one exists without training.
pub fn default_teacher(task: Task) -> Result<Teacher> {
    let spec = EnvSpec::new(task);
    Ok(Teacher::scripted(ScriptedPendulumExpert::for_spec(&spec)?))
}
