//! Pendulum swing-up and cart-pole balance/swing-up, integrated with
//! semi-implicit Euler at a fixed step. Episodes have a fixed length and end on
//! the time limit only; the final transition is not absorbing.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    PendulumSwingup,
    CartpoleBalance,
    CartpoleSwingup,
}

impl Task {
    pub const ALL: [Task; 3] = [Self::PendulumSwingup, Self::CartpoleBalance, Self::CartpoleSwingup];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PendulumSwingup => "pendulum-swingup",
            Self::CartpoleBalance => "cartpole-balance",
            Self::CartpoleSwingup => "cartpole-swingup",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task '{s}'")))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Physics {
    /// Point mass on a massless rod; `θ` measured from upright.
    Pendulum { mass: f64, length: f64, gravity: f64 },
    /// Cart with a uniform pole of the given half-length.
    CartPole {
        cart_mass: f64,
        pole_mass: f64,
        half_length: f64,
        gravity: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub task: Task,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_bound: f64,
    pub dt: f64,
    pub episode_length: usize,
    pub physics: Physics,
}

pub const DEFAULT_EPISODE_LENGTH: usize = 1000;
const DT: f64 = 0.02;
const RESET_NOISE: f64 = 0.05;
const TRACK_HALF_WIDTH: f64 = 2.4;

impl EnvSpec {
    pub fn new(task: Task) -> Self {
        Self::with_episode_length(task, DEFAULT_EPISODE_LENGTH)
    }

    pub fn with_episode_length(task: Task, episode_length: usize) -> Self {
        match task {
            Task::PendulumSwingup => Self {
                task,
                obs_dim: 3,
                act_dim: 1,
                action_bound: 2.0,
                dt: DT,
                episode_length,
                physics: Physics::Pendulum {
                    mass: 1.0,
                    length: 1.0,
                    gravity: 10.0,
                },
            },
            Task::CartpoleBalance | Task::CartpoleSwingup => Self {
                task,
                obs_dim: 5,
                act_dim: 1,
                action_bound: 10.0,
                dt: DT,
                episode_length,
                physics: Physics::CartPole {
                    cart_mass: 1.0,
                    pole_mass: 0.1,
                    half_length: 0.5,
                    gravity: 9.8,
                },
            },
        }
    }

    /// Largest possible undiscounted episode return (rewards lie in `[0, 1]`).
    pub fn max_return(&self) -> f64 {
        self.episode_length as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvState {
    Pendulum { theta: f64, omega: f64, t: usize },
    CartPole { x: f64, x_dot: f64, theta: f64, omega: f64, t: usize },
}

impl EnvState {
    pub fn steps(&self) -> usize {
        match *self {
            Self::Pendulum { t, .. } | Self::CartPole { t, .. } => t,
        }
    }

    pub fn theta(&self) -> f64 {
        match *self {
            Self::Pendulum { theta, .. } | Self::CartPole { theta, .. } => theta,
        }
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Start state with explicit noise draws (one per physical coordinate, each
/// expected in `±0.05`).
pub fn reset_with_noise(spec: &EnvSpec, noise: &[f64]) -> (EnvState, Vec<f64>) {
    let n = |i: usize| noise.get(i).copied().unwrap_or(0.0);
    let state = match spec.task {
        Task::PendulumSwingup => EnvState::Pendulum {
            theta: wrap_angle(PI + n(0)),
            omega: n(1),
            t: 0,
        },
        Task::CartpoleBalance | Task::CartpoleSwingup => {
            let theta0 = if spec.task == Task::CartpoleSwingup { PI } else { 0.0 };
            EnvState::CartPole {
                x: n(0),
                x_dot: n(1),
                theta: wrap_angle(theta0 + n(2)),
                omega: n(3),
                t: 0,
            }
        }
    };
    (state, observe(spec, &state))
}

pub fn reset<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> (EnvState, Vec<f64>) {
    let noise: Vec<f64> = (0..4).map(|_| rng.random_range(-RESET_NOISE..=RESET_NOISE)).collect();
    reset_with_noise(spec, &noise)
}

/// Feature observation: pendulum `(cos θ, sin θ, θ̇)`, cart-pole
/// `(x, cos θ, sin θ, ẋ, θ̇)`.
pub fn observe(_spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
    match *state {
        EnvState::Pendulum { theta, omega, .. } => vec![theta.cos(), theta.sin(), omega],
        EnvState::CartPole {
            x,
            x_dot,
            theta,
            omega,
            ..
        } => vec![x, theta.cos(), theta.sin(), x_dot, omega],
    }
}

/// Reward of being in `state`, in `[0, 1]`.
pub fn reward(_spec: &EnvSpec, state: &EnvState) -> f64 {
    match *state {
        EnvState::Pendulum { theta, .. } => (1.0 + theta.cos()) / 2.0,
        EnvState::CartPole { x, theta, .. } => {
            let centered = (1.0 - (x / TRACK_HALF_WIDTH).powi(2)).max(0.0);
            (1.0 + theta.cos()) / 2.0 * centered
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Absorbing failure. These tasks never terminate this way.
    pub terminal: bool,
    /// The episode reached its length limit.
    pub time_limit: bool,
}

/// Advances one step of length `spec.dt`; the action is clamped to the bound.
pub fn step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
    let u = action
        .first()
        .copied()
        .ok_or_else(|| Error::Config("empty action".into()))?;
    if u.is_nan() {
        return Err(Error::NumericalFault("NaN action".into()));
    }
    let u = u.clamp(-spec.action_bound, spec.action_bound);
    let dt = spec.dt;
    let next = match (*state, spec.physics) {
        (
            EnvState::Pendulum { theta, omega, t },
            Physics::Pendulum {
                mass,
                length,
                gravity,
            },
        ) => {
            let acc = gravity / length * theta.sin() + u / (mass * length * length);
            let omega = omega + dt * acc;
            EnvState::Pendulum {
                theta: wrap_angle(theta + dt * omega),
                omega,
                t: t + 1,
            }
        }
        (
            EnvState::CartPole {
                x,
                x_dot,
                theta,
                omega,
                t,
            },
            Physics::CartPole {
                cart_mass,
                pole_mass,
                half_length,
                gravity,
            },
        ) => {
            let total = cart_mass + pole_mass;
            let (sin, cos) = theta.sin_cos();
            let temp = (u + pole_mass * half_length * omega * omega * sin) / total;
            let theta_acc = (gravity * sin - cos * temp)
                / (half_length * (4.0 / 3.0 - pole_mass * cos * cos / total));
            let x_acc = temp - pole_mass * half_length * theta_acc * cos / total;
            let x_dot = x_dot + dt * x_acc;
            let omega = omega + dt * theta_acc;
            EnvState::CartPole {
                x: x + dt * x_dot,
                x_dot,
                theta: wrap_angle(theta + dt * omega),
                omega,
                t: t + 1,
            }
        }
        _ => return Err(Error::Config("state does not belong to this task".into())),
    };
    let obs = observe(spec, &next);
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFault(format!("non-finite state after step: {next:?}")));
    }
    Ok(StepOutcome {
        reward: reward(spec, &next),
        terminal: false,
        time_limit: next.steps() >= spec.episode_length,
        state: next,
        obs,
    })
}

/// A task instance that owns its current state.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    state: EnvState,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Self {
        let (state, _) = reset_with_noise(&spec, &[]);
        Self { spec, state }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let (state, obs) = reset(&self.spec, rng);
        self.state = state;
        obs
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let out = step(&self.spec, &self.state, action)?;
        self.state = out.state;
        Ok(out)
    }
}
