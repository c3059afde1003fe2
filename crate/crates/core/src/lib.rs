//! Teacher-guided actor-critic learning under a growing-batch regime.
//!
//! A deterministic policy and a categorical distributional critic are trained
//! offline between data-collection cycles, optionally guided by a frozen
//! teacher through demonstrations, action advice or action-gradient advice.

pub mod checkpoint;
pub mod driver;
pub mod env;
pub mod error;
pub mod networks;
pub mod numeric;
pub mod objectives;
pub mod replay;
pub mod targets;
pub mod teachers;

pub use checkpoint::Checkpoint;
pub use driver::{run_experiment, train_online_teacher, ExperimentConfig, ExperimentReport, LearningCurve};
pub use env::{Env, EnvSpec, EnvState, StepOutcome, Task};
pub use error::{Error, Result};
pub use networks::{ActionGradientSource, Actor, CriticNet, PolicyNet, Support, ValueDistribution};
pub use numeric::{Matrix, NetworkParams, OutputActivation};
pub use objectives::{alpha_schedule, CycleContext, FilterCritic, ObjectiveMode, PolicyObjectiveConfig};
pub use replay::{ReplayStore, Transition};
pub use targets::{CriticLossMode, NStepSegment};
pub use teachers::{Capabilities, DemoDataset, ScriptedPendulumExpert, Teacher};
