//! Policy-update rules: the deterministic policy gradient, anchored (BC and
//! between-cycle) regularizers, teacher-action imitation with an optional Q-filter,
//! teacher-provided action gradients, and the exponential decay schedule that
//! blends them.
//!
//! Every term is reduced to a per-sample *action-space seed* and pushed through a
//! single policy backward pass, since `∇_θ Σ_s seed(s)·π_θ(s)` is linear in the
//! seed. Returned policy gradients from [`dpg_grads`], [`teacher_gradient_term`]
//! and [`combined_policy_grads`] point in the ascent direction of the policy
//! objective; [`anchored_reg_grads`] and [`teacher_action_grads`] return descent
//! gradients of their squared-distance losses.

use std::fmt;
use std::str::FromStr;

use crate::error::{dim_mismatch, Error, Result};
use crate::networks::{ActionGradientSource, Actor, CriticNet, PolicyNet};
use crate::numeric::{Matrix, NetworkParams};

/// Exponential decay weight after `n` of `n_total` learner steps:
/// `α(n) = (e^{−r·n/N} − e^{−r}) / (1 − e^{−r})`.
///
/// Falls from exactly 1 at `n = 0` to exactly 0 at `n = n_total`. Steps past the
/// end clamp to 0.
pub fn alpha_schedule(n: u64, n_total: u64, rate: f64) -> f64 {
    assert!(rate > 0.0, "decay rate must be positive");
    if n == 0 {
        return 1.0;
    }
    if n >= n_total {
        if n > n_total {
            log::warn!("learner step {n} beyond schedule length {n_total}; alpha clamped to 0");
        }
        return 0.0;
    }
    let floor = (-rate).exp();
    let x = n as f64 / n_total as f64;
    ((-rate * x).exp() - floor) / (1.0 - floor)
}

/// Which policy objective drives the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveMode {
    Dpg,
    BcFixed,
    BcDecay,
    PrevCycleDecay,
    TeacherActionDecay,
    TeacherActionQfilter,
    TeacherGradientDecay,
}

impl ObjectiveMode {
    pub const ALL: [ObjectiveMode; 7] = [
        Self::Dpg,
        Self::BcFixed,
        Self::BcDecay,
        Self::PrevCycleDecay,
        Self::TeacherActionDecay,
        Self::TeacherActionQfilter,
        Self::TeacherGradientDecay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dpg => "dpg",
            Self::BcFixed => "bc_fixed",
            Self::BcDecay => "bc_decay",
            Self::PrevCycleDecay => "prev_cycle_decay",
            Self::TeacherActionDecay => "teacher_action_decay",
            Self::TeacherActionQfilter => "teacher_action_qfilter",
            Self::TeacherGradientDecay => "teacher_gradient_decay",
        }
    }

    pub fn needs_teacher_actions(self) -> bool {
        matches!(self, Self::TeacherActionDecay | Self::TeacherActionQfilter)
    }

    pub fn needs_teacher_gradients(self) -> bool {
        self == Self::TeacherGradientDecay
    }

    pub fn uses_schedule(self) -> bool {
        matches!(
            self,
            Self::BcDecay | Self::PrevCycleDecay | Self::TeacherActionDecay | Self::TeacherGradientDecay
        )
    }
}

impl FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective mode '{s}'")))
    }
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which critic snapshot evaluates the Q-filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterCritic {
    /// The critic being trained in the current cycle.
    Live,
    /// The critic as it stood when the cycle's learning phase began.
    CycleStart,
}

impl FromStr for FilterCritic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(Self::Live),
            "cycle_start" => Ok(Self::CycleStart),
            _ => Err(Error::Config(format!("unknown q-filter critic '{s}'"))),
        }
    }
}

impl fmt::Display for FilterCritic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Live => "live",
            Self::CycleStart => "cycle_start",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObjectiveConfig {
    pub mode: ObjectiveMode,
    /// Fixed BC regularizer weight (`bc_fixed` only).
    pub lambda: f64,
    /// Exponential decay rate of the schedule.
    pub decay_rate: f64,
    /// Between-cycle regularizer weight (`teacher_action_decay` only).
    pub beta: f64,
    pub filter_critic: FilterCritic,
}

impl Default for PolicyObjectiveConfig {
    fn default() -> Self {
        Self {
            mode: ObjectiveMode::Dpg,
            lambda: 0.5,
            decay_rate: 1.0,
            beta: 5.0,
            filter_critic: FilterCritic::Live,
        }
    }
}

/// Per-cycle state the objectives read: anchors are frozen for the whole cycle.
#[derive(Debug, Clone)]
pub struct CycleContext {
    pub cycle: u32,
    /// The behavior-cloned initial policy.
    pub anchor_bc: PolicyNet,
    /// The policy that acted during this cycle.
    pub anchor_prev: PolicyNet,
    /// Critic snapshot taken when the cycle's learning began.
    pub filter_critic: Option<CriticNet>,
    /// Learner steps taken so far over the whole experiment.
    pub learner_step: u64,
    pub total_learner_steps: u64,
}

impl CycleContext {
    pub fn alpha(&self, rate: f64) -> f64 {
        alpha_schedule(self.learner_step, self.total_learner_steps, rate)
    }
}

/// Scalar state-action values, one per row.
pub trait QFunction {
    fn q_values(&self, obs: &Matrix, actions: &Matrix) -> Result<Vec<f64>>;
}

impl QFunction for CriticNet {
    fn q_values(&self, obs: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        self.q_batch(obs, actions)
    }
}

/// Teacher information available for the current batch.
#[derive(Clone, Copy, Default)]
pub struct Annotations<'a> {
    /// `a* = π*(s)` for every batch state.
    pub teacher_actions: Option<&'a Matrix>,
    /// Provider of `G_a(s, a)`.
    pub teacher_gradients: Option<&'a dyn ActionGradientSource>,
}

/// `∇_a Q(s, π(s)) / B` together with the critic values at `(s, π(s))`.
fn dpg_seed(states: &Matrix, actions: &Matrix, critic: &CriticNet) -> Result<(Matrix, Vec<f64>)> {
    let fwd = critic.forward(states, actions)?;
    let logit_seed = critic.mean_logit_grads(&fwd);
    let dx = crate::numeric::input_gradient_batch(critic.params(), &fwd.cache, &logit_seed)?;
    let mut seed = dx.columns(critic.obs_dim(), critic.act_dim());
    let inv_b = 1.0 / states.rows() as f64;
    seed.data_mut().iter_mut().for_each(|g| *g *= inv_b);
    Ok((seed, fwd.q))
}

/// Mean of `‖target − π(s)‖²` and its descent seed `2(π(s) − target) / B`.
fn squared_distance_seed(actions: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if targets.rows() != actions.rows() || targets.cols() != actions.cols() {
        return Err(Error::Caller(format!(
            "targets {}x{} do not match actions {}x{}",
            targets.rows(),
            targets.cols(),
            actions.rows(),
            actions.cols()
        )));
    }
    let inv_b = 1.0 / actions.rows() as f64;
    let mut loss = 0.0;
    let mut seed = Matrix::zeros(actions.rows(), actions.cols());
    for ((s, a), t) in seed.data_mut().iter_mut().zip(actions.data()).zip(targets.data()) {
        let d = a - t;
        loss += d * d;
        *s = 2.0 * d * inv_b;
    }
    Ok((loss * inv_b, seed))
}

fn check_batch(states: &Matrix, policy: &PolicyNet) -> Result<()> {
    if states.rows() == 0 {
        return Err(Error::Caller("policy objective on an empty batch".into()));
    }
    if states.cols() != policy.obs_dim() {
        return Err(dim_mismatch("policy observation", policy.obs_dim(), states.cols()));
    }
    Ok(())
}

fn check_anchor(policy: &PolicyNet, anchor: &PolicyNet) -> Result<()> {
    if !policy.params().same_shape(anchor.params()) || policy.action_scale() != anchor.action_scale() {
        return Err(Error::Config("anchor policy architecture differs from the learner's".into()));
    }
    Ok(())
}

fn finite(grads: NetworkParams, what: &str) -> Result<NetworkParams> {
    if grads.is_finite() {
        Ok(grads)
    } else {
        Err(Error::NumericalFault(format!("non-finite {what} gradient")))
    }
}

/// Deterministic policy gradient `mean_s ∇_θ π(s) · ∇_a Q(s, a)|_{a=π(s)}` (ascent).
pub fn dpg_grads(states: &Matrix, policy: &PolicyNet, critic: &CriticNet) -> Result<NetworkParams> {
    check_batch(states, policy)?;
    let (actions, cache) = policy.forward(states)?;
    let (seed, _) = dpg_seed(states, &actions, critic)?;
    finite(policy.backward(&cache, &seed)?, "policy")
}

/// Loss `mean_s ‖anchor(s) − π(s)‖²` and its descent gradient. The anchor is
/// treated as a constant.
pub fn anchored_reg_grads(states: &Matrix, policy: &PolicyNet, anchor: &PolicyNet) -> Result<(f64, NetworkParams)> {
    check_batch(states, policy)?;
    check_anchor(policy, anchor)?;
    let targets = anchor.act_batch(states)?;
    teacher_action_grads(states, &targets, policy)
}

/// Loss `mean_s ‖a*(s) − π(s)‖²` and its descent gradient.
pub fn teacher_action_grads(
    states: &Matrix,
    teacher_actions: &Matrix,
    policy: &PolicyNet,
) -> Result<(f64, NetworkParams)> {
    check_batch(states, policy)?;
    let (actions, cache) = policy.forward(states)?;
    let (loss, seed) = squared_distance_seed(&actions, teacher_actions)?;
    Ok((loss, finite(policy.backward(&cache, &seed)?, "imitation")?))
}

/// `δ(s) = 1[Q(s, a*) ≥ Q(s, a_π)]`.
pub fn q_filter(critic: &dyn QFunction, s: &[f64], a_star: &[f64], a_pi: &[f64]) -> Result<bool> {
    Ok(q_filter_batch(
        critic,
        &Matrix::row_vector(s),
        &Matrix::row_vector(a_star),
        &Matrix::row_vector(a_pi),
    )?[0])
}

pub fn q_filter_batch(
    critic: &dyn QFunction,
    states: &Matrix,
    a_star: &Matrix,
    a_pi: &Matrix,
) -> Result<Vec<bool>> {
    let q_star = critic.q_values(states, a_star)?;
    let q_pi = critic.q_values(states, a_pi)?;
    Ok(q_star.iter().zip(&q_pi).map(|(t, p)| t >= p).collect())
}

/// `mean_s G_a(s, π(s)) · ∇_θ π(s)` (ascent).
pub fn teacher_gradient_term(
    states: &Matrix,
    policy: &PolicyNet,
    provider: &dyn ActionGradientSource,
) -> Result<NetworkParams> {
    check_batch(states, policy)?;
    let (actions, cache) = policy.forward(states)?;
    let seed = teacher_gradient_seed(states, &actions, provider)?;
    finite(policy.backward(&cache, &seed)?, "teacher-gradient")
}

fn teacher_gradient_seed(states: &Matrix, actions: &Matrix, provider: &dyn ActionGradientSource) -> Result<Matrix> {
    let mut g = provider
        .action_gradient_batch(states, actions)
        .map_err(|e| Error::AnnotationUnavailable(format!("teacher gradient query failed: {e}")))?;
    if g.rows() != actions.rows() || g.cols() != actions.cols() {
        return Err(Error::AnnotationUnavailable("teacher gradient has the wrong shape".into()));
    }
    let inv_b = 1.0 / states.rows() as f64;
    g.data_mut().iter_mut().for_each(|v| *v *= inv_b);
    Ok(g)
}

/// Result of one combined policy-gradient evaluation.
#[derive(Debug, Clone)]
pub struct PolicyUpdate {
    /// Ascent direction on the mode's objective.
    pub grads: NetworkParams,
    /// Schedule weight used (1 − weight of the DPG term where applicable).
    pub alpha: f64,
    /// Fraction of batch states where the Q-filter chose imitation.
    pub filter_rate: Option<f64>,
}

/// Ascent seed `Σ_k w_k ⊙ term_k`, accumulated row-wise.
fn blend(terms: &[(&Matrix, f64)]) -> Matrix {
    let (first, w0) = terms[0];
    let mut out = first.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= w0);
    for (m, w) in &terms[1..] {
        for (o, v) in out.data_mut().iter_mut().zip(m.data()) {
            *o += w * v;
        }
    }
    out
}

fn teacher_actions<'a>(ann: &Annotations<'a>, states: &Matrix) -> Result<&'a Matrix> {
    let a = ann
        .teacher_actions
        .ok_or_else(|| Error::Caller("mode needs teacher-action annotations".into()))?;
    if a.rows() != states.rows() {
        return Err(Error::Caller(format!(
            "{} teacher actions for {} states",
            a.rows(),
            states.rows()
        )));
    }
    Ok(a)
}

/// Mode-dispatched policy gradient (ascent direction) for one learner batch.
///
/// Regularizer and imitation terms are penalties: their descent gradients enter
/// with a negative sign so that the whole update maximizes the combined objective.
pub fn combined_policy_grads(
    states: &Matrix,
    policy: &PolicyNet,
    critic: &CriticNet,
    config: &PolicyObjectiveConfig,
    ctx: &CycleContext,
    annotations: &Annotations<'_>,
) -> Result<PolicyUpdate> {
    check_batch(states, policy)?;
    let mode = config.mode;
    let alpha = if mode.uses_schedule() {
        ctx.alpha(config.decay_rate)
    } else {
        0.0
    };
    let (actions, cache) = policy.forward(states)?;
    let (dpg, q_pi) = dpg_seed(states, &actions, critic)?;
    let anchor_seed = |anchor: &PolicyNet| -> Result<Matrix> {
        check_anchor(policy, anchor)?;
        Ok(squared_distance_seed(&actions, &anchor.act_batch(states)?)?.1)
    };
    let mut filter_rate = None;

    let seed = match mode {
        ObjectiveMode::Dpg => dpg,
        ObjectiveMode::BcFixed => {
            let reg = anchor_seed(&ctx.anchor_bc)?;
            blend(&[(&dpg, 1.0), (&reg, -config.lambda)])
        }
        ObjectiveMode::BcDecay => {
            let reg = anchor_seed(&ctx.anchor_bc)?;
            blend(&[(&dpg, 1.0 - alpha), (&reg, -alpha)])
        }
        ObjectiveMode::PrevCycleDecay => {
            let reg = anchor_seed(&ctx.anchor_prev)?;
            blend(&[(&dpg, 1.0 - alpha), (&reg, -alpha)])
        }
        ObjectiveMode::TeacherActionDecay => {
            let reg = anchor_seed(&ctx.anchor_prev)?;
            let a_star = teacher_actions(annotations, states)?;
            let imitate = squared_distance_seed(&actions, a_star)?.1;
            blend(&[(&dpg, 1.0 - alpha), (&reg, -config.beta), (&imitate, -alpha)])
        }
        ObjectiveMode::TeacherActionQfilter => {
            let a_star = teacher_actions(annotations, states)?;
            let imitate = squared_distance_seed(&actions, a_star)?.1;
            let delta: Vec<bool> = match config.filter_critic {
                FilterCritic::Live => {
                    let q_star = critic.q_batch(states, a_star)?;
                    q_star.iter().zip(&q_pi).map(|(t, p)| t >= p).collect()
                }
                FilterCritic::CycleStart => {
                    let snapshot = ctx.filter_critic.as_ref().ok_or_else(|| {
                        Error::Config("cycle-start Q-filter needs a critic snapshot".into())
                    })?;
                    q_filter_batch(snapshot, states, a_star, &actions)?
                }
            };
            filter_rate = Some(delta.iter().filter(|d| **d).count() as f64 / delta.len() as f64);
            let mut seed = Matrix::zeros(actions.rows(), actions.cols());
            for (r, d) in delta.iter().enumerate() {
                let src = if *d { imitate.row(r) } else { dpg.row(r) };
                let sign = if *d { -1.0 } else { 1.0 };
                for (o, v) in seed.row_mut(r).iter_mut().zip(src) {
                    *o = sign * v;
                }
            }
            seed
        }
        ObjectiveMode::TeacherGradientDecay => {
            let provider = annotations
                .teacher_gradients
                .ok_or_else(|| Error::Caller("mode needs teacher-gradient annotations".into()))?;
            let teacher = teacher_gradient_seed(states, &actions, provider)?;
            blend(&[(&dpg, 1.0 - alpha), (&teacher, alpha)])
        }
    };
    let grads = finite(policy.backward(&cache, &seed)?, "combined policy")?;
    Ok(PolicyUpdate {
        grads,
        alpha,
        filter_rate,
    })
}
