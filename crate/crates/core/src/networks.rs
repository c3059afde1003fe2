//! Deterministic policy and categorical (distributional) critic heads.

use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::numeric::{
    backward_batch, forward_batch, input_gradient_batch, mlp_forward, ForwardCache, Matrix,
    NetworkParams, OutputActivation,
};

/// Anything that maps a batch of observations to a batch of actions.
pub trait Actor: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn act_batch(&self, obs: &Matrix) -> Result<Matrix>;

    fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.act_batch(&Matrix::row_vector(obs))?.into_vec())
    }
}

/// Anything that supplies `∇_a` of some value function, one row per (s, a) pair.
pub trait ActionGradientSource: Send + Sync {
    fn action_gradient_batch(&self, obs: &Matrix, actions: &Matrix) -> Result<Matrix>;
}

/// Evenly spaced value atoms `z_0 < … < z_{n-1}` spanning `[v_min, v_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    v_min: f64,
    v_max: f64,
    atoms: Vec<f64>,
}

impl Support {
    pub const DEFAULT_ATOMS: usize = 51;

    pub fn new(v_min: f64, v_max: f64, n_atoms: usize) -> Result<Self> {
        if !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::Config(format!("support needs v_min < v_max, got [{v_min}, {v_max}]")));
        }
        if n_atoms < 2 {
            return Err(Error::Config("support needs at least two atoms".into()));
        }
        let delta = (v_max - v_min) / (n_atoms - 1) as f64;
        let mut atoms: Vec<f64> = (0..n_atoms).map(|i| v_min + i as f64 * delta).collect();
        atoms[n_atoms - 1] = v_max;
        Ok(Self { v_min, v_max, atoms })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.atoms.len() - 1) as f64
    }
}

/// Categorical distribution over the atoms of a [`Support`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDistribution {
    probs: Vec<f64>,
}

impl ValueDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Caller(format!("not a probability vector (sum {sum})")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Numerically stable softmax of one row of logits, written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// `log Σ exp(logits)`.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Expected value `Σ_i p_i z_i`.
pub fn critic_mean(dist: &ValueDistribution, support: &Support) -> f64 {
    dist.probs
        .iter()
        .zip(support.atoms())
        .map(|(p, z)| p * z)
        .sum()
}

fn row_mean(probs: &[f64], atoms: &[f64]) -> f64 {
    probs.iter().zip(atoms).map(|(p, z)| p * z).sum()
}

/// Deterministic policy `a = action_scale ⊙ tanh(net(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    params: NetworkParams,
    action_scale: Vec<f64>,
}

impl PolicyNet {
    pub fn new(params: NetworkParams, action_scale: Vec<f64>) -> Result<Self> {
        if params.output_activation() != OutputActivation::Tanh {
            return Err(Error::Config("policy network needs a tanh output".into()));
        }
        if action_scale.len() != params.output_dim() {
            return Err(dim_mismatch("action scale", params.output_dim(), action_scale.len()));
        }
        if action_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("action bounds must be positive".into()));
        }
        Ok(Self { params, action_scale })
    }

    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        action_scale: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(action_scale.len()))
            .collect();
        Self::new(NetworkParams::init_uniform(&sizes, OutputActivation::Tanh, rng)?, action_scale)
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    pub fn action_scale(&self) -> &[f64] {
        &self.action_scale
    }

    /// Forward pass that keeps the cache for a later [`backward`](Self::backward).
    pub fn forward(&self, obs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let cache = forward_batch(&self.params, obs)?;
        let mut actions = cache.output().clone();
        for r in 0..actions.rows() {
            for (a, s) in actions.row_mut(r).iter_mut().zip(&self.action_scale) {
                *a *= s;
            }
        }
        Ok((actions, cache))
    }

    /// Parameter gradient of `Σ_rows action_grad · π(s)`.
    pub fn backward(&self, cache: &ForwardCache, action_grad: &Matrix) -> Result<NetworkParams> {
        if action_grad.cols() != self.action_scale.len() {
            return Err(dim_mismatch("action gradient", self.action_scale.len(), action_grad.cols()));
        }
        let mut seed = action_grad.clone();
        for r in 0..seed.rows() {
            for (g, s) in seed.row_mut(r).iter_mut().zip(&self.action_scale) {
                *g *= s;
            }
        }
        Ok(backward_batch(&self.params, cache, &seed)?.0)
    }
}

impl Actor for PolicyNet {
    fn obs_dim(&self) -> usize {
        self.params.input_dim()
    }

    fn act_dim(&self) -> usize {
        self.action_scale.len()
    }

    fn act_batch(&self, obs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(obs)?.0)
    }
}

pub fn policy_act(policy: &PolicyNet, obs: &[f64]) -> Result<Vec<f64>> {
    policy.act(obs)
}

/// Outputs of a batched critic evaluation.
#[derive(Debug, Clone)]
pub struct CriticForward {
    pub cache: ForwardCache,
    /// Softmax probabilities, one row per sample.
    pub probs: Matrix,
    /// Expected values.
    pub q: Vec<f64>,
}

/// Categorical critic over `concat(obs, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    params: NetworkParams,
    support: Support,
    obs_dim: usize,
}

impl CriticNet {
    pub fn new(params: NetworkParams, support: Support, obs_dim: usize) -> Result<Self> {
        if params.output_activation() != OutputActivation::Linear {
            return Err(Error::Config("critic network needs a linear output".into()));
        }
        if params.output_dim() != support.len() {
            return Err(dim_mismatch("critic logits", support.len(), params.output_dim()));
        }
        if params.input_dim() <= obs_dim {
            return Err(Error::Config("critic input must cover observation and action".into()));
        }
        Ok(Self {
            params,
            support,
            obs_dim,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        support: Support,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(obs_dim + act_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(support.len()))
            .collect();
        Self::new(
            NetworkParams::init_uniform(&sizes, OutputActivation::Linear, rng)?,
            support,
            obs_dim,
        )
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.params.input_dim() - self.obs_dim
    }

    fn joint_input(&self, obs: &Matrix, actions: &Matrix) -> Result<Matrix> {
        if obs.cols() != self.obs_dim {
            return Err(dim_mismatch("critic observation", self.obs_dim, obs.cols()));
        }
        if actions.cols() != self.act_dim() {
            return Err(dim_mismatch("critic action", self.act_dim(), actions.cols()));
        }
        obs.hcat(actions)
    }

    pub fn forward(&self, obs: &Matrix, actions: &Matrix) -> Result<CriticForward> {
        let cache = forward_batch(&self.params, &self.joint_input(obs, actions)?)?;
        let logits = cache.output();
        let mut probs = Matrix::zeros(logits.rows(), logits.cols());
        let mut q = Vec::with_capacity(logits.rows());
        for r in 0..logits.rows() {
            softmax_into(logits.row(r), probs.row_mut(r));
            q.push(row_mean(probs.row(r), self.support.atoms()));
        }
        Ok(CriticForward { cache, probs, q })
    }

    pub fn q_batch(&self, obs: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(obs, actions)?.q)
    }

    /// `∂Q/∂logit_i = p_i (z_i − Q)` for each row.
    pub(crate) fn mean_logit_grads(&self, fwd: &CriticForward) -> Matrix {
        let atoms = self.support.atoms();
        let mut g = Matrix::zeros(fwd.probs.rows(), fwd.probs.cols());
        for r in 0..g.rows() {
            let q = fwd.q[r];
            for ((gi, p), z) in g.row_mut(r).iter_mut().zip(fwd.probs.row(r)).zip(atoms) {
                *gi = p * (z - q);
            }
        }
        g
    }

    /// Rows of `∇_a Q(s, a)`.
    pub fn action_gradients(&self, obs: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let fwd = self.forward(obs, actions)?;
        let seed = self.mean_logit_grads(&fwd);
        let dx = input_gradient_batch(&self.params, &fwd.cache, &seed)?;
        Ok(dx.columns(self.obs_dim, self.act_dim()))
    }
}

impl ActionGradientSource for CriticNet {
    fn action_gradient_batch(&self, obs: &Matrix, actions: &Matrix) -> Result<Matrix> {
        self.action_gradients(obs, actions)
    }
}

pub fn critic_distribution(critic: &CriticNet, obs: &[f64], action: &[f64]) -> Result<ValueDistribution> {
    if obs.len() + action.len() != critic.params.input_dim() {
        return Err(dim_mismatch(
            "critic input",
            critic.params.input_dim(),
            obs.len() + action.len(),
        ));
    }
    let input: Vec<f64> = obs.iter().chain(action).copied().collect();
    let (logits, _) = mlp_forward(&critic.params, &input)?;
    let mut probs = vec![0.0; logits.len()];
    softmax_into(&logits, &mut probs);
    Ok(ValueDistribution { probs })
}

pub fn critic_action_gradient(critic: &CriticNet, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
    Ok(critic
        .action_gradients(&Matrix::row_vector(obs), &Matrix::row_vector(action))?
        .into_vec())
}
