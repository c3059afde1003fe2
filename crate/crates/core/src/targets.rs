//! n-step folding, categorical projection and critic losses.

use crate::error::{Error, Result};
use crate::networks::{log_sum_exp, Actor, CriticNet, Support};
use crate::numeric::{backward_batch, Matrix, NetworkParams};
use crate::replay::Transition;

/// Up to `n` consecutive transitions collapsed into one bootstrapped target.
#[derive(Debug, Clone, PartialEq)]
pub struct NStepSegment {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    /// `Σ_{i<steps} γ^i r_{t+i}`.
    pub reward: f64,
    pub bootstrap_obs: Vec<f64>,
    /// `γ^steps`, or 0 when the segment hits a terminal transition.
    pub discount: f64,
    pub steps: usize,
}

/// Folds the first `max_n` transitions of `window` (or fewer, stopping after a
/// terminal transition) into an [`NStepSegment`].
///
/// `window` must be consecutive steps of a single episode.
pub fn nstep_fold(window: &[Transition], gamma: f64, max_n: usize) -> Result<NStepSegment> {
    let first = window
        .first()
        .ok_or_else(|| Error::InvariantViolation("empty n-step window".into()))?;
    if max_n == 0 {
        return Err(Error::Config("n-step length must be at least 1".into()));
    }
    for pair in window.windows(2) {
        if pair[1].episode_id != pair[0].episode_id || pair[1].step_index != pair[0].step_index + 1 {
            return Err(Error::InvariantViolation(format!(
                "non-consecutive transitions (episode {} step {}, episode {} step {})",
                pair[0].episode_id, pair[0].step_index, pair[1].episode_id, pair[1].step_index
            )));
        }
    }
    let mut reward = 0.0;
    let mut discount = 1.0;
    let mut steps = 0;
    let mut terminal = false;
    let mut last = first;
    for t in window.iter().take(max_n) {
        reward += discount * t.reward;
        discount *= gamma;
        steps += 1;
        last = t;
        if t.terminal {
            terminal = true;
            break;
        }
    }
    Ok(NStepSegment {
        obs: first.obs.clone(),
        action: first.action.clone(),
        reward,
        bootstrap_obs: last.next_obs.clone(),
        discount: if terminal { 0.0 } else { discount },
        steps,
    })
}

/// Adds the mass of a point at `value` onto `out`, clipped to the support and split
/// linearly between the two bracketing atoms.
fn project_point(atoms: &[f64], value: f64, mass: f64, out: &mut [f64]) {
    let n = atoms.len();
    let v = value.clamp(atoms[0], atoms[n - 1]);
    let delta = (atoms[n - 1] - atoms[0]) / (n - 1) as f64;
    let mut lo = (((v - atoms[0]) / delta).floor() as usize).min(n - 1);
    // Repair floating-point drift so that atoms[lo] <= v < atoms[lo + 1].
    while lo > 0 && atoms[lo] > v {
        lo -= 1;
    }
    while lo + 1 < n && atoms[lo + 1] <= v {
        lo += 1;
    }
    if atoms[lo] == v || lo + 1 == n {
        out[lo] += mass;
        return;
    }
    let (zl, zu) = (atoms[lo], atoms[lo + 1]);
    out[lo] += mass * ((zu - v) / (zu - zl));
    out[lo + 1] += mass * ((v - zl) / (zu - zl));
}

/// Projects the distribution placing `target_probs[j]` on `target_values[j]` onto
/// `support`.
pub fn project_categorical(support: &Support, target_values: &[f64], target_probs: &[f64]) -> Result<Vec<f64>> {
    if target_values.len() != target_probs.len() {
        return Err(Error::Caller(format!(
            "{} target values but {} probabilities",
            target_values.len(),
            target_probs.len()
        )));
    }
    let sum: f64 = target_probs.iter().sum();
    if target_probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Caller(format!("target probabilities sum to {sum}")));
    }
    if target_values.iter().any(|v| v.is_nan()) {
        return Err(Error::Caller("NaN target value".into()));
    }
    let mut out = vec![0.0; support.len()];
    for (v, p) in target_values.iter().zip(target_probs) {
        project_point(support.atoms(), *v, *p, &mut out);
    }
    Ok(out)
}

fn segment_matrices(segments: &[NStepSegment]) -> Result<(Matrix, Matrix, Matrix)> {
    let obs: Vec<&[f64]> = segments.iter().map(|s| s.obs.as_slice()).collect();
    let act: Vec<&[f64]> = segments.iter().map(|s| s.action.as_slice()).collect();
    let boot: Vec<&[f64]> = segments.iter().map(|s| s.bootstrap_obs.as_slice()).collect();
    Ok((Matrix::from_rows(&obs)?, Matrix::from_rows(&act)?, Matrix::from_rows(&boot)?))
}

/// Projected target distributions, one row per segment.
///
/// Each row is the target critic's distribution at
/// `(s_{t+n}, target_policy(s_{t+n}))` with atoms shifted to `R + γ_eff·z`,
/// projected back onto the support. Terminal segments project a point mass at `R`.
pub fn critic_targets(
    segments: &[NStepSegment],
    target_policy: &dyn Actor,
    target_critic: &CriticNet,
) -> Result<Matrix> {
    let support = target_critic.support();
    let atoms = support.atoms();
    let mut out = Matrix::zeros(segments.len(), support.len());
    if segments.is_empty() {
        return Ok(out);
    }
    let (_, _, boot) = segment_matrices(segments)?;
    let boot_actions = target_policy.act_batch(&boot)?;
    let next = target_critic.forward(&boot, &boot_actions)?;
    let mut shifted = vec![0.0; atoms.len()];
    for (r, seg) in segments.iter().enumerate() {
        let row = out.row_mut(r);
        if seg.discount == 0.0 {
            project_point(atoms, seg.reward, 1.0, row);
            continue;
        }
        for (s, z) in shifted.iter_mut().zip(atoms) {
            *s = seg.reward + seg.discount * z;
        }
        for (v, p) in shifted.iter().zip(next.probs.row(r)) {
            project_point(atoms, *v, *p, row);
        }
    }
    Ok(out)
}

pub fn critic_target(segment: &NStepSegment, target_policy: &dyn Actor, target_critic: &CriticNet) -> Result<Vec<f64>> {
    Ok(critic_targets(std::slice::from_ref(segment), target_policy, target_critic)?.into_vec())
}

/// Which Bellman loss trains the critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticLossMode {
    /// Cross-entropy against the projected target distribution.
    Distributional,
    /// Squared error between `Q` and the target distribution's mean.
    Squared,
}

impl std::str::FromStr for CriticLossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distributional" => Ok(Self::Distributional),
            "squared" => Ok(Self::Squared),
            _ => Err(Error::Config(format!("unknown critic loss '{s}'"))),
        }
    }
}

impl std::fmt::Display for CriticLossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Distributional => "distributional",
            Self::Squared => "squared",
        })
    }
}

/// Mean loss and critic parameter gradients against fixed target distributions.
pub fn critic_loss_from_targets(
    obs: &Matrix,
    actions: &Matrix,
    targets: &Matrix,
    critic: &CriticNet,
    mode: CriticLossMode,
) -> Result<(f64, NetworkParams)> {
    let b = obs.rows();
    if b == 0 {
        return Err(Error::Caller("critic loss on an empty batch".into()));
    }
    let fwd = critic.forward(obs, actions)?;
    let logits = fwd.cache.output();
    let atoms = critic.support().atoms();
    let scale = 1.0 / b as f64;
    let mut seed = Matrix::zeros(b, atoms.len());
    let mut loss = 0.0;
    match mode {
        CriticLossMode::Distributional => {
            for r in 0..b {
                let lse = log_sum_exp(logits.row(r));
                for (i, m) in targets.row(r).iter().enumerate() {
                    if *m > 0.0 {
                        loss -= m * (logits.get(r, i) - lse);
                    }
                    seed.set(r, i, (fwd.probs.get(r, i) - m) * scale);
                }
            }
        }
        CriticLossMode::Squared => {
            for r in 0..b {
                let y: f64 = targets.row(r).iter().zip(atoms).map(|(m, z)| m * z).sum();
                let q = fwd.q[r];
                let resid = q - y;
                loss += resid * resid;
                for (i, z) in atoms.iter().enumerate() {
                    seed.set(r, i, 2.0 * resid * scale * fwd.probs.get(r, i) * (z - q));
                }
            }
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::NumericalFault(format!("critic loss is {loss}")));
    }
    let (grads, _) = backward_batch(critic.params(), &fwd.cache, &seed)?;
    Ok((loss, grads))
}

/// Critic loss and gradients for a batch of segments. Targets are computed with
/// the target networks and treated as constants.
pub fn critic_loss_grads(
    segments: &[NStepSegment],
    critic: &CriticNet,
    target_policy: &dyn Actor,
    target_critic: &CriticNet,
    mode: CriticLossMode,
) -> Result<(f64, NetworkParams)> {
    if segments.is_empty() {
        return Err(Error::Caller("critic loss on an empty batch".into()));
    }
    let targets = critic_targets(segments, target_policy, target_critic)?;
    let (obs, act, _) = segment_matrices(segments)?;
    critic_loss_from_targets(&obs, &act, &targets, critic, mode)
}
