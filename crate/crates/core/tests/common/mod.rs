//! Oracles shared by the property tests and the acceptance suite.

#![allow(dead_code)]

use growbatch::networks::critic_action_gradient;
use growbatch::numeric::{mlp_backward, mlp_forward};
use growbatch::objectives::{anchored_reg_grads, dpg_grads, teacher_action_grads};
use growbatch::targets::{critic_loss_grads, project_categorical, CriticLossMode, NStepSegment};
use growbatch::{CriticNet, Matrix, NetworkParams, OutputActivation, PolicyNet, Support};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 {
        diff
    } else {
        diff / na.max(nb)
    }
}

pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + STEP;
            let hi = f(&v);
            v[i] = x[i] - STEP;
            let lo = f(&v);
            v[i] = x[i];
            (hi - lo) / (2.0 * STEP)
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, random_vec(rng, rows * cols, 1.5)).unwrap()
}

fn random_hidden(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=8)).collect()
}

fn random_policy(rng: &mut ChaCha8Rng, obs: usize, act: usize) -> PolicyNet {
    let scale = random_vec(rng, act, 1.0).iter().map(|s| 0.5 + s.abs() * 2.0).collect();
    PolicyNet::init(obs, &random_hidden(rng), scale, rng).unwrap()
}

fn random_critic(rng: &mut ChaCha8Rng, obs: usize, act: usize) -> CriticNet {
    let atoms = rng.random_range(2..=11);
    let support = Support::new(-3.0, 5.0, atoms).unwrap();
    let mut c = CriticNet::init(obs, act, &random_hidden(rng), support, rng).unwrap();
    c.params_mut().scale(1.5);
    c
}

fn with_flat(p: &NetworkParams, flat: &[f64]) -> NetworkParams {
    let mut q = p.clone();
    q.set_flat(flat).unwrap();
    q
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=3))
}

/// Worst relative error of `mlp_backward` (parameters and input) over `draws` networks.
pub fn mlp_backward_worst(draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for draw in 0..draws {
        let mut sizes = vec![rng.random_range(1..=5)];
        sizes.extend(random_hidden(&mut rng));
        sizes.push(rng.random_range(1..=4));
        let out = if draw % 2 == 0 { OutputActivation::Tanh } else { OutputActivation::Linear };
        let p = NetworkParams::init_uniform(&sizes, out, &mut rng).unwrap();
        let x = random_vec(&mut rng, sizes[0], 2.0);
        let g = random_vec(&mut rng, *sizes.last().unwrap(), 1.0);
        let objective = |params: &NetworkParams, x: &[f64]| -> f64 {
            let (y, _) = mlp_forward(params, x).unwrap();
            y.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = mlp_forward(&p, &x).unwrap();
        let (dp, dx) = mlp_backward(&p, &cache, &g).unwrap();
        let fd_p = central_diff(&p.flatten(), |f| objective(&with_flat(&p, f), &x));
        let fd_x = central_diff(&x, |x| objective(&p, x));
        worst = worst.max(rel_err(&dp.flatten(), &fd_p)).max(rel_err(&dx, &fd_x));
    }
    worst
}

pub fn critic_action_gradient_worst(draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (obs_dim, act_dim) = dims(&mut rng);
        let critic = random_critic(&mut rng, obs_dim, act_dim);
        let s = random_vec(&mut rng, obs_dim, 2.0);
        let a = random_vec(&mut rng, act_dim, 1.0);
        let g = critic_action_gradient(&critic, &s, &a).unwrap();
        let fd = central_diff(&a, |a| {
            critic
                .q_batch(&Matrix::row_vector(&s), &Matrix::row_vector(a))
                .unwrap()[0]
        });
        worst = worst.max(rel_err(&g, &fd));
    }
    worst
}

pub fn dpg_grads_worst(draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (obs_dim, act_dim) = dims(&mut rng);
        let policy = random_policy(&mut rng, obs_dim, act_dim);
        let critic = random_critic(&mut rng, obs_dim, act_dim);
        let rows = rng.random_range(1..=6);
        let states = random_matrix(&mut rng, rows, obs_dim);
        let g = dpg_grads(&states, &policy, &critic).unwrap();
        let fd = central_diff(&policy.params().flatten(), |f| {
            let pi = PolicyNet::new(with_flat(policy.params(), f), policy.action_scale().to_vec()).unwrap();
            let (a, _) = pi.forward(&states).unwrap();
            let q = critic.q_batch(&states, &a).unwrap();
            q.iter().sum::<f64>() / q.len() as f64
        });
        worst = worst.max(rel_err(&g.flatten(), &fd));
    }
    worst
}

fn mean_sq_to(policy: &PolicyNet, flat: &[f64], states: &Matrix, targets: &Matrix) -> f64 {
    let pi = PolicyNet::new(with_flat(policy.params(), flat), policy.action_scale().to_vec()).unwrap();
    let (a, _) = pi.forward(states).unwrap();
    let sq: f64 = a.data().iter().zip(targets.data()).map(|(x, t)| (x - t).powi(2)).sum();
    sq / states.rows() as f64
}

/// Also folds in the gap between the returned loss and the directly computed one.
pub fn anchored_reg_grads_worst(draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (obs_dim, act_dim) = dims(&mut rng);
        let policy = random_policy(&mut rng, obs_dim, act_dim);
        let mut anchor = policy.clone();
        let noise = random_vec(&mut rng, anchor.params().num_params(), 0.3);
        let flat: Vec<f64> = anchor.params().flatten().iter().zip(&noise).map(|(a, b)| a + b).collect();
        anchor.params_mut().set_flat(&flat).unwrap();
        let rows = rng.random_range(1..=6);
        let states = random_matrix(&mut rng, rows, obs_dim);
        let (loss, g) = anchored_reg_grads(&states, &policy, &anchor).unwrap();
        let targets = anchor.forward(&states).unwrap().0;
        let x = policy.params().flatten();
        let fd = central_diff(&x, |f| mean_sq_to(&policy, f, &states, &targets));
        worst = worst
            .max((loss - mean_sq_to(&policy, &x, &states, &targets)).abs())
            .max(rel_err(&g.flatten(), &fd));
    }
    worst
}

pub fn teacher_action_grads_worst(draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (obs_dim, act_dim) = dims(&mut rng);
        let policy = random_policy(&mut rng, obs_dim, act_dim);
        let rows = rng.random_range(1..=6);
        let states = random_matrix(&mut rng, rows, obs_dim);
        let targets = random_matrix(&mut rng, rows, act_dim);
        let (loss, g) = teacher_action_grads(&states, &targets, &policy).unwrap();
        let x = policy.params().flatten();
        let fd = central_diff(&x, |f| mean_sq_to(&policy, f, &states, &targets));
        worst = worst
            .max((loss - mean_sq_to(&policy, &x, &states, &targets)).abs())
            .max(rel_err(&g.flatten(), &fd));
    }
    worst
}

/// Alternates the two loss modes; the target critic differs from the online one.
pub fn critic_loss_grads_worst(draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for draw in 0..draws {
        let (obs_dim, act_dim) = dims(&mut rng);
        let critic = random_critic(&mut rng, obs_dim, act_dim);
        let target_critic = {
            let mut t = critic.clone();
            let flat: Vec<f64> = t.params().flatten().iter().map(|v| v * 0.9 + 0.01).collect();
            t.params_mut().set_flat(&flat).unwrap();
            t
        };
        let target_policy = random_policy(&mut rng, obs_dim, act_dim);
        let segments: Vec<NStepSegment> = (0..rng.random_range(1..=5))
            .map(|_| {
                let steps = rng.random_range(1..=5);
                NStepSegment {
                    obs: random_vec(&mut rng, obs_dim, 2.0),
                    action: random_vec(&mut rng, act_dim, 1.0),
                    reward: rng.random_range(-2.0..3.0),
                    bootstrap_obs: random_vec(&mut rng, obs_dim, 2.0),
                    discount: if rng.random_bool(0.2) { 0.0 } else { 0.9f64.powi(steps as i32) },
                    steps,
                }
            })
            .collect();
        let mode = if draw % 2 == 0 { CriticLossMode::Distributional } else { CriticLossMode::Squared };
        let (loss, g) = critic_loss_grads(&segments, &critic, &target_policy, &target_critic, mode).unwrap();
        let loss_at = |flat: &[f64]| {
            let c = CriticNet::new(with_flat(critic.params(), flat), critic.support().clone(), obs_dim).unwrap();
            critic_loss_grads(&segments, &c, &target_policy, &target_critic, mode).unwrap().0
        };
        let x = critic.params().flatten();
        let fd = central_diff(&x, loss_at);
        worst = worst.max((loss - loss_at(&x)).abs()).max(rel_err(&g.flatten(), &fd));
    }
    worst
}

/// Scans every adjacent atom pair for the one bracketing the clipped value.
pub fn split_oracle(atoms: &[f64], value: f64) -> Vec<f64> {
    let n = atoms.len();
    let v = value.clamp(atoms[0], atoms[n - 1]);
    let mut out = vec![0.0; n];
    for i in 0..n {
        if atoms[i] == v {
            out[i] = 1.0;
            return out;
        }
    }
    for i in 0..n - 1 {
        let (zl, zu) = (atoms[i], atoms[i + 1]);
        if zl < v && v < zu {
            out[i] = (zu - v) / (zu - zl);
            out[i + 1] = (v - zl) / (zu - zl);
            return out;
        }
    }
    unreachable!("clipped value {v} not bracketed");
}

pub fn small_supports() -> Vec<Support> {
    let mut out = vec![];
    for atoms in 2..=5 {
        for v_min in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            for width in [0.4, 1.0, 2.0, 3.7, 10.0] {
                out.push(Support::new(v_min, v_min + width, atoms).unwrap());
            }
        }
    }
    out
}

/// Point masses on a 0.1 grid spanning 1.5× each small support. Returns the
/// number of cases checked and the number that differ from the oracle.
pub fn projection_grid_mismatches() -> (usize, usize) {
    let (mut cases, mut bad) = (0, 0);
    for support in small_supports() {
        let width = support.v_max() - support.v_min();
        let center = 0.5 * (support.v_min() + support.v_max());
        let lo = ((center - 0.75 * width) / 0.1).floor() as i64;
        let hi = ((center + 0.75 * width) / 0.1).ceil() as i64;
        for k in lo..=hi {
            let v = k as f64 * 0.1;
            let got = project_categorical(&support, &[v], &[1.0]).unwrap();
            if got != split_oracle(support.atoms(), v) {
                bad += 1;
            }
            cases += 1;
        }
    }
    (cases, bad)
}

/// Up to five weighted target values per small support, against the summed oracle.
/// Returns the largest absolute difference.
pub fn projection_mixture_worst(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for support in small_supports() {
        let k = rng.random_range(1..=5);
        let values: Vec<f64> = (0..k)
            .map(|_| rng.random_range(support.v_min() - 1.0..support.v_max() + 1.0))
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0) + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let got = project_categorical(&support, &values, &probs).unwrap();
        let mut want = vec![0.0; support.len()];
        for (v, p) in values.iter().zip(&probs) {
            for (w, o) in want.iter_mut().zip(split_oracle(support.atoms(), *v)) {
                *w += p * o;
            }
        }
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

/// Largest mass error over `cases` random supports and targets; negative
/// entries count as an infinite error.
pub fn projection_mass_worst(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let atoms = rng.random_range(2..=51);
        let v_min = rng.random_range(-50.0..50.0);
        let support = Support::new(v_min, v_min + rng.random_range(0.1..200.0), atoms).unwrap();
        let k = rng.random_range(1..=60);
        let span = support.v_max() - support.v_min();
        let values: Vec<f64> = (0..k)
            .map(|_| rng.random_range(support.v_min() - span..support.v_max() + span))
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0) + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let got = project_categorical(&support, &values, &probs).unwrap();
        if got.iter().any(|p| *p < 0.0) {
            return f64::INFINITY;
        }
        worst = worst.max((got.iter().sum::<f64>() - 1.0).abs());
    }
    worst
}
