//! Fixtures shared by the benchmarks.

use growbatch::driver::{stream_rng, Agent, Stream, Trainer};
use growbatch::{CriticNet, CycleContext, ExperimentConfig, Matrix, PolicyNet, Support};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale networks: 3 hidden layers of 64, pendulum dimensions, 51 atoms.
pub fn desk_networks(seed: u64) -> (PolicyNet, CriticNet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = [64, 64, 64];
    let policy = PolicyNet::init(3, &hidden, vec![2.0], &mut rng).unwrap();
    let critic = CriticNet::init(3, 1, &hidden, Support::new(0.0, 100.0, 51).unwrap(), &mut rng).unwrap();
    (policy, critic)
}

pub fn random_states(rows: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, 3, (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// A trainer holding one cycle of acting data, ready for learner steps.
pub fn primed_trainer(cfg: &ExperimentConfig) -> (Trainer<'_>, CycleContext) {
    let agent = Agent::init(cfg, &mut stream_rng(cfg.seed, Stream::Init)).unwrap();
    let anchor = agent.policy.clone();
    let mut trainer = Trainer::new(cfg, agent, None).unwrap();
    trainer.act(&anchor, 2_000, 1).unwrap();
    let ctx = CycleContext {
        cycle: 1,
        anchor_bc: anchor.clone(),
        anchor_prev: anchor,
        filter_critic: None,
        learner_step: 0,
        total_learner_steps: cfg.total_learner_steps(),
    };
    (trainer, ctx)
}
