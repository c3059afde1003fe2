use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use growbatch::objectives::dpg_grads;
use growbatch::targets::project_categorical;
use growbatch::{ExperimentConfig, ObjectiveMode, Support};
use growbatch_bench::{desk_networks, primed_trainer, random_states};

fn networks(c: &mut Criterion) {
    let (policy, critic) = desk_networks(1);
    let states = random_states(64, 2);
    c.bench_function("policy_forward_b64", |b| b.iter(|| policy.forward(black_box(&states)).unwrap()));
    let actions = policy.forward(&states).unwrap().0;
    c.bench_function("critic_q_b64", |b| b.iter(|| critic.q_batch(black_box(&states), &actions).unwrap()));
    c.bench_function("dpg_grads_b64", |b| b.iter(|| dpg_grads(black_box(&states), &policy, &critic).unwrap()));
}

fn projection(c: &mut Criterion) {
    let support = Support::new(0.0, 100.0, 51).unwrap();
    let values: Vec<f64> = support.atoms().iter().map(|z| 0.3 + 0.95 * z).collect();
    let probs = vec![1.0 / 51.0; 51];
    c.bench_function("project_51_atoms", |b| {
        b.iter(|| project_categorical(&support, black_box(&values), &probs).unwrap())
    });
}

fn learner_step(c: &mut Criterion) {
    for mode in [ObjectiveMode::Dpg, ObjectiveMode::BcDecay] {
        let mut cfg = ExperimentConfig::default();
        cfg.objective.mode = mode;
        let (mut trainer, mut ctx) = primed_trainer(&cfg);
        c.bench_function(&format!("learn_batch_{mode}"), |b| b.iter(|| trainer.learn_batch(&mut ctx).unwrap()));
    }
}

criterion_group!(benches, networks, projection, learner_step);
criterion_main!(benches);
