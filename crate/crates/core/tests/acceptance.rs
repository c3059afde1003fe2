//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use growbatch::driver::{evaluate_seeded, stream_rng, Agent, Stream, TeacherSource, Trainer};
use growbatch::numeric::Layer;
use growbatch::objectives::{q_filter, q_filter_batch, QFunction};
use growbatch::replay::spi_gate;
use growbatch::{
    alpha_schedule, run_experiment, train_online_teacher, CriticNet, CycleContext, ExperimentConfig,
    ExperimentReport, Matrix, NetworkParams, ObjectiveMode, OutputActivation, ScriptedPendulumExpert, Support,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_returns(v: &[f64]) -> String {
    v.iter().map(|r| format!("{r:.1}")).collect::<Vec<_>>().join(" ")
}

fn desk_config(mode: ObjectiveMode, seed: u64, out: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.objective.mode = mode;
    cfg.seed = seed;
    cfg.out_dir = out;
    cfg
}

fn run(cfg: &ExperimentConfig) -> ExperimentReport {
    run_experiment(cfg).unwrap_or_else(|e| panic!("run {} seed {}: {e}", cfg.objective.mode, cfg.seed))
}

fn cycle_finals(r: &ExperimentReport) -> Vec<f64> {
    r.cycles.iter().map(|c| c.final_return).collect()
}

fn gradient_fidelity() -> Outcome {
    let checks = [
        ("mlp_backward", mlp_backward_worst(100)),
        ("critic_action_gradient", critic_action_gradient_worst(100)),
        ("dpg_grads", dpg_grads_worst(100)),
        ("anchored_reg_grads", anchored_reg_grads_worst(100)),
        ("teacher_action_grads", teacher_action_grads_worst(100)),
        ("critic_loss_grads", critic_loss_grads_worst(100)),
    ];
    let pass = checks.iter().all(|(_, e)| *e < GRAD_TOL);
    let detail = checks
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("worst rel err over 100 draws: {detail}"))
}

fn projection_oracle() -> Outcome {
    let (cases, bad) = projection_grid_mismatches();
    let mixture = projection_mixture_worst(11);
    let mass = projection_mass_worst(10_000, 12);
    outcome(
        bad == 0 && mixture < 1e-12 && mass < 1e-9,
        format!("{bad}/{cases} grid points differ; mixture err {mixture:.1e}; mass err {mass:.1e} over 1e4 cases"),
    )
}

fn schedule_boundaries() -> Outcome {
    let mut pass = true;
    let mut checked = 0;
    for rate in [1.0, 5.0] {
        for n_total in [1_000u64, 20_000, 62_500] {
            pass &= alpha_schedule(0, n_total, rate) == 1.0;
            pass &= alpha_schedule(n_total, n_total, rate) == 0.0;
            let grid: Vec<u64> = (0..=1000).map(|i| i * n_total / 1000).collect();
            for w in grid.windows(2) {
                pass &= alpha_schedule(w[0], n_total, rate) > alpha_schedule(w[1], n_total, rate);
                checked += 1;
            }
        }
    }
    outcome(pass, format!("endpoints exact, {checked} grid steps strictly decreasing for r in {{1, 5}}"))
}

/// Q rising in the action: logits `[0, k·a]` on a two-atom support `{0, 1}`.
fn monotone_critic(k: f64) -> CriticNet {
    let weight = Matrix::from_vec(2, 4, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, k]).unwrap();
    let params = NetworkParams::from_layers(vec![Layer { weight, bias: vec![0.0; 2] }], OutputActivation::Linear).unwrap();
    CriticNet::new(params, Support::new(0.0, 1.0, 2).unwrap(), 3).unwrap()
}

/// Q peaked at `a = c`: two ReLU units compute `|a − c|`, logits `[0, −k|a − c|]`.
fn peaked_critic(c: f64, k: f64) -> CriticNet {
    let hidden = Layer {
        weight: Matrix::from_vec(2, 4, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]).unwrap(),
        bias: vec![-c, c],
    };
    let out = Layer {
        weight: Matrix::from_vec(2, 2, vec![0.0, 0.0, -k, -k]).unwrap(),
        bias: vec![0.0; 2],
    };
    let params = NetworkParams::from_layers(vec![hidden, out], OutputActivation::Linear).unwrap();
    CriticNet::new(params, Support::new(0.0, 1.0, 2).unwrap(), 3).unwrap()
}

struct Shifted<'a> {
    critic: &'a CriticNet,
    shift: f64,
}

impl QFunction for Shifted<'_> {
    fn q_values(&self, obs: &Matrix, actions: &Matrix) -> growbatch::Result<Vec<f64>> {
        let q = self.critic.q_batch(obs, actions)?;
        Ok(q.iter()
            .enumerate()
            .map(|(i, v)| v + self.shift * (1.0 + obs.row(i)[0]))
            .collect())
    }
}

fn q_filter_semantics() -> Outcome {
    let grid: Vec<f64> = (0..20).map(|i| -2.0 + 4.0 * i as f64 / 19.0).collect();
    let s = [0.3, -0.7, 1.1];
    let zero = CriticNet::new(
        NetworkParams::zeros(&[4, 8, 11], OutputActivation::Linear).unwrap(),
        Support::new(0.0, 10.0, 11).unwrap(),
        3,
    )
    .unwrap();
    // (critic, distance-to-preference used to classify each pair)
    let critics: Vec<(CriticNet, Box<dyn Fn(f64) -> f64>)> = vec![
        (monotone_critic(1.5), Box::new(|a: f64| -a)),
        (peaked_critic(0.37, 2.0), Box::new(|a: f64| (a - 0.37).abs())),
        (zero, Box::new(|_| 0.0)),
    ];
    let (mut dominates, mut dominated, mut ties, mut wrong) = (0, 0, 0, 0);
    let mut shift_changes = 0;
    for (critic, badness) in &critics {
        let mut states = Vec::new();
        let (mut stars, mut pis) = (Vec::new(), Vec::new());
        for &a_star in &grid {
            for &a_pi in &grid {
                let delta = q_filter(critic, &s, &[a_star], &[a_pi]).unwrap();
                let (bs, bp) = (badness(a_star), badness(a_pi));
                let expected = if bs < bp {
                    dominates += 1;
                    true
                } else if bs > bp {
                    dominated += 1;
                    false
                } else {
                    ties += 1;
                    true
                };
                wrong += usize::from(delta != expected);
                states.push(vec![s[0] + 0.01 * a_star, s[1], s[2] * a_pi]);
                stars.push(vec![a_star]);
                pis.push(vec![a_pi]);
            }
        }
        let states = Matrix::from_rows(&states).unwrap();
        let stars = Matrix::from_rows(&stars).unwrap();
        let pis = Matrix::from_rows(&pis).unwrap();
        let base = q_filter_batch(critic, &states, &stars, &pis).unwrap();
        for shift in [-100.0, -1.0, 0.5, 7.0, 1e3] {
            let moved = q_filter_batch(&Shifted { critic, shift }, &states, &stars, &pis).unwrap();
            shift_changes += base.iter().zip(&moved).filter(|(a, b)| a != b).count();
        }
    }
    outcome(
        wrong == 0 && shift_changes == 0 && ties > 0 && dominates > 0 && dominated > 0,
        format!(
            "3 critics × 20×20 grid: {dominates} dominate, {dominated} dominated, {ties} ties, {wrong} wrong; \
             {shift_changes} flips under 5 shifts"
        ),
    )
}

fn pacing_reproduction() -> Outcome {
    let (batch, spi, cycle_steps) = (256u64, 32u64, 500_000u64);
    let mut batches = 0u64;
    let mut off_grid = 0u64;
    for actor_steps in 1..=cycle_steps {
        while spi_gate(actor_steps, batches, spi, batch) {
            batches += 1;
            off_grid += u64::from(actor_steps != 8 * batches);
        }
    }
    let counters_ok = batches == 62_500 && off_grid == 0;

    // The same pacing through the real learner loop, at a cycle size it can afford.
    let mut cfg = ExperimentConfig::default();
    cfg.batch_size = 256;
    cfg.spi = 32;
    cfg.cycles = 1;
    cfg.total_actor_steps = 1_600;
    cfg.hidden_size = 16;
    cfg.hidden_layers = 1;
    cfg.eval_period = 1_000_000;
    cfg.validate().unwrap();
    let agent = Agent::init(&cfg, &mut stream_rng(cfg.seed, Stream::Init)).unwrap();
    let anchor = agent.policy.clone();
    let mut trainer = Trainer::new(&cfg, agent, None).unwrap();
    let mut ctx = CycleContext {
        cycle: 1,
        anchor_bc: anchor.clone(),
        anchor_prev: anchor,
        filter_critic: None,
        learner_step: 0,
        total_learner_steps: cfg.total_learner_steps(),
    };
    let log = trainer.run_cycle(&mut ctx).unwrap();
    let trainer_ok = log.actor_steps == 1_600 && log.learner_batches == 200 && trainer.learner_steps == 200;
    outcome(
        counters_ok && trainer_ok,
        format!(
            "500k actor steps -> {batches} batches, {off_grid} off the 8-step grid; learner loop {} steps -> {} batches",
            log.actor_steps, log.learner_batches
        ),
    )
}

struct DipRuns {
    dpg: Vec<ExperimentReport>,
    bc_decay: Vec<ExperimentReport>,
}

fn first_cycle_dip(r: &ExperimentReport) -> f64 {
    let min = r
        .curve
        .rows()
        .iter()
        .filter(|row| row.cycle == 1)
        .map(|row| row.return_mean)
        .fold(f64::INFINITY, f64::min);
    min / r.pretrain_return
}

fn bc_dip(root: &Path) -> (Outcome, DipRuns) {
    let runs_for = |mode: ObjectiveMode| -> Vec<ExperimentReport> {
        SEEDS
            .iter()
            .map(|&seed| {
                let mut cfg = desk_config(mode, seed, root.join(format!("c6_{mode}_{seed}")));
                cfg.objective.decay_rate = 5.0;
                run(&cfg)
            })
            .collect()
    };
    let runs = DipRuns {
        dpg: runs_for(ObjectiveMode::Dpg),
        bc_decay: runs_for(ObjectiveMode::BcDecay),
    };
    let dpg_ratio: Vec<f64> = runs.dpg.iter().map(first_cycle_dip).collect();
    let bc_ratio: Vec<f64> = runs.bc_decay.iter().map(first_cycle_dip).collect();
    let dips = dpg_ratio.iter().filter(|r| **r <= 0.5).count();
    let holds = bc_ratio.iter().filter(|r| **r >= 0.8).count();
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ");
    (
        outcome(
            dips >= 3 && holds >= 4,
            format!(
                "min cycle-1 / pretrained return: dpg [{}] ({dips}/5 ≤ 0.5), bc_decay r=5 [{}] ({holds}/5 ≥ 0.8)",
                fmt(&dpg_ratio),
                fmt(&bc_ratio)
            ),
        ),
        runs,
    )
}

fn qfilter_reaches_expert(root: &Path) -> Outcome {
    let probe = ExperimentConfig::default();
    let expert = ScriptedPendulumExpert::for_spec(&probe.env_spec()).unwrap();
    let (expert_return, _) = evaluate_seeded(&expert, &probe).unwrap();
    let runs: Vec<Vec<f64>> = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = desk_config(ObjectiveMode::TeacherActionQfilter, seed, root.join(format!("c7_{seed}")));
            cycle_finals(&run(&cfg))
        })
        .collect();
    let finals: Vec<f64> = runs.iter().map(|c| *c.last().unwrap()).collect();
    let med = median(finals.clone());
    let monotone = runs
        .iter()
        .filter(|c| c.windows(2).all(|w| w[1] >= 0.95 * w[0]))
        .count();
    outcome(
        med >= 0.9 * expert_return && monotone >= 4,
        format!(
            "expert {expert_return:.1}; median final {med:.1} ({:.2}× expert) over [{}]; {monotone}/5 seeds non-decreasing within 5%",
            med / expert_return,
            fmt_returns(&finals)
        ),
    )
}

struct OnlineTeacher {
    expert: PathBuf,
    mid_tier: Option<(PathBuf, f64)>,
    summary: String,
}

fn online_teacher(root: &Path) -> OnlineTeacher {
    let mut cfg = ExperimentConfig::default();
    cfg.spi = 64;
    cfg.teacher_train_steps = 100_000;
    cfg.eval_period = 1_000;
    cfg.checkpoint_period = 2_500;
    cfg.out_dir = root.join("teacher");
    let report = train_online_teacher(&cfg).expect("online teacher training");
    let summary = format!(
        "teacher expert {:.1}, mid-tier {}",
        report.expert.eval_return,
        report
            .mid_tier
            .as_ref()
            .map_or("unavailable".into(), |m| format!("{:.1}", m.eval_return))
    );
    OnlineTeacher {
        expert: report.expert.path.clone(),
        mid_tier: report.mid_tier.map(|m| (m.path, m.eval_return)),
        summary,
    }
}

fn gradient_ordering(root: &Path, teacher: &OnlineTeacher) -> Outcome {
    let median_final = |mode: ObjectiveMode| -> (f64, Vec<f64>) {
        let finals: Vec<f64> = SEEDS
            .iter()
            .map(|&seed| {
                let mut cfg = desk_config(mode, seed, root.join(format!("c8_{mode}_{seed}")));
                cfg.teacher = TeacherSource::Checkpoint(teacher.expert.clone());
                run(&cfg).final_return()
            })
            .collect();
        (median(finals.clone()), finals)
    };
    let (bc, bc_all) = median_final(ObjectiveMode::BcDecay);
    let (grad, grad_all) = median_final(ObjectiveMode::TeacherGradientDecay);
    let (qf, qf_all) = median_final(ObjectiveMode::TeacherActionQfilter);
    outcome(
        bc <= grad && grad <= qf,
        format!(
            "{}; medians bc_decay {bc:.1} [{}], teacher_gradient_decay {grad:.1} [{}], teacher_action_qfilter {qf:.1} [{}]; bc ≤ grad {}, grad ≤ qfilter {}",
            teacher.summary,
            fmt_returns(&bc_all),
            fmt_returns(&grad_all),
            fmt_returns(&qf_all),
            bc <= grad,
            grad <= qf
        ),
    )
}

fn suboptimal_teacher(root: &Path, teacher: &OnlineTeacher) -> Outcome {
    let Some((path, teacher_return)) = &teacher.mid_tier else {
        return outcome(false, format!("{}; no mid-tier checkpoint", teacher.summary));
    };
    let finals: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let mut cfg = desk_config(ObjectiveMode::TeacherActionQfilter, seed, root.join(format!("c9_{seed}")));
            cfg.teacher = TeacherSource::Checkpoint(path.clone());
            cfg.cycles = 8;
            cfg.total_actor_steps = 80_000;
            run(&cfg).final_return()
        })
        .collect();
    let med = median(finals.clone());
    outcome(
        med >= 1.05 * teacher_return,
        format!(
            "mid-tier teacher {teacher_return:.1}; median final after 8 cycles {med:.1} ({:.2}×) over [{}]",
            med / teacher_return,
            fmt_returns(&finals)
        ),
    )
}

fn determinism(root: &Path, reference: Option<&ExperimentReport>) -> Outcome {
    let mut cfg = desk_config(ObjectiveMode::Dpg, 0, root.join("c10_a"));
    cfg.objective.decay_rate = 5.0;
    let first = match reference {
        Some(r) => r.csv_path.clone(),
        None => run(&cfg).csv_path,
    };
    cfg.out_dir = root.join("c10_b");
    let second = run(&cfg).csv_path;
    let (a, b) = (std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    outcome(
        a == b && !a.is_empty(),
        format!("dpg seed 0 rerun: {} vs {} bytes, identical = {}", a.len(), b.len(), a == b),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut failures = 0;
    let mut report = |id: u32, name: &str, started: Instant, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {status} {name} [{:.0}s]: {}",
            started.elapsed().as_secs_f64(),
            o.detail
        );
        std::io::stdout().flush().unwrap();
        failures += usize::from(!o.pass);
    };

    let quick: [(u32, &str, fn() -> Outcome); 5] = [
        (1, "gradient fidelity", gradient_fidelity),
        (2, "projection oracle", projection_oracle),
        (3, "schedule boundaries", schedule_boundaries),
        (4, "Q-filter semantics", q_filter_semantics),
        (5, "pacing reproduction", pacing_reproduction),
    ];
    for (id, name, check) in quick {
        if want(id) {
            let t = Instant::now();
            report(id, name, t, check());
        }
    }

    let mut dip_runs = None;
    if want(6) {
        let t = Instant::now();
        let (o, runs) = bc_dip(root);
        report(6, "BC dip and its repair", t, o);
        dip_runs = Some(runs);
    }
    if want(7) {
        let t = Instant::now();
        report(7, "Q-filtered teacher actions reach the expert", t, qfilter_reaches_expert(root));
    }
    if want(8) || want(9) {
        let t = Instant::now();
        let teacher = online_teacher(root);
        println!("online teacher trained in {:.0}s: {}", t.elapsed().as_secs_f64(), teacher.summary);
        if want(8) {
            let t = Instant::now();
            report(8, "teacher-gradient ordering", t, gradient_ordering(root, &teacher));
        }
        if want(9) {
            let t = Instant::now();
            report(9, "surpassing a sub-optimal teacher", t, suboptimal_teacher(root, &teacher));
        }
    }
    if want(10) {
        let t = Instant::now();
        let reference = dip_runs.as_ref().map(|r| &r.dpg[0]);
        report(10, "determinism", t, determinism(root, reference));
    }

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all selected acceptance criteria passed");
}
