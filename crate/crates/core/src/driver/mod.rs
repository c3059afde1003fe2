//! Experiment pipeline: behavior-cloning and critic pretraining, growing-batch
//! cycles of acting then learning, evaluation, online teacher training and the
//! artifacts each run leaves on disk.

mod config;
mod curve;

pub use config::{ExperimentConfig, TeacherCritic, TeacherSource};
pub use curve::{CurveRow, LearningCurve, CSV_HEADER};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::Checkpoint;
use crate::env::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::networks::{ActionGradientSource, Actor, CriticNet, PolicyNet};
use crate::numeric::{Matrix, Optimizer, OptimizerKind};
use crate::objectives::{alpha_schedule, combined_policy_grads, teacher_action_grads, Annotations, CycleContext, ObjectiveMode};
use crate::replay::{paced_batches, spi_gate, ReplayStore, Transition, DEFAULT_CAPACITY};
use crate::targets::{critic_loss_grads, CriticLossMode};
use crate::teachers::{generate_demos, make_snapshot_teacher, DemoDataset, ScriptedPendulumExpert, Teacher};

/// Independent random streams derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Demos = 1,
    BcShuffle = 2,
    CriticFit = 3,
    Act = 4,
    Learn = 5,
    Eval = 6,
    TeacherFit = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Online networks and their periodically synchronized targets.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: PolicyNet,
    pub critic: CriticNet,
    pub target_policy: PolicyNet,
    pub target_critic: CriticNet,
}

impl Agent {
    pub fn new(policy: PolicyNet, critic: CriticNet) -> Self {
        Self {
            target_policy: policy.clone(),
            target_critic: critic.clone(),
            policy,
            critic,
        }
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<Self> {
        let spec = cfg.env_spec();
        let policy = PolicyNet::init(spec.obs_dim, &cfg.hidden(), vec![spec.action_bound; spec.act_dim], rng)?;
        let critic = CriticNet::init(spec.obs_dim, spec.act_dim, &cfg.hidden(), cfg.support()?, rng)?;
        Ok(Self::new(policy, critic))
    }

    pub fn sync_targets(&mut self) {
        self.target_policy = self.policy.clone();
        self.target_critic = self.critic.clone();
    }

    pub fn checkpoint(&self, learner_step: u64, eval_return: f64) -> Checkpoint {
        Checkpoint {
            policy: self.policy.clone(),
            critic: Some(self.critic.clone()),
            learner_step,
            eval_return,
        }
    }
}

/// Mean and sample standard deviation of noise-free episode returns.
///
/// All episodes are stepped in lockstep so the policy sees one batch per time step.
pub fn evaluate<R: Rng + ?Sized>(actor: &dyn Actor, spec: &EnvSpec, episodes: usize, rng: &mut R) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::Caller("evaluation needs at least one episode".into()));
    }
    let mut envs: Vec<Env> = (0..episodes).map(|_| Env::new(*spec)).collect();
    let mut obs = Matrix::zeros(episodes, spec.obs_dim);
    for (i, env) in envs.iter_mut().enumerate() {
        obs.row_mut(i).copy_from_slice(&env.reset(rng));
    }
    let mut returns = vec![0.0; episodes];
    for _ in 0..spec.episode_length {
        let actions = actor.act_batch(&obs)?;
        for (i, env) in envs.iter_mut().enumerate() {
            let out = env.step(actions.row(i))?;
            returns[i] += out.reward;
            obs.row_mut(i).copy_from_slice(&out.obs);
        }
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = if episodes > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

/// Evaluation with the run's fixed evaluation stream, so every evaluation of a
/// run starts from the same initial states.
pub fn evaluate_seeded(actor: &dyn Actor, cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    evaluate(actor, &cfg.env_spec(), cfg.eval_episodes, &mut stream_rng(cfg.seed, Stream::Eval))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    /// Full-dataset mean squared action error before training.
    pub initial_loss: f64,
    /// Full-dataset loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

fn full_bc_loss(policy: &PolicyNet, obs: &Matrix, act: &Matrix) -> Result<f64> {
    let pred = policy.act_batch(obs)?;
    let n = obs.rows() as f64;
    Ok(pred.data().iter().zip(act.data()).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / n)
}

fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(*i));
    }
    out
}

/// Settings for behavior cloning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcFit {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl From<&ExperimentConfig> for BcFit {
    fn from(cfg: &ExperimentConfig) -> Self {
        Self {
            epochs: cfg.pretrain_epochs,
            lr: cfg.pretrain_lr,
            batch_size: cfg.batch_size,
            optimizer: cfg.optimizer,
        }
    }
}

/// Minibatch descent on `‖π(s) − a‖²` over shuffled demonstrations.
pub fn pretrain_bc<R: Rng + ?Sized>(
    demos: &ReplayStore,
    mut policy: PolicyNet,
    fit: &BcFit,
    rng: &mut R,
) -> Result<(PolicyNet, BcReport)> {
    if demos.is_empty() {
        return Err(Error::Caller("behavior cloning on an empty dataset".into()));
    }
    if demos.obs_dim() != policy.obs_dim() || demos.act_dim() != policy.act_dim() {
        return Err(Error::Config(format!(
            "demonstrations ({} -> {}) do not fit the policy ({} -> {})",
            demos.obs_dim(),
            demos.act_dim(),
            policy.obs_dim(),
            policy.act_dim()
        )));
    }
    let (obs, act) = demos.obs_action_matrices()?;
    let initial_loss = full_bc_loss(&policy, &obs, &act)?;
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let mut epoch_losses = Vec::with_capacity(fit.epochs);
    let mut opt = Optimizer::new(fit.optimizer, policy.params());
    for _ in 0..fit.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(fit.batch_size) {
            let s = gather_rows(&obs, chunk);
            let a = gather_rows(&act, chunk);
            let (_, grads) = teacher_action_grads(&s, &a, &policy)?;
            opt.apply(policy.params_mut(), &grads, fit.lr)?;
        }
        epoch_losses.push(full_bc_loss(&policy, &obs, &act)?);
    }
    Ok((
        policy,
        BcReport {
            initial_loss,
            epoch_losses,
        },
    ))
}

/// Settings for fitting a critic to a fixed policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticFit {
    pub steps: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub n_step: usize,
    pub gamma: f64,
    pub target_update_period: u64,
    pub loss: CriticLossMode,
    pub optimizer: OptimizerKind,
}

impl From<&ExperimentConfig> for CriticFit {
    fn from(cfg: &ExperimentConfig) -> Self {
        Self {
            steps: cfg.critic_pretrain_steps,
            lr: cfg.critic_lr,
            batch_size: cfg.batch_size,
            n_step: cfg.n_step,
            gamma: cfg.gamma,
            target_update_period: cfg.target_update_period,
            loss: cfg.critic_loss,
            optimizer: cfg.optimizer,
        }
    }
}

/// Policy evaluation of `policy` on `data`: the critic regresses onto n-step
/// targets bootstrapped with `policy` and a periodically copied target critic.
/// Returns the fitted critic and the per-step training loss.
pub fn pretrain_critic<R: Rng + ?Sized>(
    data: &ReplayStore,
    policy: &dyn Actor,
    mut critic: CriticNet,
    fit: &CriticFit,
    rng: &mut R,
) -> Result<(CriticNet, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Caller("policy evaluation on an empty dataset".into()));
    }
    let mut target = critic.clone();
    let mut losses = Vec::with_capacity(fit.steps as usize);
    let mut opt = Optimizer::new(fit.optimizer, critic.params());
    for step in 1..=fit.steps {
        let segs = data.sample_nstep_batch(rng, fit.batch_size, fit.n_step, fit.gamma)?;
        let (loss, grads) = critic_loss_grads(&segs, &critic, policy, &target, fit.loss)?;
        opt.apply(critic.params_mut(), &grads, fit.lr)?;
        losses.push(loss);
        if step % fit.target_update_period == 0 {
            target = critic.clone();
        }
    }
    Ok((critic, losses))
}

/// Everything a cycle reports besides the curve rows it adds.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleLog {
    pub cycle: u32,
    pub actor_steps: u64,
    pub learner_batches: u64,
    pub final_return: f64,
    pub mean_critic_loss: f64,
    /// Mean fraction of states routed to imitation by the Q-filter.
    pub mean_filter_rate: Option<f64>,
}

/// Mutable training state shared by growing-batch runs and online training.
pub struct Trainer<'a> {
    pub cfg: &'a ExperimentConfig,
    pub spec: EnvSpec,
    pub agent: Agent,
    pub store: ReplayStore,
    pub teacher: Option<&'a Teacher>,
    pub curve: LearningCurve,
    pub actor_steps: u64,
    pub learner_steps: u64,
    policy_opt: Optimizer,
    critic_opt: Optimizer,
    next_episode: u64,
    act_rng: ChaCha8Rng,
    learn_rng: ChaCha8Rng,
    noise: Normal<f64>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, agent: Agent, teacher: Option<&'a Teacher>) -> Result<Self> {
        let spec = cfg.env_spec();
        let noise = Normal::new(0.0, cfg.noise_sigma()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            policy_opt: Optimizer::new(cfg.optimizer, agent.policy.params()),
            critic_opt: Optimizer::new(cfg.optimizer, agent.critic.params()),
            cfg,
            spec,
            agent,
            store: ReplayStore::new(spec.obs_dim, spec.act_dim, DEFAULT_CAPACITY)?,
            teacher,
            curve: LearningCurve::new(),
            actor_steps: 0,
            learner_steps: 0,
            next_episode: 0,
            act_rng: stream_rng(cfg.seed, Stream::Act),
            learn_rng: stream_rng(cfg.seed, Stream::Learn),
            noise,
            started: Instant::now(),
        })
    }

    fn noisy_action(&mut self, behavior: &PolicyNet, obs: &[f64]) -> Result<Vec<f64>> {
        let mut a = behavior.act(obs)?;
        for (v, b) in a.iter_mut().zip(behavior.action_scale()) {
            *v = (*v + self.noise.sample(&mut self.act_rng)).clamp(-b, *b);
        }
        Ok(a)
    }

    /// Runs one episode-aligned stretch of `steps` exploratory actions with a
    /// frozen behavior policy, appending every transition with tag `cycle`.
    /// An episode still running when the budget ends is cut off there.
    pub fn act(&mut self, behavior: &PolicyNet, steps: u64, cycle: u32) -> Result<()> {
        let mut env = Env::new(self.spec);
        let mut obs = env.reset(&mut self.act_rng);
        let mut step_index = 0u64;
        for _ in 0..steps {
            let action = self.noisy_action(behavior, &obs)?;
            let out = env.step(&action)?;
            self.store.append(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: out.reward,
                next_obs: out.obs.clone(),
                terminal: out.terminal,
                episode_id: self.next_episode,
                step_index,
                cycle,
            })?;
            self.actor_steps += 1;
            step_index += 1;
            obs = out.obs;
            if out.terminal || out.time_limit {
                obs = env.reset(&mut self.act_rng);
                self.next_episode += 1;
                step_index = 0;
            }
        }
        if step_index > 0 {
            self.next_episode += 1;
        }
        Ok(())
    }

    /// One learner batch: policy and critic gradients from the same sample,
    /// both applied, targets copied on schedule. Returns the critic loss and
    /// the Q-filter rate when the mode has one.
    pub fn learn_batch(&mut self, ctx: &mut CycleContext) -> Result<(f64, Option<f64>)> {
        let cfg = self.cfg;
        let segs = self
            .store
            .sample_nstep_batch(&mut self.learn_rng, cfg.batch_size, cfg.n_step, cfg.gamma)?;
        let rows: Vec<&[f64]> = segs.iter().map(|s| s.obs.as_slice()).collect();
        let states = Matrix::from_rows(&rows)?;
        let mode = cfg.objective.mode;
        let need_teacher = || {
            self.teacher
                .ok_or_else(|| Error::AnnotationUnavailable(format!("mode {mode} needs a teacher")))
        };
        let teacher_actions = if mode.needs_teacher_actions() {
            Some(need_teacher()?.annotate_actions(&states)?)
        } else {
            None
        };
        let teacher_gradients: Option<&dyn ActionGradientSource> = if mode.needs_teacher_gradients() {
            Some(need_teacher()?)
        } else {
            None
        };
        let annotations = Annotations {
            teacher_actions: teacher_actions.as_ref(),
            teacher_gradients,
        };
        ctx.learner_step = self.learner_steps;
        let mut update = combined_policy_grads(&states, &self.agent.policy, &self.agent.critic, &cfg.objective, ctx, &annotations)?;
        let (critic_loss, critic_grads) = critic_loss_grads(
            &segs,
            &self.agent.critic,
            &self.agent.target_policy,
            &self.agent.target_critic,
            cfg.critic_loss,
        )?;
        update.grads.scale(-1.0);
        self.policy_opt.apply(self.agent.policy.params_mut(), &update.grads, cfg.actor_lr)?;
        self.critic_opt.apply(self.agent.critic.params_mut(), &critic_grads, cfg.critic_lr)?;
        self.learner_steps += 1;
        if self.learner_steps % cfg.target_update_period == 0 {
            self.agent.sync_targets();
        }
        Ok((critic_loss, update.filter_rate))
    }

    /// Evaluates the current policy and appends a curve row.
    pub fn record(&mut self, cycle: u32, alpha: f64) -> Result<f64> {
        let (mean, std) = evaluate_seeded(&self.agent.policy, self.cfg)?;
        self.curve.push(CurveRow {
            learner_step: self.learner_steps,
            cycle,
            return_mean: mean,
            return_std: std,
            alpha,
            wall_time: self.started.elapsed().as_secs_f64(),
        })?;
        Ok(mean)
    }

    fn logged_alpha(&self, step: u64) -> f64 {
        let o = &self.cfg.objective;
        if o.mode.uses_schedule() {
            alpha_schedule(step, self.cfg.total_learner_steps(), o.decay_rate)
        } else {
            0.0
        }
    }

    /// Acting with the frozen cycle-start policy, then the paced learning phase.
    pub fn run_cycle(&mut self, ctx: &mut CycleContext) -> Result<CycleLog> {
        let cfg = self.cfg;
        let k = ctx.cycle;
        let behavior = self.agent.policy.clone();
        ctx.anchor_prev = behavior.clone();
        let steps_before = self.actor_steps;
        self.act(&behavior, cfg.actor_steps_per_cycle(), k)?;
        ctx.filter_critic = Some(self.agent.critic.clone());

        let batches_before = self.learner_steps;
        let mut final_return = f64::NAN;
        let mut loss_sum = 0.0;
        let mut filter_sum = 0.0;
        let mut filter_n = 0usize;
        while spi_gate(self.actor_steps, self.learner_steps, cfg.spi, cfg.batch_size as u64) {
            let (loss, rate) = self.learn_batch(ctx)?;
            loss_sum += loss;
            if let Some(r) = rate {
                filter_sum += r;
                filter_n += 1;
            }
            if self.learner_steps % cfg.eval_period == 0 {
                final_return = self.record(k, self.logged_alpha(self.learner_steps))?;
            }
        }
        let batches = self.learner_steps - batches_before;
        let log = CycleLog {
            cycle: k,
            actor_steps: self.actor_steps - steps_before,
            learner_batches: batches,
            final_return,
            mean_critic_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            mean_filter_rate: (filter_n > 0).then(|| filter_sum / filter_n as f64),
        };
        info!(
            "cycle {k}: {} actor steps, {} learner batches, final return {:.1}",
            log.actor_steps, log.learner_batches, log.final_return
        );
        Ok(log)
    }
}

/// Loads the teacher named by the config with whatever critic it carries.
pub fn load_teacher(cfg: &ExperimentConfig) -> Result<Teacher> {
    match &cfg.teacher {
        TeacherSource::Scripted => Ok(Teacher::scripted(ScriptedPendulumExpert::for_spec(&cfg.env_spec())?)),
        TeacherSource::Checkpoint(path) => make_snapshot_teacher(path),
    }
}

/// Keeps, strips or fits the teacher's critic as the config asks. Fitting runs
/// policy evaluation of the teacher policy on `demos`.
pub fn settle_teacher_critic(teacher: Teacher, cfg: &ExperimentConfig, demos: Option<&ReplayStore>) -> Result<Teacher> {
    match cfg.teacher_critic {
        TeacherCritic::Own => Ok(teacher),
        TeacherCritic::None => Ok(teacher.without_critic()),
        TeacherCritic::Fitted => {
            let data = demos.ok_or_else(|| Error::Config("a fitted teacher critic needs demonstrations".into()))?;
            let spec = cfg.env_spec();
            let mut rng = stream_rng(cfg.seed, Stream::TeacherFit);
            let critic = CriticNet::init(spec.obs_dim, spec.act_dim, &cfg.hidden(), cfg.support()?, &mut rng)?;
            let (critic, _) = pretrain_critic(data, &teacher, critic, &CriticFit::from(cfg), &mut rng)?;
            Ok(teacher.with_critic(critic))
        }
    }
}

/// Summary of a finished growing-batch run.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub curve: LearningCurve,
    pub bc: Option<BcReport>,
    pub critic_pretrain_losses: Vec<f64>,
    /// Evaluation of the policy before the first cycle.
    pub pretrain_return: f64,
    pub cycles: Vec<CycleLog>,
    pub csv_path: PathBuf,
    pub agent: Agent,
}

impl ExperimentReport {
    pub fn final_return(&self) -> f64 {
        self.cycles.last().map_or(f64::NAN, |c| c.final_return)
    }
}

pub fn curve_file_name(mode: ObjectiveMode, seed: u64) -> String {
    format!("curve_{mode}_{seed}.csv")
}

struct Manifest {
    lines: String,
}

impl Manifest {
    fn new(cfg: &ExperimentConfig, command: &str) -> Self {
        let mut lines = format!("command = {command}\n");
        lines.push_str(&cfg.to_kv());
        Self { lines }
    }

    fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.lines, "{key} = {value}");
    }

    fn write(&self, dir: &Path) -> Result<()> {
        Ok(std::fs::write(dir.join("manifest.txt"), &self.lines)?)
    }
}

/// Runs `f` as a named stage; on failure the manifest records the stage and error.
fn stage<T>(manifest: &mut Manifest, dir: &Path, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().inspect_err(|e| {
        manifest.add("status", "failed");
        manifest.add("failed_stage", name);
        manifest.add("error", e.to_string().replace('\n', " "));
        if let Err(w) = manifest.write(dir) {
            warn!("could not write manifest: {w}");
        }
    })
}

fn load_or_generate_demos(cfg: &ExperimentConfig, teacher: Option<&Teacher>) -> Result<DemoDataset> {
    match &cfg.demos {
        Some(path) => {
            let id = teacher.map_or("external", |t| t.id());
            DemoDataset::load(path, id)
        }
        None => {
            let teacher = teacher.ok_or_else(|| Error::Config("no teacher to generate demonstrations".into()))?;
            generate_demos(teacher, &cfg.env_spec(), cfg.demo_episodes, &mut stream_rng(cfg.seed, Stream::Demos))
        }
    }
}

/// Behavior cloning then policy evaluation, both on teacher demonstrations.
pub fn pretrain(cfg: &ExperimentConfig, demos: &ReplayStore) -> Result<(Agent, BcReport, Vec<f64>)> {
    let agent = Agent::init(cfg, &mut stream_rng(cfg.seed, Stream::Init))?;
    let (policy, bc) = pretrain_bc(demos, agent.policy, &BcFit::from(cfg), &mut stream_rng(cfg.seed, Stream::BcShuffle))?;
    let (critic, losses) = pretrain_critic(
        demos,
        &policy,
        agent.critic,
        &CriticFit::from(cfg),
        &mut stream_rng(cfg.seed, Stream::CriticFit),
    )?;
    Ok((Agent::new(policy, critic), bc, losses))
}

/// The full growing-batch pipeline with every artifact written under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut manifest = Manifest::new(cfg, "run");
    let m = &mut manifest;

    let needs_demos = cfg.pretrain || cfg.teacher_critic == TeacherCritic::Fitted;
    let needs_teacher = cfg.mode_needs_teacher() || (needs_demos && cfg.demos.is_none());
    let (teacher, demos) = stage(m, &dir, "setup", || {
        let teacher = needs_teacher.then(|| load_teacher(cfg)).transpose()?;
        let demos = needs_demos
            .then(|| load_or_generate_demos(cfg, teacher.as_ref()))
            .transpose()?;
        let teacher = match teacher {
            Some(t) if cfg.mode_needs_teacher() => Some(settle_teacher_critic(t, cfg, demos.as_ref().map(|d| &d.store))?),
            _ => None,
        };
        if cfg.objective.mode.needs_teacher_gradients() && !teacher.as_ref().is_some_and(|t| t.capabilities().gradients) {
            return Err(Error::AnnotationUnavailable(format!(
                "mode {} needs a teacher with a critic",
                cfg.objective.mode
            )));
        }
        Ok((teacher, demos))
    })?;
    if let Some(t) = &teacher {
        m.add("teacher_id", t.id());
    }

    let (agent, bc, critic_losses) = if cfg.pretrain {
        let demos = demos.as_ref().map(|d| &d.store).expect("demos resolved for pretraining");
        let (agent, bc, losses) = stage(m, &dir, "pretrain", || pretrain(cfg, demos))?;
        (agent, Some(bc), losses)
    } else {
        (Agent::init(cfg, &mut stream_rng(cfg.seed, Stream::Init))?, None, vec![])
    };
    if let Some(bc) = &bc {
        m.add("bc_final_loss", format!("{:.6}", bc.epoch_losses.last().copied().unwrap_or(bc.initial_loss)));
    }

    let mut trainer = Trainer::new(cfg, agent, teacher.as_ref())?;
    let pretrain_return = stage(m, &dir, "evaluate_pretrained", || {
        let r = trainer.record(0, trainer.logged_alpha(0))?;
        trainer.agent.checkpoint(0, r).save(dir.join("ckpt_cycle0.bin"))?;
        Ok(r)
    })?;
    m.add("pretrain_return", format!("{pretrain_return:.3}"));

    let mut ctx = CycleContext {
        cycle: 0,
        anchor_bc: trainer.agent.policy.clone(),
        anchor_prev: trainer.agent.policy.clone(),
        filter_critic: None,
        learner_step: 0,
        total_learner_steps: cfg.total_learner_steps(),
    };
    let mut cycles = Vec::with_capacity(cfg.cycles as usize);
    for k in 1..=cfg.cycles {
        ctx.cycle = k;
        let log = stage(m, &dir, &format!("cycle{k}"), || {
            trainer.run_cycle(&mut ctx).inspect_err(|e| {
                if matches!(e, Error::NumericalFault(_)) {
                    let ck = trainer.agent.checkpoint(trainer.learner_steps, f64::NAN);
                    if let Err(w) = ck.save(dir.join("ckpt_fault.bin")) {
                        warn!("could not write diagnostic checkpoint: {w}");
                    }
                }
            })
        })?;
        trainer
            .agent
            .checkpoint(trainer.learner_steps, log.final_return)
            .save(dir.join(format!("ckpt_cycle{k}.bin")))?;
        m.add(&format!("cycle{k}_final_return"), format!("{:.3}", log.final_return));
        cycles.push(log);
    }

    let mode = cfg.objective.mode;
    let csv_path = dir.join(curve_file_name(mode, cfg.seed));
    trainer.curve.write_csv(&csv_path)?;
    std::fs::write(dir.join(format!("timing_{mode}_{}.csv", cfg.seed)), trainer.curve.timing_csv())?;
    m.add("status", "ok");
    manifest.write(&dir)?;
    Ok(ExperimentReport {
        curve: trainer.curve,
        bc,
        critic_pretrain_losses: critic_losses,
        pretrain_return,
        cycles,
        csv_path,
        agent: trainer.agent,
    })
}

/// One run per mode, each in its own subdirectory, all on the same evaluation grid.
pub fn compare_modes(cfg: &ExperimentConfig, modes: &[ObjectiveMode]) -> Result<Vec<ExperimentReport>> {
    modes
        .iter()
        .map(|mode| {
            let mut c = cfg.clone();
            c.objective.mode = *mode;
            c.out_dir = cfg.out_dir.join(mode.as_str());
            run_experiment(&c)
        })
        .collect()
}

/// A checkpoint saved during online training.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedCheckpoint {
    pub learner_step: u64,
    pub eval_return: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TeacherTrainReport {
    pub curve: LearningCurve,
    pub checkpoints: Vec<SavedCheckpoint>,
    pub expert: SavedCheckpoint,
    /// Earliest checkpoint reaching 0.6 × the expert return, if any.
    pub mid_tier: Option<SavedCheckpoint>,
}

pub const MID_TIER_FRACTION: f64 = 0.6;

/// Plain online actor-critic training with spi-paced updates and no cycles or
/// annotations. Writes periodic checkpoints plus `teacher_expert.bin` (best
/// evaluation) and `teacher_midtier.bin`.
pub fn train_online_teacher(cfg: &ExperimentConfig) -> Result<TeacherTrainReport> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut online = cfg.clone();
    online.objective.mode = ObjectiveMode::Dpg;
    let mut manifest = Manifest::new(&online, "teacher-train");
    let agent = Agent::init(&online, &mut stream_rng(online.seed, Stream::Init))?;
    let mut trainer = Trainer::new(&online, agent, None)?;
    let mut ctx = CycleContext {
        cycle: 0,
        anchor_bc: trainer.agent.policy.clone(),
        anchor_prev: trainer.agent.policy.clone(),
        filter_critic: None,
        learner_step: 0,
        total_learner_steps: 0,
    };

    let mut checkpoints = Vec::new();
    let mut env = Env::new(trainer.spec);
    let mut act_rng = stream_rng(online.seed, Stream::Act);
    let mut obs = env.reset(&mut act_rng);
    let (mut episode, mut step_index) = (0u64, 0u64);
    let batch = online.batch_size as u64;
    let result = (|| -> Result<()> {
        for _ in 0..online.teacher_train_steps {
            let policy = trainer.agent.policy.clone();
            let mut action = policy.act(&obs)?;
            for (v, b) in action.iter_mut().zip(policy.action_scale()) {
                *v = (*v + trainer.noise.sample(&mut act_rng)).clamp(-b, *b);
            }
            let out = env.step(&action)?;
            trainer.store.append(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: out.reward,
                next_obs: out.obs.clone(),
                terminal: out.terminal,
                episode_id: episode,
                step_index,
                cycle: 0,
            })?;
            trainer.actor_steps += 1;
            step_index += 1;
            obs = out.obs;
            if out.terminal || out.time_limit {
                obs = env.reset(&mut act_rng);
                episode += 1;
                step_index = 0;
            }
            if trainer.store.len() < online.min_replay {
                continue;
            }
            let paced = trainer.actor_steps - online.min_replay as u64;
            while trainer.learner_steps < paced_batches(paced, online.spi, batch) {
                trainer.learn_batch(&mut ctx)?;
                let step = trainer.learner_steps;
                if step % online.eval_period == 0 || step % online.checkpoint_period == 0 {
                    let r = trainer.record(0, 0.0)?;
                    if step % online.checkpoint_period == 0 {
                        let path = dir.join(format!("teacher_step{step}.bin"));
                        trainer.agent.checkpoint(step, r).save(&path)?;
                        checkpoints.push(SavedCheckpoint {
                            learner_step: step,
                            eval_return: r,
                            path,
                        });
                    }
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        manifest.add("status", "failed");
        manifest.add("failed_stage", "online_training");
        manifest.add("error", e.to_string());
        manifest.write(&dir)?;
        return Err(e);
    }
    trainer
        .curve
        .write_csv(dir.join(format!("curve_online_{}.csv", online.seed)))?;

    let expert = checkpoints
        .iter()
        .fold(None::<&SavedCheckpoint>, |best, c| match best {
            Some(b) if b.eval_return >= c.eval_return => Some(b),
            _ => Some(c),
        })
        .cloned()
        .ok_or_else(|| Error::Config("online training ended before the first checkpoint".into()))?;
    std::fs::copy(&expert.path, dir.join("teacher_expert.bin"))?;
    manifest.add("expert_step", expert.learner_step);
    manifest.add("expert_return", format!("{:.3}", expert.eval_return));
    let mid_tier = checkpoints
        .iter()
        .find(|c| c.eval_return >= MID_TIER_FRACTION * expert.eval_return)
        .cloned();
    match &mid_tier {
        Some(c) => {
            std::fs::copy(&c.path, dir.join("teacher_midtier.bin"))?;
            manifest.add("midtier_step", c.learner_step);
            manifest.add("midtier_return", format!("{:.3}", c.eval_return));
        }
        None => {
            warn!("no checkpoint reached {MID_TIER_FRACTION} of the expert return");
            manifest.add("midtier_step", "unavailable");
        }
    }
    manifest.add("status", "ok");
    manifest.write(&dir)?;
    Ok(TeacherTrainReport {
        curve: trainer.curve,
        checkpoints,
        expert,
        mid_tier,
    })
}
