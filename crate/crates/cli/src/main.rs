use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use growbatch::driver::{self, evaluate_seeded, stream_rng, ExperimentConfig, Stream};
use growbatch::teachers::{generate_demos, DemoDataset};
use growbatch::{Checkpoint, ObjectiveMode};
use log::info;

#[derive(Parser)]
#[command(name = "growbatch", version, about = "Teacher-guided growing-batch actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policy objective, overriding the config.
    #[arg(long)]
    mode: Option<ObjectiveMode>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(m) = self.mode {
            cfg.objective.mode = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate teacher demonstrations into `<out>/demos.bin`.
    Demos(Common),
    /// Train an online agent and save expert and mid-tier teacher snapshots.
    TeacherTrain(Common),
    /// Behavior cloning and critic policy evaluation into `<out>/ckpt_pretrain.bin`.
    Pretrain(Common),
    /// Full growing-batch experiment.
    Run(Common),
    /// Evaluate a checkpoint without exploration noise.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Demos(c) => {
            let cfg = c.resolve()?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let teacher = driver::load_teacher(&cfg)?;
            let demos = generate_demos(&teacher, &cfg.env_spec(), cfg.demo_episodes, &mut stream_rng(cfg.seed, Stream::Demos))?;
            let path = cfg.out_dir.join("demos.bin");
            demos.save(&path)?;
            println!("{} transitions from {} episodes -> {}", demos.store.len(), demos.episodes, path.display());
        }
        Command::TeacherTrain(c) => {
            let cfg = c.resolve()?;
            let report = driver::train_online_teacher(&cfg)?;
            println!(
                "expert: step {} return {:.3}",
                report.expert.learner_step, report.expert.eval_return
            );
            match &report.mid_tier {
                Some(m) => println!("mid-tier: step {} return {:.3}", m.learner_step, m.eval_return),
                None => println!("mid-tier: unavailable"),
            }
        }
        Command::Pretrain(c) => {
            let cfg = c.resolve()?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let demos = match &cfg.demos {
                Some(p) => DemoDataset::load(p, "external")?,
                None => {
                    let teacher = driver::load_teacher(&cfg)?;
                    generate_demos(&teacher, &cfg.env_spec(), cfg.demo_episodes, &mut stream_rng(cfg.seed, Stream::Demos))?
                }
            };
            let (agent, bc, losses) = driver::pretrain(&cfg, &demos.store)?;
            let (ret, _) = evaluate_seeded(&agent.policy, &cfg)?;
            agent.checkpoint(0, ret).save(cfg.out_dir.join("ckpt_pretrain.bin"))?;
            println!(
                "bc loss {:.6} -> {:.6}, critic loss {:.4} -> {:.4}, return {ret:.3}",
                bc.initial_loss,
                bc.epoch_losses.last().copied().unwrap_or(bc.initial_loss),
                losses.first().copied().unwrap_or(f64::NAN),
                losses.last().copied().unwrap_or(f64::NAN),
            );
        }
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let report = driver::run_experiment(&cfg)?;
            info!("curve written to {}", report.csv_path.display());
            println!("pretrained return {:.3}", report.pretrain_return);
            for log in &report.cycles {
                println!("cycle {} final return {:.3}", log.cycle, log.final_return);
            }
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(e) = episodes {
                if e == 0 {
                    bail!("--episodes must be at least 1");
                }
                cfg.eval_episodes = e;
            }
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let (mean, std) = evaluate_seeded(&ck.policy, &cfg)?;
            println!("return {mean:.3} ± {std:.3} over {} episodes", cfg.eval_episodes);
        }
    }
    Ok(())
}
