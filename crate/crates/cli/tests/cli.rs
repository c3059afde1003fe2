use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
episode_length = 40
cycles = 2
total_actor_steps = 200
batch_size = 16
spi = 8
hidden_size = 8
hidden_layers = 1
demo_episodes = 2
pretrain_epochs = 2
critic_pretrain_steps = 20
eval_period = 25
eval_episodes = 2
teacher_train_steps = 400
min_replay = 100
checkpoint_period = 50
";

fn growbatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_growbatch"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn run_writes_curve_checkpoints_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("run");
    let out = out_dir.to_str().unwrap();
    let stdout = ok(&growbatch(&["run", "--config", &cfg, "--seed", "3", "--out", out, "--mode", "bc_decay"]));
    assert!(stdout.contains("cycle 2 final return"));
    for name in ["curve_bc_decay_3.csv", "ckpt_cycle0.bin", "ckpt_cycle1.bin", "ckpt_cycle2.bin", "manifest.txt"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("mode = bc_decay"));
    assert!(manifest.contains("status = ok"));
    let csv = std::fs::read_to_string(out_dir.join("curve_bc_decay_3.csv")).unwrap();
    assert!(csv.starts_with("global_learner_step,cycle,eval_return_mean,eval_return_std,alpha\n"));

    let ckpt = out_dir.join("ckpt_cycle2.bin");
    let stdout = ok(&growbatch(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3"]));
    assert!(stdout.starts_with("return "), "{stdout}");
}

#[test]
fn demos_pretrain_and_teacher_train_produce_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    ok(&growbatch(&["demos", "--config", &cfg, "--out", o]));
    assert!(out.join("demos.bin").exists());
    ok(&growbatch(&["pretrain", "--config", &cfg, "--out", o]));
    assert!(out.join("ckpt_pretrain.bin").exists());
    let stdout = ok(&growbatch(&["teacher-train", "--config", &cfg, "--out", o]));
    assert!(stdout.contains("expert: step"));
    assert!(out.join("teacher_expert.bin").exists());
    assert!(out.join("curve_online_0.csv").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "learning_rate = 0.1\n");
    let out = growbatch(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn unknown_mode_is_rejected() {
    let out = growbatch(&["run", "--mode", "nope"]);
    assert!(!out.status.success());
}

#[test]
fn gradient_mode_without_teacher_critic_fails_in_setup() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mode = teacher_gradient_decay\n");
    let out = growbatch(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("failed_stage = setup"), "{manifest}");
}
