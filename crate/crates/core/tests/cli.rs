//! End-to-end checks of the command-line surface: subcommands, artifact
//! files, and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_arsq")
}

fn write_quick_config(path: &Path) {
    std::fs::write(
        path,
        "backbone_widths = 16\nbatch_size = 8\ntotal_env_steps = 150\neval_every = 50\neval_episodes = 2\n",
    )
    .unwrap();
}

#[test]
fn gen_train_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args(["gen-demos", "--env", "point-mass", "--kind", "medium", "--episodes", "4", "--seed", "5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("demos.jsonl").exists());

    let cfg = dir.path().join("cfg.txt");
    write_quick_config(&cfg);
    let run_dir = dir.path().join("run");
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "2", "--offline-data"])
        .arg(dir.path().join("demos.jsonl"))
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "step,episode_return_mean,episode_return_std,success_rate,rl_loss,bc_loss,v_mean,policy_entropy_mean,wall_ms"
    ));
    // cadence rows at 50, 100, 150
    assert_eq!(metrics.lines().count(), 4);
    assert!(run_dir.join("checkpoint.bin").exists());
    assert!(run_dir.join("config_resolved.txt").exists());

    // evaluate the stored checkpoint through the resolved config
    let out = Command::new(bin())
        .args(["eval", "--config"])
        .arg(run_dir.join("config_resolved.txt"))
        .arg("--checkpoint")
        .arg(run_dir.join("checkpoint.bin"))
        .args(["--episodes", "2", "--seed", "9"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("eval over 2 episodes"));
}

#[test]
fn validation_failures_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "alpha = -3\n").unwrap();
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // unknown env name
    let out = Command::new(bin())
        .args(["train", "--env", "walker-marathon", "--out"])
        .arg(dir.path().join("run2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // eval with a checkpoint/env mismatch
    let out = Command::new(bin())
        .args(["gen-demos", "--episodes", "0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn toy_case_study_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args(["case-study-toy", "--seed", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["toy_q_arsq.csv", "toy_q_independent.csv", "toy_verdict.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let verdict = std::fs::read_to_string(dir.path().join("toy_verdict.csv")).unwrap();
    assert!(verdict.starts_with("method,cell_d1,cell_d2,optimal_d1,optimal_d2,is_optimal"));
}

#[test]
fn eval_rejects_mismatched_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    write_quick_config(&cfg);
    let out = Command::new(bin())
        .args(["gen-demos", "--episodes", "3", "--seed", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let run_dir = dir.path().join("run");
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--offline-data"])
        .arg(dir.path().join("demos.jsonl"))
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    // one-step env has a different observation width than point-mass
    let out = Command::new(bin())
        .args(["eval", "--config"])
        .arg(run_dir.join("config_resolved.txt"))
        .arg("--checkpoint")
        .arg(run_dir.join("checkpoint.bin"))
        .args(["--env", "one-step-toy", "--episodes", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
