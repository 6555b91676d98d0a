use std::path::Path;
use std::process::{Command, Output};

fn sadq(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sadq"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sadq(&[], dir.path())), 1);
    assert_eq!(code(&sadq(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&sadq(&["train"], dir.path())), 1);
    assert_eq!(code(&sadq(&["train", "--preset", "cartpole", "--set", "q.bogus=1"], dir.path())), 1);
    assert_eq!(code(&sadq(&["train", "--preset", "pong"], dir.path())), 1);
    assert_eq!(code(&sadq(&["--help"], dir.path())), 0);
}

#[test]
fn train_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("cartpole.toml");
    let out = sadq(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "schedule.total_steps=2000",
            "--set",
            "schedule.eval_episodes=3",
            "--seed",
            "3",
            "--seed",
            "4",
            "--out",
            "runs",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for s in ["seed3", "seed4"] {
        let text = std::fs::read_to_string(dir.path().join("runs").join(s).join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    let ckpt = dir.path().join("runs/seed3/checkpoint.bin");
    let out = sadq(&["eval", "--checkpoint", ckpt.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("over 3 episodes"));

    let out = sadq(
        &[
            "plot",
            "runs/seed3/metrics.csv",
            "runs/seed4/metrics.csv",
            "--key",
            "eval_return_mean",
            "--out",
            "curve.svg",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let svg = std::fs::read_to_string(dir.path().join("curve.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let out = sadq(&["plot", "runs/seed3/metrics.csv", "--key", "nope"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn missing_checkpoint_is_a_run_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sadq(&["eval", "--checkpoint", "absent.bin"], dir.path())), 2);
}

#[test]
fn single_cell_sweep_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--preset", "bitflip", "--set", "schedule.total_steps=1000", "--set", "schedule.eval_interval=500"];
    let mut sweep_args = vec!["sweep"];
    sweep_args.extend(common);
    sweep_args.extend(["--seed", "2", "--out", "sw"]);
    assert_eq!(code(&sadq(&sweep_args, dir.path())), 0);
    let mut train_args = vec!["train"];
    train_args.extend(common);
    train_args.extend(["--seed", "2", "--out", "tr"]);
    assert_eq!(code(&sadq(&train_args, dir.path())), 0);

    let swept = std::fs::read(dir.path().join("sw/alpha0.6_beta0.5_k1/seed2/metrics.csv")).unwrap();
    let trained = std::fs::read(dir.path().join("tr/seed2/metrics.csv")).unwrap();
    assert_eq!(swept, trained);
    let summary = std::fs::read_to_string(dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn verify_theory_reports_both_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = sadq(
        &["verify-theory", "--seed", "0", "--alpha", "0.5", "--samples", "1000", "--report", "r.json"],
        dir.path(),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("variance: PASS"), "{stdout}");
    let bias_pass = stdout.contains("bias: PASS");
    assert_eq!(code(&out), if bias_pass { 0 } else { 3 });
    assert!(std::fs::read_to_string(dir.path().join("r.json")).unwrap().contains("variance_pass_rate"));

    let out = sadq(&["verify-theory", "--samples", "10"], dir.path());
    assert_eq!(code(&out), 1);
}
