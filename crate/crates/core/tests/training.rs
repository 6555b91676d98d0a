mod common;

use common::{config, reduction_trajectories};
use std::path::Path;

use sadq::diagnostics::MetricsWriter;
use sadq::trainer::{CheckpointError, CHECKPOINT_FILE, METRICS_FILE};
use sadq::{train_run, TrainError, Trainer};

fn assert_same_file(x: &Path, y: &Path) {
    let (a, b) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    if let Some(i) = a.iter().zip(&b).position(|(p, q)| p != q) {
        panic!("{} and {} differ at byte {i}", x.display(), y.display());
    }
    assert_eq!(a.len(), b.len(), "{} and {} differ in length", x.display(), y.display());
}

fn short_cartpole() -> sadq::TrainConfig {
    config(
        "cartpole",
        &["schedule.total_steps=6000", "schedule.eval_interval=1000", "schedule.eval_episodes=3"],
    )
}

#[test]
fn sadq_with_full_alpha_and_no_bonus_tracks_dueling_dqn() {
    let steps = reduction_trajectories(0, 1000).unwrap();
    assert!(steps >= 1000);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("bitflip", &["schedule.total_steps=3000", "schedule.eval_interval=1000"]);
    let a = train_run(&cfg, 5, &dir.path().join("a"), None).unwrap();
    let b = train_run(&cfg, 5, &dir.path().join("b"), None).unwrap();
    for (x, y) in [(&a.metrics, &b.metrics), (&a.checkpoint, &b.checkpoint), (&a.q_losses, &b.q_losses)] {
        assert_same_file(x, y);
    }
    let c = train_run(&cfg, 6, &dir.path().join("c"), None).unwrap();
    assert!(std::fs::read(&a.q_losses).unwrap() != std::fs::read(&c.q_losses).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_everything() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut t = Trainer::new(short_cartpole(), 1).unwrap();
    for _ in 0..30 {
        t.run_cycle().unwrap();
    }
    t.save(&path).unwrap();
    let u = Trainer::load(&path).unwrap();
    assert_eq!(u.config, t.config);
    assert_eq!(u.seed, t.seed);
    assert_eq!(u.counters, t.counters);
    assert_eq!(u.learner.online.params(), t.learner.online.params());
    assert_eq!(u.learner.target.params(), t.learner.target.params());
    assert_eq!(u.buffer.len(), t.buffer.len());
    for i in 0..t.buffer.len() {
        assert_eq!(u.buffer.get(i), t.buffer.get(i));
    }
    let again = dir.path().join("ck2.bin");
    u.save(&again).unwrap();
    assert_same_file(&path, &again);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_cartpole();
    let straight = train_run(&cfg, 2, &dir.path().join("straight"), None).unwrap();

    // Interrupted run: checkpoint at 5000, keep going a little so the metrics
    // file holds rows past the checkpoint, then stop without finishing.
    let out = dir.path().join("resumed");
    std::fs::create_dir_all(&out).unwrap();
    let metrics = out.join(METRICS_FILE);
    let ckpt = out.join(CHECKPOINT_FILE);
    MetricsWriter::create(&metrics).unwrap();
    let mut t = Trainer::new(cfg.clone(), 2).unwrap();
    t.attach_writer(MetricsWriter::append(&metrics).unwrap());
    while t.counters.env_steps < 5000 {
        t.run_cycle().unwrap();
    }
    t.save(&ckpt).unwrap();
    while t.counters.env_steps < 5600 {
        t.run_cycle().unwrap();
    }
    drop(t);
    let resumed = train_run(&cfg, 2, &out, Some(&ckpt)).unwrap();

    for (x, y) in [
        (&straight.metrics, &resumed.metrics),
        (&straight.checkpoint, &resumed.checkpoint),
    ] {
        assert_same_file(x, y);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut t = Trainer::new(short_cartpole(), 3).unwrap();
    t.run_cycle().unwrap();
    t.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        Trainer::load(&cut),
        Err(TrainError::Checkpoint(CheckpointError::CorruptChecksum))
    ));

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    let bad = dir.path().join("flip.bin");
    std::fs::write(&bad, &flipped).unwrap();
    assert!(matches!(
        Trainer::load(&bad),
        Err(TrainError::Checkpoint(CheckpointError::CorruptChecksum))
    ));
}
