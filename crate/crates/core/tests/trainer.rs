mod common;

use std::fs;

use common::tiny_config;
use secure_jscc::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use secure_jscc::error::Error;
use secure_jscc::objective::LossWeights;
use secure_jscc::tensor::Tensor;
use secure_jscc::trainer::{
    adversary_phase, epoch_orders, legit_phase, resume, train, LegitObjective, TrainData, TrainState,
};

fn tiny() -> (secure_jscc::config::ExperimentConfig, TrainData) {
    let c = tiny_config();
    let data = TrainData::load(&c).unwrap();
    (c, data)
}

#[test]
fn every_phase_leaves_the_frozen_party_untouched() {
    let (c, data) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let report = train::<f64>(c.clone(), &data, dir.path()).unwrap();
    assert_eq!(report.audits.len(), 2 + 2 * c.schedule.n_episodes);
    for a in &report.audits {
        assert!(a.frozen_unchanged(), "{}", a.phase);
        assert!(a.disjoint(), "{}", a.phase);
        assert!(!a.updated.is_empty() && !a.frozen.is_empty());
    }
}

#[test]
fn zero_leakage_weight_reduces_to_the_warmup_objective() {
    let (c, data) = tiny();
    let base = TrainState::<f64>::new(c.clone()).unwrap();
    let orders = epoch_orders(c.seed, 0, 2, data.train.len());
    let mut warm = base.clone();
    let a = legit_phase(
        &mut warm,
        &data,
        &orders,
        &LegitObjective::Warmup { alpha: c.loss.alpha },
        "warm-up",
    )
    .unwrap();
    let mut mm = base.clone();
    let objective = LegitObjective::Minimax {
        weights: LossWeights::new(0.0, c.loss.alpha),
        alc: true,
    };
    let b = legit_phase(&mut mm, &data, &orders, &objective, "minimax").unwrap();
    assert_eq!(a.batch_losses, b.batch_losses);
    assert_eq!(warm.codec, mm.codec);
    // the non-ALC variant reduces the same way
    let mut tl = base;
    let objective = LegitObjective::Minimax {
        weights: LossWeights::new(0.0, c.loss.alpha),
        alc: false,
    };
    assert_eq!(
        legit_phase(&mut tl, &data, &orders, &objective, "minimax")
            .unwrap()
            .batch_losses,
        a.batch_losses
    );
}

#[test]
fn adversaries_train_independently_of_visit_order() {
    let (c, data) = tiny();
    let base = TrainState::<f64>::new(c.clone()).unwrap();
    let orders = epoch_orders(c.seed, 0, 1, data.train.len());
    let mut fwd = base.clone();
    let mut rev = base;
    adversary_phase(&mut fwd, &data, &orders, &[0, 1], "fwd").unwrap();
    adversary_phase(&mut rev, &data, &orders, &[1, 0], "rev").unwrap();
    assert_eq!(fwd.adversaries, rev.adversaries);
    assert_eq!(fwd.adversary_opts, rev.adversary_opts);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (c, data) = tiny();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r1 = train::<f32>(c.clone(), &data, d1.path()).unwrap();
    let r2 = train::<f32>(c.clone(), &data, d2.path()).unwrap();
    let m1 = fs::read(d1.path().join("metrics.csv")).unwrap();
    assert_eq!(m1, fs::read(d2.path().join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(&r1.final_checkpoint).unwrap(),
        fs::read(&r2.final_checkpoint).unwrap()
    );
    // metrics at warm-up end and every eval_every episodes, test and train rows
    assert_eq!(
        r1.metrics.len(),
        2 * (1 + c.schedule.n_episodes / c.schedule.eval_every)
    );
    let mut other = c;
    other.seed += 1;
    let d3 = tempfile::tempdir().unwrap();
    train::<f32>(other, &data, d3.path()).unwrap();
    assert_ne!(m1, fs::read(d3.path().join("metrics.csv")).unwrap());
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let (c, data) = tiny();
    let full = tempfile::tempdir().unwrap();
    let report = train::<f64>(c.clone(), &data, full.path()).unwrap();
    let mid = full.path().join("checkpoints").join("episode-0002.ckpt");
    assert!(report.checkpoints.contains(&mid));
    let state = load_checkpoint::<f64>(&mid).unwrap();
    assert_eq!(state.counters.episodes, 2);
    let part = tempfile::tempdir().unwrap();
    let resumed = resume(state, &data, part.path()).unwrap();
    assert_eq!(
        fs::read(&report.final_checkpoint).unwrap(),
        fs::read(&resumed.final_checkpoint).unwrap()
    );
    let tail: Vec<_> = report.metrics.iter().filter(|r| r.episode > 2).cloned().collect();
    assert_eq!(tail, resumed.metrics);
}

#[test]
fn checkpoints_round_trip_byte_identically() {
    let (c, data) = tiny();
    let mut state = TrainState::<f32>::new(c.clone()).unwrap();
    // a fresh optimizer has no moment buffers yet
    let fresh = to_bytes(&state).unwrap();
    assert_eq!(to_bytes(&from_bytes::<f32>(&fresh).unwrap()).unwrap(), fresh);
    let orders = epoch_orders(c.seed, 0, 1, data.train.len());
    legit_phase(&mut state, &data, &orders, &LegitObjective::Warmup { alpha: 0.1 }, "w").unwrap();
    adversary_phase(&mut state, &data, &orders, &[0, 1], "a").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let back = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back, state);
    assert_eq!(to_bytes(&back).unwrap(), bytes);
    assert!(matches!(from_bytes::<f64>(&bytes), Err(Error::Checkpoint(_))));
    let mut corrupt = bytes.clone();
    corrupt.truncate(bytes.len() - 3);
    assert!(from_bytes::<f32>(&corrupt).is_err());
}

#[test]
fn non_finite_losses_abort_with_a_diagnostic() {
    let (c, data) = tiny();
    let mut state = TrainState::<f64>::new(c.clone()).unwrap();
    let names = state.codec.encoder.names().to_vec();
    let mut named: Vec<(String, Tensor<f64>)> = names
        .into_iter()
        .zip(state.codec.encoder.tensors().iter().cloned())
        .collect();
    named[0].1.data_mut()[0] = f64::NAN;
    state.codec.encoder.load(named).unwrap();
    let orders = epoch_orders(c.seed, 0, 1, data.train.len());
    let err = legit_phase(
        &mut state,
        &data,
        &orders,
        &LegitObjective::Warmup { alpha: 0.1 },
        "probe",
    )
    .unwrap_err();
    assert!(matches!(err, Error::Numerical(_)));
    assert!(err.to_string().contains("probe"), "{err}");
}

#[test]
fn run_directory_holds_the_expected_artifacts() {
    let (c, data) = tiny();
    let dir = tempfile::tempdir().unwrap();
    train::<f32>(c.clone(), &data, dir.path()).unwrap();
    let snapshot = fs::read_to_string(dir.path().join("config.json")).unwrap();
    assert_eq!(secure_jscc::config::ExperimentConfig::from_json(&snapshot).unwrap(), c);
    assert!(fs::read_to_string(dir.path().join("run.log"))
        .unwrap()
        .contains("episode 3"));
    for name in ["episode-0000.ckpt", "episode-0002.ckpt", "episode-0004.ckpt"] {
        assert!(dir.path().join("checkpoints").join(name).exists(), "{name}");
    }
    assert!(dir.path().join("final.ckpt").exists());
}
