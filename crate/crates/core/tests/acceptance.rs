//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. The process exits non-zero if any
//! criterion fails.
//!
//! Criteria 6 to 10 share the desk-preset runs trained below.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secure_jscc::adversary::AdversaryBelief;
use secure_jscc::channel::{sample_fading, ChannelKind, ChannelSpec};
use secure_jscc::checkpoint::{load_checkpoint, to_bytes};
use secure_jscc::codec::{Codec, CodecConfig, ImageBatch};
use secure_jscc::config::ExperimentConfig;
use secure_jscc::data::Split;
use secure_jscc::metrics::{evaluate, EvalSetup, MetricsRecord, Scenario};
use secure_jscc::objective::{
    self, alc_leakage, cross_entropy, distortion_op, legit_loss_op, LeakageInput, LossWeights,
};
use secure_jscc::tensor::gradcheck::check_gradients;
use secure_jscc::tensor::Tensor;
use secure_jscc::trainer::{
    epoch_orders, legit_phase, resume, train, LegitObjective, TrainData, TrainReport, TrainState,
};

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

/// Writes straight to stderr so the lines survive output capture.
fn report(id: &str, name: &str, o: &Outcome, secs: f64) {
    let mut err = std::io::stderr();
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(err, "criterion {id:>2} [{verdict}] {name} ({secs:.1} s): {}", o.detail);
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = CodecConfig::default();
    let codec = Codec::<f64>::new(cfg.clone(), &mut rng).unwrap();
    let target = codec.k() as f64 * cfg.power;
    let mut worst = 0.0f64;
    let n = cfg.image.numel();
    for _ in 0..10 {
        let pixels: Vec<f64> = (0..100 * n).map(|_| rng.random::<f64>()).collect();
        let shape = [100, cfg.image.height, cfg.image.width, cfg.image.channels];
        let u = ImageBatch::new(Tensor::from_vec(&shape, pixels).unwrap()).unwrap();
        let x = codec.encode(&u).unwrap();
        for e in x.antenna_energies() {
            worst = worst.max((e - target).abs() / target);
        }
    }
    outcome(
        worst <= 1e-5,
        format!(
            "1000 images x {} antennas, worst relative deviation from kP = {worst:.2e}",
            cfg.antennas
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let awgn = ChannelSpec::awgn(10.0);
    let r = awgn.sample_realization::<f64, _>(1, 1, 1_000_000, &mut rng).unwrap();
    let noise_var = r.noise.iter().map(|v| v * v).sum::<f64>() / 1e6;
    let ok_noise = (noise_var - 0.1).abs() <= 0.02 * 0.1;
    let n = 1_000_000;
    let std = 0.8;
    let d2 = std * std;
    let power = |spec: &ChannelSpec, rng: &mut ChaCha8Rng| -> (f64, f64) {
        let h = sample_fading(spec, n, rng).unwrap();
        let p: Vec<f64> = h.iter().map(|c| c.norm_sqr()).collect();
        let mean = p.iter().sum::<f64>() / n as f64;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (mean, var)
    };
    let (ray_mean, _) = power(&ChannelSpec::rayleigh(10.0, std), &mut rng);
    let (nak_mean, nak_var) = power(&ChannelSpec::nakagami(10.0, std, 3.0), &mut rng);
    let ok_ray = (ray_mean - d2).abs() <= 0.005 * d2;
    let ok_nak = (nak_mean - d2).abs() <= 0.005 * d2;
    let want_var = d2 * d2 / 3.0;
    let ok_var = (nak_var - want_var).abs() <= 0.02 * want_var;
    outcome(
        ok_noise && ok_ray && ok_nak && ok_var,
        format!(
            "noise var {noise_var:.5} (0.1), Rayleigh E|h|^2 {ray_mean:.5} ({d2}), Nakagami E|h|^2 {nak_mean:.5}, Var {nak_var:.5} ({want_var:.5})"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [4, 32, 32, 3];
    let rand_batch = |rng: &mut ChaCha8Rng| {
        let px: Vec<f64> = (0..shape.iter().product()).map(|_| rng.random::<f64>()).collect();
        ImageBatch::new(Tensor::from_vec(&shape, px).unwrap()).unwrap()
    };
    let (a, b) = (rand_batch(&mut rng), rand_batch(&mut rng));
    let self_sim = objective::ssim(&a, &a).unwrap();
    let identity = self_sim.iter().all(|&s| s == 1.0);
    let (ab, ba) = (objective::ssim(&a, &b).unwrap(), objective::ssim(&b, &a).unwrap());
    let symmetric = ab == ba;
    let onehot: Vec<f64> = (0..10).map(|i| if i == 3 { 1.0 } else { 0.0 }).collect();
    let ce = cross_entropy(&onehot, &AdversaryBelief::<f64>::uniform(10)).unwrap();
    let ok_ce = (ce - 10f64.ln()).abs() <= 1e-9;
    let weights = LossWeights {
        w: 5.0,
        w_per_eve: Some(vec![1.0, 5.0, 20.0]),
        alpha: 0.1,
    };
    let floor = (1.0 + 5.0 + 20.0) / 3.0 * 4f64.ln();
    let uniform = vec![vec![AdversaryBelief::<f64>::uniform(4); 2]; 3];
    let at_uniform = alc_leakage(&uniform, 2, &weights).unwrap();
    let ok_floor = (at_uniform - floor).abs() <= 1e-12;
    let mut above = true;
    for _ in 0..200 {
        let mut beliefs = uniform.clone();
        let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        let q = AdversaryBelief::new(raw.iter().map(|v| v / s).collect()).unwrap();
        let (i, j) = (rng.random_range(0..3), rng.random_range(0..2));
        beliefs[i][j] = q;
        above &= alc_leakage(&beliefs, 2, &weights).unwrap() > floor;
    }
    outcome(
        identity && symmetric && ok_ce && ok_floor && above,
        format!(
            "SSIM(I,I)=1 {identity}, symmetric {symmetric}, CE {ce:.12} vs ln 10, ALC floor {at_uniform:.12} vs {floor:.12}, strictly above at 200 non-uniform beliefs {above}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, floor) = (1e-6, 1e-6);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let img = |rng: &mut ChaCha8Rng| {
            let d: Vec<f64> = (0..2 * 8 * 8 * 3).map(|_| rng.random_range(0.05..0.95)).collect();
            Tensor::from_vec(&[2, 8, 8, 3], d).unwrap()
        };
        let (u, v) = (img(&mut rng), img(&mut rng));
        let d = check_gradients(
            &[u, v],
            |g, x| {
                let d = distortion_op(g, x[0], x[1], 0.1).unwrap();
                g.mean(d)
            },
            h,
            floor,
        );
        worst[0] = worst[0].max(d.max_rel_error);
        let logits: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logits = Tensor::from_vec(&[3, 4], logits).unwrap();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
        for (slot, alc) in [(1, true), (2, false)] {
            let labels = labels.clone();
            let r = check_gradients(
                std::slice::from_ref(&logits),
                move |g, x| {
                    let q = g.softmax(x[0]).unwrap();
                    // zero images isolate the leakage term
                    let z = g.constant(Tensor::zeros(&[3, 4, 4, 1]));
                    let eve = LeakageInput {
                        probs: q,
                        labels: labels.clone(),
                        weight: 5.0,
                    };
                    legit_loss_op(g, z, z, &[eve], 0.1, alc).unwrap()
                },
                h,
                floor,
            );
            worst[slot] = worst[slot].max(r.max_rel_error);
        }
    }
    outcome(
        worst.iter().all(|&e| e < 1e-4),
        format!(
            "max relative error over 100 points: distortion {:.2e}, ALC CE {:.2e}, true-label CE {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn desk(seed: u64, w: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.seed = seed;
    c.loss.w = w;
    c
}

fn criterion_5(data: &TrainData) -> Outcome {
    let c = desk(0, 0.0);
    let state = TrainState::<f32>::new(c.clone()).unwrap();
    let orders = epoch_orders(c.seed, 1, c.schedule.n_legit_epochs, data.train.len());
    let mut warm = state.clone();
    let a = legit_phase(
        &mut warm,
        data,
        &orders,
        &LegitObjective::Warmup { alpha: c.loss.alpha },
        "warm-up",
    )
    .unwrap();
    let mut mm = state;
    let objective = LegitObjective::Minimax {
        weights: c.loss.weights(),
        alc: c.loss.alc,
    };
    let b = legit_phase(&mut mm, data, &orders, &objective, "episode").unwrap();
    let same = a.batch_losses == b.batch_losses && warm.codec == mm.codec;
    outcome(
        same,
        format!(
            "{} batch losses compared bit for bit over {} epochs, parameters identical {}",
            a.batch_losses.len(),
            orders.len(),
            warm.codec == mm.codec
        ),
    )
}

fn final_test(r: &TrainReport) -> &MetricsRecord {
    r.metrics
        .iter()
        .rev()
        .find(|m| m.split == Split::Test)
        .expect("test row")
}

fn row(r: &TrainReport, episode: usize, split: Split) -> &MetricsRecord {
    r.metrics
        .iter()
        .find(|m| m.episode == episode && m.split == split)
        .expect("metrics row")
}

/// Continues a warmed-up checkpoint with a different leakage weight. The
/// warm-up never reads `w`, so this equals a fresh run with that weight.
fn continue_with_w(ckpt: &Path, w: f64, data: &TrainData, dir: &Path) -> TrainReport {
    let mut state = load_checkpoint::<f32>(ckpt).unwrap();
    assert_eq!(state.counters.episodes, 0);
    state.config.loss.w = w;
    resume(state, data, dir).unwrap()
}

fn main() {
    let t = Instant::now();
    let mut results: Vec<(String, bool)> = Vec::new();
    let mut record = |id: &str, name: &str, o: Outcome, start: Instant| {
        report(id, name, &o, start.elapsed().as_secs_f64());
        results.push((id.to_string(), o.pass));
    };

    let s = Instant::now();
    record("1", "power constraint", criterion_1(), s);
    let s = Instant::now();
    record("2", "channel statistics", criterion_2(), s);
    let s = Instant::now();
    record("3", "SSIM/CE identities", criterion_3(), s);
    let s = Instant::now();
    record("4", "gradient checks", criterion_4(), s);

    let data = TrainData::load(&desk(0, 5.0)).unwrap();
    let s = Instant::now();
    record("5", "reduction to plain JSCC at w = 0", criterion_5(&data), s);

    let root = tempfile::tempdir().unwrap();
    let dir = |name: &str| root.path().join(name);
    let s = Instant::now();
    let main_run = train::<f32>(desk(0, 5.0), &data, &dir("w5-seed0")).unwrap();
    let repeat_run = train::<f32>(desk(0, 5.0), &data, &dir("w5-seed0-again")).unwrap();
    let mut sweep: Vec<(f64, TrainReport)> = Vec::new();
    for seed in 0..3u64 {
        let warm_ckpt = if seed == 0 {
            dir("w5-seed0").join("checkpoints").join("episode-0000.ckpt")
        } else {
            let r = train::<f32>(desk(seed, 0.0), &data, &dir(&format!("w0-seed{seed}"))).unwrap();
            let ckpt = r.checkpoints[0].clone();
            sweep.push((0.0, r));
            ckpt
        };
        if seed == 0 {
            sweep.push((0.0, continue_with_w(&warm_ckpt, 0.0, &data, &dir("w0-seed0"))));
        }
        sweep.push((
            100.0,
            continue_with_w(&warm_ckpt, 100.0, &data, &dir(&format!("w100-seed{seed}"))),
        ));
    }
    let training_secs = s.elapsed().as_secs_f64();

    // 6: freezing audits of every phase of every run
    let all_runs = std::iter::once(&main_run)
        .chain(std::iter::once(&repeat_run))
        .chain(sweep.iter().map(|x| &x.1));
    let (mut phases, mut frozen_ok, mut disjoint_ok) = (0, true, true);
    for r in all_runs {
        for a in &r.audits {
            phases += 1;
            frozen_ok &= a.frozen_unchanged();
            disjoint_ok &= a.disjoint();
        }
    }
    let o = outcome(
        frozen_ok && disjoint_ok && phases > 0,
        format!("{phases} audited phases, frozen hashes unchanged {frozen_ok}, update sets disjoint {disjoint_ok}"),
    );
    record("6", "freezing and isolation", o, Instant::now());

    // 7: trends
    let s = Instant::now();
    let warm_train = row(&main_run, 0, Split::Train);
    let warm_test = row(&main_run, 0, Split::Test);
    let end = final_test(&main_run);
    let a_ok = warm_train.ssim_bob >= 0.5 && warm_train.mean_accuracy() >= 0.2;
    let drop = warm_test.mean_accuracy() - end.mean_accuracy();
    let b_ok = drop >= 0.05 && end.ssim_bob >= 0.8 * warm_test.ssim_bob;
    let avg = |w: f64, f: &dyn Fn(&MetricsRecord) -> f64| {
        let v: Vec<f64> = sweep.iter().filter(|x| x.0 == w).map(|x| f(final_test(&x.1))).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (acc0, acc100) = (avg(0.0, &|m| m.mean_accuracy()), avg(100.0, &|m| m.mean_accuracy()));
    let (ssim0, ssim100) = (avg(0.0, &|m| m.ssim_bob), avg(100.0, &|m| m.ssim_bob));
    let c_ok = acc100 < acc0 && ssim100 < ssim0;
    let o = outcome(
        a_ok && b_ok && c_ok,
        format!(
            "(a) warm-up train SSIM {:.3}, accuracy {:.3} [{}]; (b) accuracy {:.3} -> {:.3} (drop {drop:.3}), SSIM {:.3} -> {:.3} (ratio {:.3}) [{}]; (c) over 3 seeds w=0 accuracy {acc0:.3} SSIM {ssim0:.3}, w=100 accuracy {acc100:.3} SSIM {ssim100:.3} [{}]; training took {training_secs:.0} s",
            warm_train.ssim_bob,
            warm_train.mean_accuracy(),
            pf(a_ok),
            warm_test.mean_accuracy(),
            end.mean_accuracy(),
            warm_test.ssim_bob,
            end.ssim_bob,
            end.ssim_bob / warm_test.ssim_bob,
            pf(b_ok),
            pf(c_ok)
        ),
    );
    record("7", "desk-scale adversarial trend", o, s);

    // 8 and 9 evaluate the final w = 5 model
    let state = load_checkpoint::<f32>(&main_run.final_checkpoint).unwrap();
    let cfg = &state.config;
    let setup = |kind: ChannelKind, scenario: Scenario| EvalSetup {
        legit: cfg.legit_channel(20.0, kind),
        roster: cfg.roster_specs(cfg.channel.eval.snr_eve_db, kind).unwrap(),
        scenario,
        repeats: 10,
        seed: cfg.channel.eval.seed,
        batch_size: cfg.channel.eval.batch_size,
        split: Split::Test,
        episode: state.counters.episodes,
        checkpoint_id: state.checkpoint_id(),
        run_seed: cfg.seed,
        tag: String::new(),
    };
    let s = Instant::now();
    let col = evaluate(
        &state.codec,
        &state.adversaries,
        &data.test,
        &setup(ChannelKind::Rayleigh, Scenario::Colluding),
    )
    .unwrap();
    let max_ind = col.acc_per_eve.iter().copied().fold(f64::MIN, f64::max);
    let mean_ind = col.mean_accuracy();
    let pess = col.acc_pessimistic.unwrap_or(f64::NAN);
    let o = outcome(
        pess >= max_ind && max_ind >= mean_ind,
        format!(
            "pessimistic {pess:.4} >= max individual {max_ind:.4} >= mean individual {mean_ind:.4} (colluding {:.4})",
            col.acc_colluding.unwrap_or(f64::NAN)
        ),
    );
    record("8", "collusion ordering", o, s);

    let s = Instant::now();
    let by_kind: Vec<(ChannelKind, MetricsRecord)> = [ChannelKind::Rayleigh, ChannelKind::Awgn, ChannelKind::Nakagami]
        .into_iter()
        .map(|k| {
            (
                k,
                evaluate(
                    &state.codec,
                    &state.adversaries,
                    &data.test,
                    &setup(k, Scenario::NonColluding),
                )
                .unwrap(),
            )
        })
        .collect();
    let base = by_kind[0].1.ssim_bob;
    let finite = by_kind
        .iter()
        .all(|(_, m)| m.ssim_bob.is_finite() && m.mse_bob.is_finite() && m.ce_per_eve.iter().all(|c| c.is_finite()));
    let close = by_kind.iter().all(|(_, m)| (m.ssim_bob - base).abs() <= 0.15);
    let o = outcome(
        finite && close,
        by_kind
            .iter()
            .map(|(k, m)| format!("{} SSIM {:.3}", k.as_str(), m.ssim_bob))
            .collect::<Vec<_>>()
            .join(", "),
    );
    record("9", "cross-channel generalization", o, s);

    // 10: determinism and persistence
    let s = Instant::now();
    let csv = |r: &TrainReport| fs::read(r.run_dir.join("metrics.csv")).unwrap();
    let same_csv = csv(&main_run) == csv(&repeat_run);
    let bytes = fs::read(&main_run.final_checkpoint).unwrap();
    let round_trip = to_bytes(&load_checkpoint::<f32>(&main_run.final_checkpoint).unwrap()).unwrap() == bytes;
    let mid = main_run.run_dir.join("checkpoints").join("episode-0004.ckpt");
    let resumed = resume(load_checkpoint::<f32>(&mid).unwrap(), &data, &dir("resumed")).unwrap();
    let same_resume = fs::read(&resumed.final_checkpoint).unwrap() == bytes
        && main_run
            .metrics
            .iter()
            .filter(|m| m.episode > 4)
            .cloned()
            .collect::<Vec<_>>()
            == resumed.metrics;
    let o = outcome(
        same_csv && round_trip && same_resume,
        format!("identical metrics CSVs {same_csv}, byte-identical checkpoint round trip {round_trip}, resumed run matches {same_resume}"),
    );
    record("10", "determinism and persistence", o, s);

    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance: {}/{} criteria passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        t.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        let _ = writeln!(std::io::stderr(), "failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}
