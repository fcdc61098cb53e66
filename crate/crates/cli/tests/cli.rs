//! End-to-end runs of the `secure-jscc` binary on a tiny synthetic setup.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use secure_jscc::codec::{CodecConfig, ConvLayerSpec, ImageShape};
use secure_jscc::config::{DatasetKind, ExperimentConfig};

const TINY: ImageShape = ImageShape {
    height: 8,
    width: 8,
    channels: 3,
};

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.seed = 3;
    c.dataset.name = DatasetKind::Synthetic;
    c.dataset.synthetic.n_train = 32;
    c.dataset.synthetic.n_test = 16;
    c.dataset.synthetic.num_classes = 4;
    c.dataset.synthetic.image = TINY;
    c.codec = CodecConfig {
        image: TINY,
        antennas: 1,
        bandwidth_ratio: 1.0 / 3.0,
        power: 1.0,
        conv_stack: vec![ConvLayerSpec::new(4, 3, 2), ConvLayerSpec::new(8, 3, 1)],
    };
    c.roster.fading_stds = vec![0.64, 1.0];
    c.channel.eval.batch_size = 16;
    let s = &mut c.schedule;
    s.batch_size = 16;
    s.n_warmup = 1;
    s.n_episodes = 2;
    s.n_legit_epochs = 1;
    s.n_adv_epochs = 1;
    s.eval_every = 1;
    s.checkpoint_every = 1;
    s.eval_repeats = 1;
    s.train_eval_subset = 8;
    c
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_secure-jscc"));
    cmd.env_remove("SECURE_JSCC_DATA").env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

fn write_config(dir: &Path, name: &str, c: &ExperimentConfig) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, c.to_json()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One trained tiny run shared by the tests that only read it.
fn trained() -> &'static Path {
    static RUN: OnceLock<PathBuf> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = write_config(&dir, "tiny.json", &tiny_config());
        let out = dir.join("run");
        let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
        assert_ok(&o);
        out
    })
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[i].to_string()).collect()
}

#[test]
fn paper_preset_without_data_root_is_a_config_error() {
    let o = run(&["train", "--preset", "paper"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("dataset.root"), "{}", stderr(&o));
}

#[test]
fn invalid_config_values_name_their_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c.schedule.lr = -1.0;
    let p = write_config(dir.path(), "bad.json", &c);
    let o = run(&["train", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule.lr"), "{}", stderr(&o));

    fs::write(&p, r#"{"schedule": {"n_episodes": 2, "typo": 1}}"#).unwrap();
    let o = run(&["train", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("typo"), "{}", stderr(&o));

    let o = run(&["train", "--config", s(&dir.path().join("absent.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"), "{}", stderr(&o));
}

#[test]
fn train_writes_a_reparseable_run_directory() {
    let run_dir = trained();
    let text = fs::read_to_string(run_dir.join("config.json")).unwrap();
    let snapshot = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(snapshot, tiny_config());
    for f in ["metrics.csv", "run.log", "final.ckpt", "checkpoints/episode-0002.ckpt"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let episodes = column(&run_dir.join("metrics.csv"), "episode");
    assert!(
        episodes.contains(&"0".to_string()) && episodes.contains(&"2".to_string()),
        "{episodes:?}"
    );
}

#[test]
fn resume_rejects_config_and_seed_overrides() {
    let ckpt = trained().join("checkpoints/episode-0001.ckpt");
    let o = run(&["train", "--checkpoint", s(&ckpt), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("--checkpoint"));
}

#[test]
fn resume_from_checkpoint_reproduces_final_weights() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained().join("checkpoints/episode-0001.ckpt");
    let out = dir.path().join("resumed");
    assert_ok(&run(&["train", "--checkpoint", s(&ckpt), "--out", s(&out)]));
    let a = fs::read(trained().join("final.ckpt")).unwrap();
    let b = fs::read(out.join("final.ckpt")).unwrap();
    assert!(a == b, "resumed final checkpoint differs");
}

#[test]
fn eval_covers_the_grid_with_ten_default_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained().join("final.ckpt");
    let default = dir.path().join("default.csv");
    let ten = dir.path().join("ten.csv");
    let one = dir.path().join("one.csv");
    assert_ok(&run(&["eval", "--checkpoint", s(&ckpt), "--out", s(&default)]));
    assert_ok(&run(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&ten),
        "--repeats",
        "10",
    ]));
    assert_ok(&run(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&one),
        "--repeats",
        "1",
    ]));
    let rows = csv_rows(&default);
    assert_eq!(rows.len(), 33);
    let kinds = column(&default, "channel_kind");
    for k in ["awgn", "rayleigh", "nakagami"] {
        assert_eq!(kinds.iter().filter(|x| *x == k).count(), 11, "{k}");
    }
    assert_eq!(fs::read(&default).unwrap(), fs::read(&ten).unwrap());
    assert_ne!(fs::read(&default).unwrap(), fs::read(&one).unwrap());
}

#[test]
fn eval_rejects_a_mismatched_codec() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c.codec.conv_stack[0] = ConvLayerSpec::new(6, 3, 2);
    let p = write_config(dir.path(), "other.json", &c);
    let ckpt = trained().join("final.ckpt");
    let o = run(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--config",
        s(&p),
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("codec"), "{}", stderr(&o));

    let o = run(&["eval", "--checkpoint", s(&ckpt), "--repeats", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_of_a_corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.ckpt");
    fs::write(&p, b"not a checkpoint").unwrap();
    let o = run(&["eval", "--checkpoint", s(&p)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn sweep_needs_values_and_integral_m() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "tiny.json", &tiny_config());
    let o = run(&[
        "sweep",
        "--config",
        s(&p),
        "--axis",
        "w",
        "--values",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("--values"));
    let o = run(&[
        "sweep",
        "--config",
        s(&p),
        "--axis",
        "m",
        "--values",
        "1.5",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&[
        "sweep",
        "--config",
        s(&p),
        "--axis",
        "m",
        "--values",
        "3",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_over_m_keeps_the_first_eavesdroppers_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "tiny.json", &tiny_config());
    let out = dir.path().join("sweep");
    assert_ok(&run(&[
        "sweep",
        "--config",
        s(&p),
        "--axis",
        "m",
        "--values",
        "1,2",
        "--out",
        s(&out),
    ]));
    let csv = out.join("sweep.csv");
    assert_eq!(column(&csv, "M"), ["1", "2"]);
    assert_eq!(column(&csv, "tag"), ["M=1", "M=2"]);
    let snap = ExperimentConfig::from_json(&fs::read_to_string(out.join("M-1-seed3/config.json")).unwrap()).unwrap();
    assert_eq!(snap.roster.fading_stds, [0.64]);
    assert_eq!(column(&csv, "acc_per_eve")[0].split(';').count(), 1);

    let plots = dir.path().join("plots");
    assert_ok(&run(&[
        "plot",
        "--metrics",
        s(&csv),
        "--family",
        "surface",
        "--out",
        s(&plots),
    ]));
    assert!(plots.join("surface_ssim.svg").is_file());
    assert!(plots.join("surface_accuracy.svg").is_file());
}

#[test]
fn plots_from_a_single_row_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = trained().join("metrics.csv");
    let mut r = csv::Reader::from_path(&metrics).unwrap();
    let header = r.headers().unwrap().clone();
    let first = r.records().next().unwrap().unwrap();
    let one = dir.path().join("one.csv");
    let mut w = csv::Writer::from_path(&one).unwrap();
    w.write_record(&header).unwrap();
    w.write_record(&first).unwrap();
    w.flush().unwrap();

    for family in ["privacy-utility", "accuracy-snr"] {
        let a = dir.path().join(format!("{family}-a"));
        let b = dir.path().join(format!("{family}-b"));
        assert_ok(&run(&[
            "plot",
            "--metrics",
            s(&one),
            "--family",
            family,
            "--out",
            s(&a),
        ]));
        assert_ok(&run(&[
            "plot",
            "--metrics",
            s(&one),
            "--family",
            family,
            "--out",
            s(&b),
        ]));
        let files: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert!(!files.is_empty());
        for f in files {
            let (x, y) = (fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
            assert!(x == y, "{f:?} differs between runs");
            assert!(String::from_utf8(x).unwrap().contains("<svg"));
        }
    }
}

#[test]
fn plot_names_a_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("thin.csv");
    fs::write(&p, "ssim_bob,tag\n0.5,x\n").unwrap();
    let o = run(&[
        "plot",
        "--metrics",
        s(&p),
        "--family",
        "privacy-utility",
        "--out",
        s(dir.path()),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ce_per_eve"), "{}", stderr(&o));
    let o = run(&[
        "plot",
        "--metrics",
        s(&p),
        "--family",
        "surface",
        "--out",
        s(dir.path()),
    ]);
    assert!(stderr(&o).contains("`w`"), "{}", stderr(&o));
}
