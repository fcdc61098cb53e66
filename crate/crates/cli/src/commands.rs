use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use secure_jscc::checkpoint::{self, ensure_codec, read_header};
use secure_jscc::config::ExperimentConfig;
use secure_jscc::data::{Dataset, Split};
use secure_jscc::error::Error;
use secure_jscc::metrics::{self, EvalSetup, MetricsRecord, CSV_COLUMNS};
use secure_jscc::tensor::Scalar;
use secure_jscc::trainer::{self, load_dataset, TrainData, TrainState};

use crate::{Axis, ConfigArgs, Preset};

/// Resolves a configuration: file or preset, then the data-root environment
/// override and the seed flag, then validation.
pub fn resolve_config(args: &ConfigArgs) -> secure_jscc::error::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = ExperimentConfig::read(path).map_err(|e| Error::config("--config", e.to_string()))?;
            ExperimentConfig::parse(&text)?
        }
        None => match args.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Paper => ExperimentConfig::paper(),
        },
    };
    config.apply_env();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn checkpoint_dtype(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(read_header(&bytes)?.0.dtype)
}

pub fn train(args: &ConfigArgs, out: Option<PathBuf>, resume: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    match resume {
        Some(ckpt) => {
            if args.config.is_some() || args.seed.is_some() {
                return Err(Error::config("--checkpoint", "a resumed run uses the checkpoint's configuration").into());
            }
            match checkpoint_dtype(&ckpt)?.as_str() {
                "f64" => resume_run::<f64>(&ckpt, out),
                _ => resume_run::<f32>(&ckpt, out),
            }
        }
        None => {
            let config = resolve_config(args)?;
            let dir = out.unwrap_or_else(|| config.output_dir.clone());
            let data = TrainData::load(&config)?;
            log::info!("training into {}", dir.display());
            trainer::train::<f32>(config, &data, &dir)?;
            Ok(dir)
        }
    }
}

fn resume_run<S: Scalar>(ckpt: &Path, out: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let mut state = checkpoint::load_checkpoint::<S>(ckpt)?;
    state.config.apply_env();
    state.config.validate()?;
    let dir = out.unwrap_or_else(|| state.config.output_dir.clone());
    let data = TrainData::load(&state.config)?;
    log::info!("resuming at episode {} into {}", state.counters.episodes, dir.display());
    trainer::resume(state, &data, &dir)?;
    Ok(dir)
}

pub fn eval(
    ckpt: &Path,
    config: Option<&Path>,
    out: Option<PathBuf>,
    repeats: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<(PathBuf, usize)> {
    match checkpoint_dtype(ckpt)?.as_str() {
        "f64" => eval_typed::<f64>(ckpt, config, out, repeats, seed),
        _ => eval_typed::<f32>(ckpt, config, out, repeats, seed),
    }
}

fn eval_typed<S: Scalar>(
    ckpt: &Path,
    config: Option<&Path>,
    out: Option<PathBuf>,
    repeats: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<(PathBuf, usize)> {
    let state = checkpoint::load_checkpoint::<S>(ckpt)?;
    let mut cfg = match config {
        Some(path) => {
            let args = ConfigArgs {
                config: Some(path.to_path_buf()),
                preset: Preset::Desk,
                seed: None,
            };
            let c = resolve_config(&args)?;
            ensure_codec(&state.codec.config, &c.codec).map_err(|e| Error::config("codec", e.to_string()))?;
            if c.roster.fading_stds.len() != state.adversaries.len() {
                return Err(
                    Error::config("roster.fading_stds", "eavesdropper count differs from the checkpoint").into(),
                );
            }
            c
        }
        None => {
            let mut c = state.config.clone();
            c.apply_env();
            c
        }
    };
    if let Some(r) = repeats {
        if r == 0 {
            return Err(Error::config("--repeats", "must be at least 1").into());
        }
        cfg.channel.eval.repeats = r;
    }
    if let Some(s) = seed {
        cfg.channel.eval.seed = s;
    }
    let test = load_dataset(&cfg, Split::Test)?;
    let rows = eval_grid(&state, &cfg, &test)?;
    let path = out.unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("eval.csv"));
    if path.exists() {
        fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    metrics::append_csv(&path, &rows)?;
    Ok((path, rows.len()))
}

/// One row per (channel kind, scenario, legitimate SNR) on the test split.
pub fn eval_grid<S: Scalar>(
    state: &TrainState<S>,
    cfg: &ExperimentConfig,
    test: &Dataset,
) -> secure_jscc::error::Result<Vec<MetricsRecord>> {
    let eval = &cfg.channel.eval;
    let id = state.checkpoint_id();
    let mut rows = Vec::new();
    for &kind in &eval.kinds {
        for &scenario in &eval.scenarios {
            for &snr in &eval.snr_legit_grid_db {
                let setup = EvalSetup {
                    legit: cfg.legit_channel(snr, kind),
                    roster: cfg.roster_specs(eval.snr_eve_db, kind)?,
                    scenario,
                    repeats: eval.repeats,
                    seed: eval.seed,
                    batch_size: eval.batch_size,
                    split: Split::Test,
                    episode: state.counters.episodes,
                    checkpoint_id: id.clone(),
                    run_seed: cfg.seed,
                    tag: "eval".into(),
                };
                log::info!("evaluating {} / {} at {snr} dB", kind.as_str(), scenario.as_str());
                rows.push(metrics::evaluate(&state.codec, &state.adversaries, test, &setup)?);
            }
        }
    }
    Ok(rows)
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::W => "w",
            Axis::Alpha => "alpha",
            Axis::SnrEve => "snr_eve",
            Axis::M => "M",
        }
    }

    fn defaults(self, config: &ExperimentConfig) -> Vec<f64> {
        match self {
            Axis::W => vec![0.0, 10.0, 50.0, 100.0],
            Axis::Alpha => vec![0.0, 0.1, 0.5, 1.0],
            Axis::SnrEve => vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            Axis::M => (1..=config.roster.fading_stds.len()).map(|m| m as f64).collect(),
        }
    }

    /// Applies one axis value to a configuration.
    pub fn apply(self, mut config: ExperimentConfig, value: f64) -> secure_jscc::error::Result<ExperimentConfig> {
        match self {
            Axis::W => {
                config.loss.w = value;
                config.loss.w_per_eve = None;
            }
            Axis::Alpha => config.loss.alpha = value,
            Axis::SnrEve => {
                config.schedule.snr_eve_train_db = value;
                config.channel.eval.snr_eve_db = value;
            }
            Axis::M => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::config(
                        "--values",
                        format!("M must be a positive integer, got {value}"),
                    ));
                }
                config = config.with_roster_size(value as usize)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// Extra leading columns of the aggregated sweep CSV.
pub const SWEEP_COLUMNS: [&str; 5] = ["axis", "value", "w", "alpha", "M"];

pub fn sweep(
    args: &ConfigArgs,
    axis: Axis,
    values: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
) -> anyhow::Result<PathBuf> {
    let base = resolve_config(args)?;
    let values = values.unwrap_or_else(|| axis.defaults(&base));
    if values.is_empty() {
        return Err(Error::config("--values", "the sweep axis needs at least one value").into());
    }
    let seeds = seeds.unwrap_or_else(|| vec![base.seed]);
    let dir = out.unwrap_or_else(|| base.output_dir.join(format!("sweep-{}", axis.name())));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    // validate every point before spending time on training
    let points: Vec<(f64, ExperimentConfig)> = values
        .iter()
        .map(|&v| axis.apply(base.clone(), v).map(|c| (v, c)))
        .collect::<secure_jscc::error::Result<_>>()?;
    let train = load_dataset(&base, Split::Train)?;
    let test = load_dataset(&base, Split::Test)?;
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header: Vec<&str> = SWEEP_COLUMNS.to_vec();
    header.extend(CSV_COLUMNS);
    w.write_record(&header)?;
    for (value, config) in points {
        for &seed in &seeds {
            let mut config = config.clone();
            config.seed = seed;
            let run_dir = dir.join(format!("{}-{value}-seed{seed}", axis.name()));
            log::info!("sweep point {}={value}, seed {seed}", axis.name());
            let data = TrainData::new(&config, train.clone(), test.clone())?;
            let report = trainer::train::<f32>(config.clone(), &data, &run_dir)?;
            let mut row = report
                .metrics
                .iter()
                .rev()
                .find(|r| r.split == Split::Test)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("run produced no test metrics".into()))?;
            row.tag = format!("{}={value}", axis.name());
            let mut record = vec![
                axis.name().to_string(),
                value.to_string(),
                config.loss.w.to_string(),
                config.loss.alpha.to_string(),
                config.roster.fading_stds.len().to_string(),
            ];
            record.extend(row.to_row());
            w.write_record(&record)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(path)
}
