//! Evaluation metrics and the metrics CSV.
//!
//! Every row carries its provenance: seed, checkpoint id, channel kind, both
//! SNRs, scenario, split and episode. Per-eavesdropper vectors are written as
//! `;`-joined cells.

use std::fs::OpenOptions;
use std::path::Path;

use jscc_tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{argmax, collude_rows, Adversary, EavesdropperSpec};
use crate::channel::{apply_channel, ChannelKind, ChannelSpec};
use crate::codec::{Codec, ImageBatch};
use crate::data::{batches, Dataset, Split};
use crate::error::{Error, Result};
use crate::objective;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    NonColluding,
    Colluding,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::NonColluding => "non_colluding",
            Scenario::Colluding => "colluding",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_colluding" => Ok(Scenario::NonColluding),
            "colluding" => Ok(Scenario::Colluding),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

/// `10 log10(pixel_max^2 / MSE)` with the MSE in de-normalized units;
/// `+inf` when the MSE is zero. `mse01` is measured on `[0, 1]` images.
pub fn psnr_from_mse(mse01: f64, pixel_max: f64) -> f64 {
    let mse = mse01 * pixel_max * pixel_max;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (pixel_max * pixel_max / mse).log10()
    }
}

/// Per-image PSNR in dB.
pub fn psnr<S: Scalar>(u: &ImageBatch<S>, v: &ImageBatch<S>, pixel_max: f64) -> Result<Vec<f64>> {
    Ok(objective::mse(u, v)?
        .into_iter()
        .map(|m| psnr_from_mse(m, pixel_max))
        .collect())
}

pub fn accuracy(guesses: &[usize], truths: &[usize]) -> Result<f64> {
    if guesses.len() != truths.len() || guesses.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "accuracy over {} guesses and {} truths",
            guesses.len(),
            truths.len()
        )));
    }
    let hits = guesses.iter().zip(truths).filter(|(g, t)| g == t).count();
    Ok(hits as f64 / guesses.len() as f64)
}

/// Unweighted mean of per-class F1. A class with no true positives, or
/// absent from both guesses and truths, scores 0.
pub fn f1_macro(guesses: &[usize], truths: &[usize], num_classes: usize) -> Result<f64> {
    if guesses.len() != truths.len() || guesses.is_empty() || num_classes == 0 {
        return Err(Error::InvalidArgument("F1 needs matching, non-empty inputs".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&g, &t) in guesses.iter().zip(truths) {
        if g >= num_classes || t >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class out of range for L = {num_classes}"
            )));
        }
        if g == t {
            tp[g] += 1;
        } else {
            fp[g] += 1;
            fneg[t] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub seed: u64,
    pub checkpoint_id: String,
    pub episode: usize,
    pub split: Split,
    pub scenario: Scenario,
    pub channel_kind: ChannelKind,
    pub snr_legit_db: f64,
    pub snr_eve_db: f64,
    pub ssim_bob: f64,
    pub psnr_bob_db: f64,
    pub mse_bob: f64,
    pub ce_per_eve: Vec<f64>,
    pub acc_per_eve: Vec<f64>,
    pub acc_colluding: Option<f64>,
    pub acc_pessimistic: Option<f64>,
    pub f1_macro_per_eve: Option<Vec<f64>>,
    /// Free-form tag, e.g. a sweep axis value.
    pub tag: String,
}

impl MetricsRecord {
    pub fn mean_accuracy(&self) -> f64 {
        self.acc_per_eve.iter().sum::<f64>() / self.acc_per_eve.len().max(1) as f64
    }

    pub fn mean_ce(&self) -> f64 {
        self.ce_per_eve.iter().sum::<f64>() / self.ce_per_eve.len().max(1) as f64
    }
}

pub const CSV_COLUMNS: [&str; 17] = [
    "seed",
    "checkpoint_id",
    "episode",
    "split",
    "scenario",
    "channel_kind",
    "snr_legit_db",
    "snr_eve_db",
    "ssim_bob",
    "psnr_bob_db",
    "mse_bob",
    "ce_per_eve",
    "acc_per_eve",
    "acc_colluding",
    "acc_pessimistic",
    "f1_macro_per_eve",
    "tag",
];

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split_vec(s: &str, column: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|x| parse_f64(x, column)).collect()
}

fn parse_f64(s: &str, column: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        _ => s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("column `{column}`: cannot parse `{s}`"))),
    }
}

impl MetricsRecord {
    pub fn to_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.seed.to_string(),
            self.checkpoint_id.clone(),
            self.episode.to_string(),
            self.split.to_string(),
            self.scenario.as_str().into(),
            self.channel_kind.as_str().into(),
            self.snr_legit_db.to_string(),
            self.snr_eve_db.to_string(),
            self.ssim_bob.to_string(),
            self.psnr_bob_db.to_string(),
            self.mse_bob.to_string(),
            join(&self.ce_per_eve),
            join(&self.acc_per_eve),
            opt(self.acc_colluding),
            opt(self.acc_pessimistic),
            self.f1_macro_per_eve.as_deref().map(join).unwrap_or_default(),
            self.tag.clone(),
        ]
    }

    pub fn from_row(header: &csv::StringRecord, row: &csv::StringRecord) -> Result<Self> {
        let get = |name: &str| -> Result<&str> {
            header
                .iter()
                .position(|h| h == name)
                .and_then(|i| row.get(i))
                .ok_or_else(|| Error::InvalidArgument(format!("metrics CSV lacks column `{name}`")))
        };
        let f = |name: &str| -> Result<f64> { parse_f64(get(name)?, name) };
        let opt = |name: &str| -> Result<Option<f64>> {
            match get(name)? {
                "" => Ok(None),
                s => parse_f64(s, name).map(Some),
            }
        };
        let split = match get("split")? {
            "train" => Split::Train,
            "test" => Split::Test,
            s => return Err(Error::InvalidArgument(format!("column `split`: `{s}`"))),
        };
        let f1 = get("f1_macro_per_eve")?;
        Ok(Self {
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::InvalidArgument("column `seed`".into()))?,
            checkpoint_id: get("checkpoint_id")?.into(),
            episode: get("episode")?
                .parse()
                .map_err(|_| Error::InvalidArgument("column `episode`".into()))?,
            split,
            scenario: get("scenario")?.parse()?,
            channel_kind: get("channel_kind")?.parse()?,
            snr_legit_db: f("snr_legit_db")?,
            snr_eve_db: f("snr_eve_db")?,
            ssim_bob: f("ssim_bob")?,
            psnr_bob_db: f("psnr_bob_db")?,
            mse_bob: f("mse_bob")?,
            ce_per_eve: split_vec(get("ce_per_eve")?, "ce_per_eve")?,
            acc_per_eve: split_vec(get("acc_per_eve")?, "acc_per_eve")?,
            acc_colluding: opt("acc_colluding")?,
            acc_pessimistic: opt("acc_pessimistic")?,
            f1_macro_per_eve: if f1.is_empty() {
                None
            } else {
                Some(split_vec(f1, "f1_macro_per_eve")?)
            },
            tag: get("tag")?.into(),
        })
    }
}

/// Appends rows, writing the header when the file is new or empty.
pub fn append_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    r.records().map(|row| MetricsRecord::from_row(&header, &row?)).collect()
}

/// Channel and bookkeeping settings of one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSetup {
    pub legit: ChannelSpec,
    pub roster: Vec<EavesdropperSpec>,
    pub scenario: Scenario,
    pub repeats: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub split: Split,
    pub episode: usize,
    pub checkpoint_id: String,
    pub run_seed: u64,
    pub tag: String,
}

/// Encodes every image once and transmits it `repeats` times over
/// independent channel draws to Bob and to each eavesdropper; all metrics are
/// averaged over the `images x repeats` transmissions.
pub fn evaluate<S: Scalar>(
    codec: &Codec<S>,
    adversaries: &[Adversary<S>],
    data: &Dataset,
    setup: &EvalSetup,
) -> Result<MetricsRecord> {
    if adversaries.len() != setup.roster.len() {
        return Err(Error::InvalidArgument(format!(
            "{} adversaries for a roster of {}",
            adversaries.len(),
            setup.roster.len()
        )));
    }
    if data.is_empty() || setup.repeats == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs images and at least one repeat".into(),
        ));
    }
    setup.legit.validate()?;
    let mut secrets = Vec::new();
    for (eve, adv) in setup.roster.iter().zip(adversaries) {
        eve.validate()?;
        let s = data.secret_position(&eve.secret_id)?;
        if data.num_classes(s) != adv.num_classes || eve.num_classes != adv.num_classes {
            return Err(Error::InvalidArgument(format!(
                "eavesdropper {} has {} outputs but its secret has {} classes",
                eve.id,
                adv.num_classes,
                data.num_classes(s)
            )));
        }
        secrets.push(s);
    }
    let common = !secrets.is_empty() && secrets.iter().all(|&s| s == secrets[0]);
    if setup.scenario == Scenario::Colluding && !common {
        return Err(Error::config(
            "scenario",
            "colluding eavesdroppers need a common secret",
        ));
    }
    let m = setup.roster.len();
    let mut legit_rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut eve_rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(setup.seed);
            r.set_stream(1 + i as u64);
            r
        })
        .collect();
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut ssim_sum, mut mse_sum, mut psnr_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
    let mut ce_sum = vec![0.0; m];
    let mut guesses: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut truths: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut colluding_hits = 0usize;
    let mut pessimistic_hits = 0usize;
    for idx in batches(&order, setup.batch_size) {
        let u = data.batch::<S>(idx)?;
        let x = codec.encode(&u)?;
        for _ in 0..setup.repeats {
            let y = apply_channel(&x, &setup.legit, &mut legit_rng)?;
            let uh = codec.decode(&y)?;
            let s = objective::ssim(&u, &uh)?;
            let e = objective::mse(&u, &uh)?;
            ssim_sum += s.iter().sum::<f64>();
            mse_sum += e.iter().sum::<f64>();
            psnr_sum += e.iter().map(|&v| psnr_from_mse(v, u.pixel_max)).sum::<f64>();
            count += idx.len();
            let mut probs: Vec<Tensor<S>> = Vec::with_capacity(m);
            for i in 0..m {
                let z = apply_channel(&x, &setup.roster[i].channel, &mut eve_rngs[i])?;
                let zt = Tensor::from_vec(&[z.batch, 2 * z.k], z.data)?;
                let p = adversaries[i].predict_tensor(&zt)?;
                let labels = data.batch_labels(secrets[i], idx);
                let targets = objective::one_hot_targets::<S>(&labels, adversaries[i].num_classes)?;
                for r in 0..labels.len() {
                    ce_sum[i] += objective::ce_row(targets.row(r), p.row(r));
                    guesses[i].push(argmax(p.row(r)));
                }
                truths[i].extend(labels);
                probs.push(p);
            }
            if common {
                let start = truths[0].len() - idx.len();
                if setup.scenario == Scenario::Colluding {
                    let c = collude_rows(&probs)?;
                    for r in 0..idx.len() {
                        colluding_hits += usize::from(argmax(c.row(r)) == truths[0][start + r]);
                    }
                }
                for r in 0..idx.len() {
                    let t = truths[0][start + r];
                    pessimistic_hits += usize::from(guesses.iter().any(|g| g[start + r] == t));
                }
            }
        }
    }
    let n = count as f64;
    let acc_per_eve = (0..m)
        .map(|i| accuracy(&guesses[i], &truths[i]))
        .collect::<Result<Vec<_>>>()?;
    let f1 = (0..m)
        .map(|i| f1_macro(&guesses[i], &truths[i], adversaries[i].num_classes))
        .collect::<Result<Vec<_>>>()?;
    let psnr = if psnr_sum.is_infinite() {
        f64::INFINITY
    } else {
        psnr_sum / n
    };
    Ok(MetricsRecord {
        seed: setup.run_seed,
        checkpoint_id: setup.checkpoint_id.clone(),
        episode: setup.episode,
        split: setup.split,
        scenario: setup.scenario,
        channel_kind: setup.legit.kind,
        snr_legit_db: setup.legit.snr_db,
        snr_eve_db: setup.roster.first().map_or(f64::NAN, |e| e.channel.snr_db),
        ssim_bob: ssim_sum / n,
        psnr_bob_db: psnr,
        mse_bob: mse_sum / n,
        ce_per_eve: ce_sum.iter().map(|c| c / n).collect(),
        acc_per_eve,
        acc_colluding: (common && setup.scenario == Scenario::Colluding).then(|| colluding_hits as f64 / n),
        acc_pessimistic: common.then(|| pessimistic_hits as f64 / n),
        f1_macro_per_eve: (m > 0).then_some(f1),
        tag: setup.tag.clone(),
    })
}
