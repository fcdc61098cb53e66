//! Experiment configuration, schema `secure-jscc-config/1`.
//!
//! Every block has defaults, unknown keys are rejected, and
//! [`ExperimentConfig::validate`] runs before any compute. Serializing a
//! parsed config materializes all defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::EavesdropperSpec;
use crate::channel::{ChannelKind, ChannelSpec};
use crate::codec::{CodecConfig, ConvLayerSpec, ImageShape};
use crate::data::{self, SecretMapping, SyntheticStyle, CIFAR_CLASSES, CIFAR_SECRET};
use crate::error::{Error, Result};
use crate::metrics::Scenario;
use crate::objective::LossWeights;

pub const CONFIG_SCHEMA: &str = "secure-jscc-config/1";
/// Environment variable overriding `dataset.root`.
pub const DATA_ENV: &str = "SECURE_JSCC_DATA";
pub const FULL_FADING_STDS: [f64; 6] = [0.04, 0.16, 0.36, 0.64, 1.0, 1.44];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Celeba,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub image: ImageShape,
    pub num_classes: usize,
    pub data_seed: u64,
    pub style: SyntheticStyle,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 500,
            image: ImageShape::CIFAR,
            num_classes: CIFAR_CLASSES,
            data_seed: 2024,
            style: SyntheticStyle::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub name: DatasetKind,
    pub root: Option<PathBuf>,
    /// Named mapping preset (`cifar10`, `celeba-pairs`); ignored when
    /// `mappings` is given.
    pub mappings_preset: Option<String>,
    pub mappings: Option<Vec<SecretMapping>>,
    /// Keep only the first N training / test images.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// CelebA side length after center crop.
    pub resolution: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: DatasetKind::Cifar10,
            root: None,
            mappings_preset: None,
            mappings: None,
            train_limit: None,
            test_limit: None,
            resolution: 64,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn resolved_mappings(&self) -> Result<Vec<SecretMapping>> {
        if let Some(m) = &self.mappings {
            return Ok(m.clone());
        }
        match (&self.mappings_preset, self.name) {
            (Some(p), _) => data::mapping_preset(p),
            (None, DatasetKind::Celeba) => Ok(data::celeba_attribute_pairs()),
            (None, DatasetKind::Cifar10) => Ok(vec![SecretMapping::class_label(CIFAR_SECRET, CIFAR_CLASSES)]),
            (None, DatasetKind::Synthetic) => Ok(vec![SecretMapping::class_label(
                CIFAR_SECRET,
                self.synthetic.num_classes,
            )]),
        }
    }

    pub fn image_shape(&self) -> ImageShape {
        match self.name {
            DatasetKind::Cifar10 => ImageShape::CIFAR,
            DatasetKind::Celeba => ImageShape {
                height: self.resolution,
                width: self.resolution,
                channels: 3,
            },
            DatasetKind::Synthetic => self.synthetic.image,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RosterConfig {
    /// One eavesdropper per entry.
    pub fading_stds: Vec<f64>,
    /// Secret of each eavesdropper; defaults to the dataset's mappings in
    /// order (or the common class label).
    pub secret_ids: Option<Vec<String>>,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            fading_stds: FULL_FADING_STDS.to_vec(),
            secret_ids: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub snr_legit_grid_db: Vec<f64>,
    pub snr_eve_db: f64,
    pub kinds: Vec<ChannelKind>,
    pub scenarios: Vec<Scenario>,
    pub repeats: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_legit_grid_db: (0..11).map(|i| -20.0 + 5.0 * i as f64).collect(),
            snr_eve_db: 15.0,
            kinds: vec![ChannelKind::Awgn, ChannelKind::Rayleigh, ChannelKind::Nakagami],
            scenarios: vec![Scenario::NonColluding],
            repeats: 10,
            seed: 7,
            batch_size: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Channel family used for training (and for in-training evaluation).
    pub train_kind: ChannelKind,
    /// Fading std of the legitimate channel.
    pub legit_fading_std: f64,
    pub nakagami_m: f64,
    pub power: f64,
    pub eval: EvalConfig,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            train_kind: ChannelKind::Rayleigh,
            legit_fading_std: 1.0,
            nakagami_m: 3.0,
            power: 1.0,
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Leakage weight shared by all eavesdroppers.
    pub w: f64,
    /// Optional per-eavesdropper override of `w`.
    pub w_per_eve: Option<Vec<f64>>,
    /// SSIM weight in the distortion.
    pub alpha: f64,
    /// Uniform-target leakage term; `false` selects the true-label variant.
    pub alc: bool,
    /// Inverse-frequency class weights in the adversary loss.
    pub class_weighted: bool,
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w: self.w,
            w_per_eve: self.w_per_eve.clone(),
            alpha: self.alpha,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        let d = LossWeights::default();
        Self {
            w: d.w,
            w_per_eve: d.w_per_eve,
            alpha: d.alpha,
            alc: true,
            class_weighted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSchedule {
    pub batch_size: usize,
    pub n_episodes: usize,
    pub n_warmup: usize,
    pub n_legit_epochs: usize,
    pub n_adv_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub snr_legit_train_db: f64,
    pub snr_eve_train_db: f64,
    /// Evaluate every this many episodes (and after warm-up).
    pub eval_every: usize,
    /// Checkpoint every this many episodes (and after warm-up and at the end).
    pub checkpoint_every: usize,
    /// Channel draws per image during in-training evaluation.
    pub eval_repeats: usize,
    /// Training images evaluated alongside the test split.
    pub train_eval_subset: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            batch_size: 128,
            n_episodes: 200,
            n_warmup: 50,
            n_legit_epochs: 5,
            n_adv_epochs: 5,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            snr_legit_train_db: 20.0,
            snr_eve_train_db: 15.0,
            eval_every: 10,
            checkpoint_every: 10,
            eval_repeats: 10,
            train_eval_subset: 1000,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("schedule.batch_size", self.batch_size),
            ("schedule.n_legit_epochs", self.n_legit_epochs),
            ("schedule.n_adv_epochs", self.n_adv_epochs),
            ("schedule.eval_every", self.eval_every),
            ("schedule.checkpoint_every", self.checkpoint_every),
            ("schedule.eval_repeats", self.eval_repeats),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("schedule.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config(
                "schedule.beta1",
                "Adam needs betas in [0, 1) and a positive epsilon",
            ));
        }
        if !self.snr_legit_train_db.is_finite() || !self.snr_eve_train_db.is_finite() {
            return Err(Error::config(
                "schedule.snr_legit_train_db",
                "training SNRs must be finite",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenario: Scenario,
    pub dataset: DatasetConfig,
    pub codec: CodecConfig,
    pub roster: RosterConfig,
    pub channel: ChannelConfig,
    pub loss: LossConfig,
    pub schedule: TrainingSchedule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ExperimentConfig {
    /// Full-scale setting: CIFAR-10, six eavesdroppers, full-length schedule.
    pub fn paper() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            seed: 0,
            output_dir: PathBuf::from("runs/paper"),
            scenario: Scenario::NonColluding,
            dataset: DatasetConfig::default(),
            codec: CodecConfig::default(),
            roster: RosterConfig::default(),
            channel: ChannelConfig::default(),
            loss: LossConfig::default(),
            schedule: TrainingSchedule::default(),
        }
    }

    /// Desk-scale setting: 2000 CIFAR-shaped training images, 500 test
    /// images, three Rayleigh eavesdroppers, reduced widths and epochs.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.output_dir = PathBuf::from("runs/desk");
        c.dataset.name = DatasetKind::Synthetic;
        c.dataset.synthetic = SyntheticConfig {
            style: SyntheticStyle {
                signal: 0.04,
                background: 0.3,
                noise: 0.03,
            },
            ..SyntheticConfig::default()
        };
        c.codec = CodecConfig {
            image: ImageShape::CIFAR,
            antennas: 1,
            bandwidth_ratio: 1.0 / 3.0,
            power: 1.0,
            conv_stack: vec![
                ConvLayerSpec::new(16, 5, 2),
                ConvLayerSpec::new(16, 5, 2),
                ConvLayerSpec::new(32, 3, 1),
            ],
        };
        c.roster.fading_stds = vec![0.64, 1.0, 1.44];
        c.channel.eval.repeats = 10;
        c.schedule = TrainingSchedule {
            batch_size: 32,
            n_episodes: 12,
            n_warmup: 8,
            n_legit_epochs: 3,
            n_adv_epochs: 1,
            lr: 3e-4,
            eval_every: 4,
            checkpoint_every: 4,
            eval_repeats: 2,
            train_eval_subset: 500,
            ..TrainingSchedule::default()
        };
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config(
                "preset",
                format!("unknown preset `{other}` (desk, paper)"),
            )),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c = Self::parse(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Parses and fills defaults without validating, so that overrides can
    /// still be applied.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(json_path(&e), e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&Self::read(path)?)
    }

    pub fn read(path: &Path) -> Result<String> {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies the dataset-root environment override.
    pub fn apply_env(&mut self) {
        if let Some(root) = std::env::var_os(DATA_ENV) {
            self.dataset.root = Some(PathBuf::from(root));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::config(
                "schema",
                format!("expected `{CONFIG_SCHEMA}`, found `{}`", self.schema),
            ));
        }
        if self.dataset.name != DatasetKind::Synthetic && self.dataset.root.is_none() {
            return Err(Error::config(
                "dataset.root",
                format!(
                    "a dataset root is required for {:?} (set it or {DATA_ENV})",
                    self.dataset.name
                ),
            ));
        }
        if self.codec.image != self.dataset.image_shape() {
            return Err(Error::config(
                "codec.image",
                format!(
                    "codec expects {:?} but the dataset yields {:?}",
                    self.codec.image,
                    self.dataset.image_shape()
                ),
            ));
        }
        self.codec.plan()?;
        if self.codec.power != self.channel.power {
            return Err(Error::config("channel.power", "must equal codec.power"));
        }
        if self.roster.fading_stds.is_empty() {
            return Err(Error::config(
                "roster.fading_stds",
                "at least one eavesdropper is required",
            ));
        }
        if self.roster.fading_stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("roster.fading_stds", "fading stds must be positive"));
        }
        let mappings = self.dataset.resolved_mappings()?;
        for m in &mappings {
            m.validate()?;
        }
        let roster = self.roster_specs(self.schedule.snr_eve_train_db, self.channel.train_kind)?;
        if self.scenario == Scenario::Colluding && roster.iter().any(|e| e.secret_id != roster[0].secret_id) {
            return Err(Error::config(
                "scenario",
                "colluding eavesdroppers need a common secret",
            ));
        }
        self.loss.weights().validate(roster.len())?;
        self.schedule.validate()?;
        self.legit_channel(self.schedule.snr_legit_train_db, self.channel.train_kind)
            .validate()
            .map_err(|e| Error::config("channel", e.to_string()))?;
        let eval = &self.channel.eval;
        if eval.snr_legit_grid_db.is_empty() || eval.kinds.is_empty() || eval.scenarios.is_empty() {
            return Err(Error::config("channel.eval", "grids must be non-empty"));
        }
        if eval.repeats == 0 || eval.batch_size == 0 {
            return Err(Error::config("channel.eval.repeats", "must be at least 1"));
        }
        if self.dataset.name == DatasetKind::Synthetic {
            let s = &self.dataset.synthetic;
            if s.n_train == 0 || s.n_test == 0 || s.num_classes < 2 {
                return Err(Error::config(
                    "dataset.synthetic",
                    "needs images in both splits and L >= 2",
                ));
            }
        }
        Ok(())
    }

    pub fn legit_channel(&self, snr_db: f64, kind: ChannelKind) -> ChannelSpec {
        ChannelSpec {
            kind,
            snr_db,
            fading_std: self.channel.legit_fading_std,
            shape: self.channel.nakagami_m,
            power: self.channel.power,
        }
    }

    /// Eavesdropper roster at the given SNR and channel family.
    pub fn roster_specs(&self, snr_db: f64, kind: ChannelKind) -> Result<Vec<EavesdropperSpec>> {
        let mappings = self.dataset.resolved_mappings()?;
        let m = self.roster.fading_stds.len();
        let ids: Vec<String> = match &self.roster.secret_ids {
            Some(ids) if ids.len() != m => {
                return Err(Error::config(
                    "roster.secret_ids",
                    format!("{} secret ids for {m} eavesdroppers", ids.len()),
                ))
            }
            Some(ids) => ids.clone(),
            None if mappings.len() == 1 => vec![mappings[0].secret_id.clone(); m],
            None if mappings.len() >= m => mappings[..m].iter().map(|x| x.secret_id.clone()).collect(),
            None => {
                return Err(Error::config(
                    "roster.secret_ids",
                    format!("{} mappings cannot cover {m} eavesdroppers", mappings.len()),
                ))
            }
        };
        ids.into_iter()
            .zip(&self.roster.fading_stds)
            .enumerate()
            .map(|(i, (secret_id, &std))| {
                let mapping = mappings
                    .iter()
                    .find(|x| x.secret_id == secret_id)
                    .ok_or_else(|| Error::config("roster.secret_ids", format!("unknown secret `{secret_id}`")))?;
                let spec = EavesdropperSpec {
                    id: i + 1,
                    channel: ChannelSpec {
                        kind,
                        snr_db,
                        fading_std: std,
                        shape: self.channel.nakagami_m,
                        power: self.channel.power,
                    },
                    secret_id,
                    num_classes: mapping.num_classes,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    /// Keeps the first `m` eavesdroppers.
    pub fn with_roster_size(mut self, m: usize) -> Result<Self> {
        if m == 0 || m > self.roster.fading_stds.len() {
            return Err(Error::config(
                "roster.fading_stds",
                format!("cannot take {m} of {}", self.roster.fading_stds.len()),
            ));
        }
        self.roster.fading_stds.truncate(m);
        if let Some(ids) = &mut self.roster.secret_ids {
            ids.truncate(m);
        }
        if let Some(ws) = &mut self.loss.w_per_eve {
            ws.truncate(m);
        }
        Ok(self)
    }
}

fn json_path(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports unknown or missing keys as "... field `name` ..."
    msg.split('`').nth(1).map_or_else(|| "config".into(), str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::desk().validate().unwrap();
        let mut p = ExperimentConfig::paper();
        assert!(p.validate().unwrap_err().is_config());
        p.dataset.root = Some("/data".into());
        p.validate().unwrap();
        assert_eq!(p.roster.fading_stds, FULL_FADING_STDS.to_vec());
        assert_eq!(p.codec.k(), 1024);
        assert_eq!(p.codec.antennas, 4);
        assert_eq!((p.loss.w, p.loss.alpha), (5.0, 0.1));
        let s = &p.schedule;
        assert_eq!(
            (s.batch_size, s.n_episodes, s.n_warmup, s.n_legit_epochs, s.n_adv_epochs),
            (128, 200, 50, 5, 5)
        );
        assert_eq!((s.lr, s.snr_legit_train_db, s.snr_eve_train_db), (1e-4, 20.0, 15.0));
        assert_eq!(p.channel.eval.repeats, 10);
    }

    #[test]
    fn round_trip_materializes_defaults() {
        let c = ExperimentConfig::from_json(r#"{"dataset": {"name": "synthetic"}, "codec": {"antennas": 1}}"#).unwrap();
        let text = c.to_json();
        let again = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_json(), text);
        assert!(text.contains("\"alpha\": 0.1"));
    }

    #[test]
    fn errors_name_their_key() {
        let e = ExperimentConfig::from_json(r#"{"schedule": {"batchsize": 3}}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "batchsize"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"dataset": {"name": "cifar10"}}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "dataset.root"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"schema": "other/2", "dataset": {"name": "synthetic"}}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "schema"));
    }

    #[test]
    fn roster_resolution() {
        let c = ExperimentConfig::desk();
        let r = c.roster_specs(15.0, ChannelKind::Rayleigh).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|e| e.secret_id == CIFAR_SECRET && e.num_classes == 10));
        assert_eq!(r[2].channel.fading_std, 1.44);
        let mut celeba = ExperimentConfig::paper();
        celeba.dataset.name = DatasetKind::Celeba;
        let r = celeba.roster_specs(15.0, ChannelKind::Rayleigh).unwrap();
        assert_eq!(r[3].secret_id, "eve4");
        assert_eq!(r[3].num_classes, 4);
        let two = c.clone().with_roster_size(2).unwrap();
        assert_eq!(two.roster.fading_stds, vec![0.64, 1.0]);
        assert!(c.with_roster_size(0).is_err());
    }
}
