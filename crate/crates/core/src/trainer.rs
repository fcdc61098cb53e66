//! Training protocol: legitimate warm-up, adversary warm-up against the
//! frozen codec, then episodes of `N_L` legitimate epochs (eavesdroppers
//! frozen) followed by `N_E` adversary epochs (codec frozen).
//!
//! Randomness is split into independent ChaCha streams: one for the
//! legitimate channel, one per eavesdropper channel, and per-phase epoch
//! orders derived from the run seed. The legitimate and adversary halves of a
//! phase group share the same epoch orders.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use jscc_tensor::{Adam, AdamConfig, Graph, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::adversary::{Adversary, EavesdropperSpec};
use crate::channel::{apply_channel, transmit, ChannelSpec};
use crate::checkpoint;
use crate::codec::Codec;
use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{self, batches, class_weights, epoch_order, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalSetup, MetricsRecord};
use crate::objective::{self, LeakageInput, LossWeights};
use crate::params::optimizer_fingerprint;

const CODEC_INIT_STREAM: u64 = 1 << 32;
const ADVERSARY_INIT_STREAM: u64 = 2 << 32;
const SHUFFLE_STREAM: u64 = 3 << 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub warmup_legit_epochs: usize,
    pub warmup_adv_epochs: usize,
    pub episodes: usize,
    pub legit_steps: u64,
    pub adv_steps: u64,
}

/// Complete, checkpointable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<S> {
    pub config: ExperimentConfig,
    pub codec: Codec<S>,
    pub encoder_opt: Adam<S>,
    pub decoder_opt: Adam<S>,
    pub adversaries: Vec<Adversary<S>>,
    pub adversary_opts: Vec<Adam<S>>,
    pub counters: Counters,
    pub legit_rng: ChaCha8Rng,
    pub eve_rngs: Vec<ChaCha8Rng>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl<S: Scalar> TrainState<S> {
    /// Fresh state; the config is validated first.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let roster = config.roster_specs(config.schedule.snr_eve_train_db, config.channel.train_kind)?;
        let codec = Codec::new(config.codec.clone(), &mut stream(config.seed, CODEC_INIT_STREAM))?;
        let input = 2 * codec.k();
        let adversaries = roster
            .iter()
            .enumerate()
            .map(|(i, e)| {
                Adversary::new(
                    input,
                    e.num_classes,
                    &mut stream(config.seed, ADVERSARY_INIT_STREAM + i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let adam = AdamConfig {
            lr: config.schedule.lr,
            beta1: config.schedule.beta1,
            beta2: config.schedule.beta2,
            eps: config.schedule.adam_eps,
        };
        Ok(Self {
            encoder_opt: Adam::new(adam),
            decoder_opt: Adam::new(adam),
            adversary_opts: vec![Adam::new(adam); adversaries.len()],
            adversaries,
            counters: Counters::default(),
            legit_rng: stream(config.seed, 0),
            eve_rngs: (0..roster.len()).map(|i| stream(config.seed, 1 + i as u64)).collect(),
            codec,
            config,
        })
    }

    pub fn roster(&self) -> Result<Vec<EavesdropperSpec>> {
        self.config
            .roster_specs(self.config.schedule.snr_eve_train_db, self.config.channel.train_kind)
    }

    pub fn legit_channel(&self) -> ChannelSpec {
        self.config
            .legit_channel(self.config.schedule.snr_legit_train_db, self.config.channel.train_kind)
    }

    /// SHA-256 over the codec's parameters and optimizer state.
    pub fn codec_hash(&self) -> String {
        digest([
            self.codec.encoder.fingerprint(),
            self.codec.decoder.fingerprint(),
            optimizer_fingerprint(&self.encoder_opt),
            optimizer_fingerprint(&self.decoder_opt),
        ])
    }

    /// SHA-256 over eavesdropper `i`'s parameters and optimizer state.
    pub fn adversary_hash(&self, i: usize) -> String {
        digest([
            self.adversaries[i].params.fingerprint(),
            optimizer_fingerprint(&self.adversary_opts[i]),
        ])
    }

    /// Short identifier of all model parameters.
    pub fn checkpoint_id(&self) -> String {
        let mut parts = vec![self.codec.encoder.fingerprint(), self.codec.decoder.fingerprint()];
        parts.extend(self.adversaries.iter().map(|a| a.params.fingerprint()));
        digest(parts)[..16].to_string()
    }
}

fn digest<I: IntoIterator<Item = String>>(parts: I) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
    }
    crate::params::hex(&h.finalize())
}

/// Train and test splits plus, per eavesdropper, its secret stream and
/// optional class weights.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Dataset,
    pub test: Dataset,
    pub secrets: Vec<usize>,
    pub class_weights: Vec<Option<Vec<f64>>>,
}

impl TrainData {
    pub fn new(config: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        let roster = config.roster_specs(config.schedule.snr_eve_train_db, config.channel.train_kind)?;
        if train.shape != config.codec.image || test.shape != config.codec.image {
            return Err(Error::config(
                "codec.image",
                format!("dataset images are {:?}", train.shape),
            ));
        }
        let mut secrets = Vec::new();
        let mut weights = Vec::new();
        for e in &roster {
            let s = train.secret_position(&e.secret_id)?;
            test.secret_position(&e.secret_id)?;
            if train.num_classes(s) != e.num_classes {
                return Err(Error::config(
                    "roster",
                    format!("secret `{}` class count mismatch", e.secret_id),
                ));
            }
            weights.push(if config.loss.class_weighted {
                Some(class_weights(train.labels(s), e.num_classes)?)
            } else {
                None
            });
            secrets.push(s);
        }
        Ok(Self {
            train,
            test,
            secrets,
            class_weights: weights,
        })
    }

    /// Loads the configured dataset.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        Self::new(
            config,
            load_dataset(config, Split::Train)?,
            load_dataset(config, Split::Test)?,
        )
    }
}

/// One split of the configured dataset, truncated to the configured limit.
pub fn load_dataset(config: &ExperimentConfig, split: Split) -> Result<Dataset> {
    let d = &config.dataset;
    let root = || {
        d.root
            .as_deref()
            .ok_or_else(|| Error::config("dataset.root", "required"))
    };
    let limit = match split {
        Split::Train => d.train_limit,
        Split::Test => d.test_limit,
    };
    let ds = match d.name {
        DatasetKind::Synthetic => {
            let s = &d.synthetic;
            let (train, test) =
                data::synthetic_split(s.n_train, s.n_test, s.image, s.num_classes, s.data_seed, s.style)?;
            match split {
                Split::Train => train,
                Split::Test => test,
            }
        }
        DatasetKind::Cifar10 => data::load_cifar10(root()?, split)?,
        DatasetKind::Celeba => data::load_celeba(root()?, split, &d.resolved_mappings()?, d.resolution, limit)?,
    };
    Ok(match limit {
        Some(n) => ds.truncate(n),
        None => ds,
    })
}

/// Epoch orders of phase group `group` (0 is the warm-up, `e + 1` episode
/// `e`), independent of any other randomness.
pub fn epoch_orders(seed: u64, group: usize, epochs: usize, n: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM + group as u64);
    (0..epochs).map(|_| epoch_order(n, &mut rng)).collect()
}

/// What the legitimate pair minimizes in a phase.
#[derive(Clone, Debug, PartialEq)]
pub enum LegitObjective {
    /// Mean distortion only.
    Warmup { alpha: f64 },
    /// Distortion plus the weighted leakage term against frozen adversaries.
    Minimax { weights: LossWeights, alc: bool },
}

/// Per-batch losses of a phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseStats {
    pub batch_losses: Vec<f64>,
    pub epoch_means: Vec<f64>,
}

impl PhaseStats {
    fn push_epoch(&mut self, losses: &[f64]) {
        self.epoch_means
            .push(losses.iter().sum::<f64>() / losses.len().max(1) as f64);
        self.batch_losses.extend_from_slice(losses);
    }
}

/// Prefixes numerical failures with the phase and epoch they occurred in.
fn located(err: Error, what: &str) -> Error {
    match err {
        Error::Numerical(m) => Error::Numerical(format!("{what}: {m}")),
        other => other,
    }
}

fn check_loss(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite loss ({value}) in {what}")))
    }
}

/// Runs the given epochs of legitimate updates; adversaries stay frozen.
pub fn legit_phase<S: Scalar>(
    state: &mut TrainState<S>,
    data: &TrainData,
    orders: &[Vec<usize>],
    objective: &LegitObjective,
    label: &str,
) -> Result<PhaseStats> {
    let legit = state.legit_channel();
    let roster = state.roster()?;
    let batch_size = state.config.schedule.batch_size;
    let (a, k) = (state.codec.antennas(), state.codec.k());
    let mut stats = PhaseStats::default();
    for (e, order) in orders.iter().enumerate() {
        let mut losses = Vec::new();
        for idx in batches(order, batch_size) {
            let u = data.train.batch::<S>(idx)?;
            let mut g = Graph::new();
            let enc = state.codec.encoder.register(&mut g, true);
            let dec = state.codec.decoder.register(&mut g, true);
            let uv = g.constant(u.pixels);
            let x = state.codec.encode_op(&mut g, &enc, uv)?;
            let r = legit.sample_realization::<S, _>(idx.len(), a, k, &mut state.legit_rng)?;
            let y = transmit(&mut g, x, r).map_err(|err| located(err, &format!("{label}, epoch {e}")))?;
            let uh = state.codec.decode_op(&mut g, &dec, y)?;
            let loss = match objective {
                LegitObjective::Warmup { alpha } => objective::legit_loss_op(&mut g, uv, uh, &[], *alpha, true)?,
                LegitObjective::Minimax { weights, alc } => {
                    let mut eves = Vec::with_capacity(roster.len());
                    for (i, eve) in roster.iter().enumerate() {
                        let r = eve
                            .channel
                            .sample_realization::<S, _>(idx.len(), a, k, &mut state.eve_rngs[i])?;
                        let z = transmit(&mut g, x, r).map_err(|err| located(err, &format!("{label}, epoch {e}")))?;
                        let frozen = state.adversaries[i].params.register(&mut g, false);
                        let q = state.adversaries[i].forward_op(&mut g, &frozen, z)?;
                        eves.push(LeakageInput {
                            probs: q,
                            labels: data.train.batch_labels(data.secrets[i], idx),
                            weight: weights.weight(i),
                        });
                    }
                    objective::legit_loss_op(&mut g, uv, uh, &eves, weights.alpha, *alc)?
                }
            };
            let value = g.value(loss).item().to_f64_lossy();
            check_loss(value, &format!("{label}, epoch {e}"))?;
            let grads = g.backward(loss);
            let ge = state.codec.encoder.gradients(&grads, &enc);
            let gd = state.codec.decoder.gradients(&grads, &dec);
            state.codec.encoder.step(&mut state.encoder_opt, &ge)?;
            state.codec.decoder.step(&mut state.decoder_opt, &gd)?;
            state.counters.legit_steps += 1;
            losses.push(value);
        }
        stats.push_epoch(&losses);
    }
    Ok(stats)
}

/// Runs the given epochs of adversary updates against the frozen codec.
/// Eavesdroppers are visited in `eve_order` within each batch; each uses
/// only its own parameters, optimizer and channel stream.
pub fn adversary_phase<S: Scalar>(
    state: &mut TrainState<S>,
    data: &TrainData,
    orders: &[Vec<usize>],
    eve_order: &[usize],
    label: &str,
) -> Result<Vec<PhaseStats>> {
    let roster = state.roster()?;
    let batch_size = state.config.schedule.batch_size;
    let mut stats = vec![PhaseStats::default(); roster.len()];
    for (e, order) in orders.iter().enumerate() {
        let mut losses = vec![Vec::new(); roster.len()];
        for idx in batches(order, batch_size) {
            let u = data.train.batch::<S>(idx)?;
            let x = state.codec.encode(&u)?;
            for &i in eve_order {
                let z = apply_channel(&x, &roster[i].channel, &mut state.eve_rngs[i])
                    .map_err(|err| located(err, &format!("{label}, epoch {e}")))?;
                let adv = &mut state.adversaries[i];
                let mut g = Graph::new();
                let vars = adv.params.register(&mut g, true);
                let zv = g.constant(jscc_tensor::Tensor::from_vec(&[z.batch, 2 * z.k], z.data)?);
                let q = adv.forward_op(&mut g, &vars, zv)?;
                let labels = data.train.batch_labels(data.secrets[i], idx);
                let loss = objective::adversary_loss_op(&mut g, q, &labels, data.class_weights[i].as_deref())?;
                let value = g.value(loss).item().to_f64_lossy();
                check_loss(value, &format!("{label}, eavesdropper {}, epoch {e}", i + 1))?;
                let grads = g.backward(loss);
                let gs = adv.params.gradients(&grads, &vars);
                adv.params.step(&mut state.adversary_opts[i], &gs)?;
                losses[i].push(value);
            }
            state.counters.adv_steps += 1;
        }
        for (s, l) in stats.iter_mut().zip(&losses) {
            s.push_epoch(l);
        }
    }
    Ok(stats)
}

/// Remaining legitimate warm-up epochs (pure distortion).
pub fn warmup_legit<S: Scalar>(state: &mut TrainState<S>, data: &TrainData) -> Result<PhaseStats> {
    let sched = &state.config.schedule;
    let orders = epoch_orders(state.config.seed, 0, sched.n_warmup, data.train.len());
    let todo = orders[state.counters.warmup_legit_epochs.min(orders.len())..].to_vec();
    let alpha = state.config.loss.alpha;
    let stats = legit_phase(
        state,
        data,
        &todo,
        &LegitObjective::Warmup { alpha },
        "legitimate warm-up",
    )?;
    state.counters.warmup_legit_epochs = state.config.schedule.n_warmup;
    Ok(stats)
}

/// Remaining adversary warm-up epochs with the codec frozen.
pub fn warmup_adversaries<S: Scalar>(state: &mut TrainState<S>, data: &TrainData) -> Result<Vec<PhaseStats>> {
    let sched = &state.config.schedule;
    let orders = epoch_orders(state.config.seed, 0, sched.n_warmup, data.train.len());
    let todo = orders[state.counters.warmup_adv_epochs.min(orders.len())..].to_vec();
    let all: Vec<usize> = (0..state.adversaries.len()).collect();
    let stats = adversary_phase(state, data, &todo, &all, "adversary warm-up")?;
    state.counters.warmup_adv_epochs = state.config.schedule.n_warmup;
    Ok(stats)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub legit: PhaseStats,
    pub adversaries: Vec<PhaseStats>,
}

/// One minimax episode; increments the episode counter by one.
pub fn minimax_episode<S: Scalar>(state: &mut TrainState<S>, data: &TrainData) -> Result<EpisodeStats> {
    let sched = state.config.schedule.clone();
    let episode = state.counters.episodes;
    let orders = epoch_orders(
        state.config.seed,
        episode + 1,
        sched.n_legit_epochs.max(sched.n_adv_epochs),
        data.train.len(),
    );
    let objective = LegitObjective::Minimax {
        weights: state.config.loss.weights(),
        alc: state.config.loss.alc,
    };
    let legit = legit_phase(
        state,
        data,
        &orders[..sched.n_legit_epochs],
        &objective,
        &format!("episode {episode}"),
    )?;
    let all: Vec<usize> = (0..state.adversaries.len()).collect();
    let adversaries = adversary_phase(
        state,
        data,
        &orders[..sched.n_adv_epochs],
        &all,
        &format!("episode {episode}"),
    )?;
    state.counters.episodes += 1;
    Ok(EpisodeStats { legit, adversaries })
}

/// Frozen/updated parameter groups of one phase with before/after hashes of
/// the frozen party.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseAudit {
    pub phase: String,
    pub updated: Vec<String>,
    pub frozen: Vec<String>,
    pub frozen_before: Vec<String>,
    pub frozen_after: Vec<String>,
}

impl PhaseAudit {
    pub fn frozen_unchanged(&self) -> bool {
        self.frozen_before == self.frozen_after
    }

    pub fn disjoint(&self) -> bool {
        self.updated.iter().all(|u| !self.frozen.contains(u))
    }
}

fn audit_groups<S: Scalar>(state: &TrainState<S>, codec_frozen: bool) -> (Vec<String>, Vec<String>, Vec<String>) {
    let eves: Vec<String> = (0..state.adversaries.len()).map(|i| format!("eve{}", i + 1)).collect();
    let eve_hashes: Vec<String> = (0..state.adversaries.len()).map(|i| state.adversary_hash(i)).collect();
    if codec_frozen {
        (eves, vec!["codec".into()], vec![state.codec_hash()])
    } else {
        (vec!["codec".into()], eves, eve_hashes)
    }
}

fn audited<S: Scalar, T>(
    state: &mut TrainState<S>,
    phase: &str,
    codec_frozen: bool,
    audits: &mut Vec<PhaseAudit>,
    f: impl FnOnce(&mut TrainState<S>) -> Result<T>,
) -> Result<T> {
    let (updated, frozen, before) = audit_groups(state, codec_frozen);
    let out = f(state)?;
    let (_, _, after) = audit_groups(state, codec_frozen);
    let audit = PhaseAudit {
        phase: phase.into(),
        updated,
        frozen,
        frozen_before: before,
        frozen_after: after,
    };
    if !audit.frozen_unchanged() {
        return Err(Error::Numerical(format!("frozen parameters changed during {phase}")));
    }
    audits.push(audit);
    Ok(out)
}

/// Line-oriented progress log mirrored to the `log` facade.
pub struct RunLog {
    file: Option<fs::File>,
}

impl RunLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file: Some(file) })
    }

    pub fn silent() -> Self {
        Self { file: None }
    }

    pub fn line(&mut self, msg: &str) {
        log::info!("{msg}");
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{msg}");
        }
    }
}

/// Output of [`train`].
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub audits: Vec<PhaseAudit>,
    pub warmup_legit: PhaseStats,
    pub episodes: Vec<EpisodeStats>,
}

/// Evaluates at the training SNRs on the test split and a training subset.
pub fn evaluate_state<S: Scalar>(state: &TrainState<S>, data: &TrainData) -> Result<Vec<MetricsRecord>> {
    let cfg = &state.config;
    let subset = data.train.truncate(cfg.schedule.train_eval_subset.max(1));
    let mut rows = Vec::new();
    for (split, ds) in [(Split::Test, &data.test), (Split::Train, &subset)] {
        let setup = EvalSetup {
            legit: state.legit_channel(),
            roster: state.roster()?,
            scenario: cfg.scenario,
            repeats: cfg.schedule.eval_repeats,
            seed: cfg.channel.eval.seed,
            batch_size: cfg.channel.eval.batch_size,
            split,
            episode: state.counters.episodes,
            checkpoint_id: state.checkpoint_id(),
            run_seed: cfg.seed,
            tag: String::new(),
        };
        rows.push(metrics::evaluate(&state.codec, &state.adversaries, ds, &setup)?);
    }
    Ok(rows)
}

fn checkpoint_path(run_dir: &Path, episode: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("episode-{episode:04}.ckpt"))
}

fn fmt_losses(v: &[PhaseStats]) -> String {
    v.iter()
        .map(|s| format!("{:.4}", s.epoch_means.last().copied().unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Full run from a fresh state. Writes `config.json`, `run.log`,
/// `metrics.csv` and checkpoints under `run_dir`.
pub fn train<S: Scalar>(config: ExperimentConfig, data: &TrainData, run_dir: &Path) -> Result<TrainReport> {
    let state = TrainState::<S>::new(config)?;
    fs::create_dir_all(run_dir.join("checkpoints")).map_err(|e| Error::io(run_dir, e))?;
    let snapshot = run_dir.join("config.json");
    fs::write(&snapshot, state.config.to_json()).map_err(|e| Error::io(&snapshot, e))?;
    for f in ["metrics.csv", "run.log"] {
        let p = run_dir.join(f);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    resume(state, data, run_dir)
}

/// Continues `state` to the end of its schedule. Warm-up phases already
/// recorded in the counters are skipped; metrics rows are appended.
pub fn resume<S: Scalar>(mut state: TrainState<S>, data: &TrainData, run_dir: &Path) -> Result<TrainReport> {
    fs::create_dir_all(run_dir.join("checkpoints")).map_err(|e| Error::io(run_dir, e))?;
    let mut log = RunLog::open(&run_dir.join("run.log"))?;
    let metrics_path = run_dir.join("metrics.csv");
    let mut report = TrainReport {
        run_dir: run_dir.to_path_buf(),
        ..TrainReport::default()
    };
    let sched = state.config.schedule.clone();
    let warm_done =
        state.counters.warmup_legit_epochs >= sched.n_warmup && state.counters.warmup_adv_epochs >= sched.n_warmup;
    if !warm_done {
        log.line(&format!(
            "warm-up: {} legitimate and {} adversary epochs on {} images",
            sched.n_warmup,
            sched.n_warmup,
            data.train.len()
        ));
        let w = audited(&mut state, "legitimate warm-up", false, &mut report.audits, |s| {
            warmup_legit(s, data)
        })?;
        for (e, m) in w.epoch_means.iter().enumerate() {
            log.line(&format!("warm-up legit epoch {e}: distortion {m:.5}"));
        }
        report.warmup_legit = w;
        let a = audited(&mut state, "adversary warm-up", true, &mut report.audits, |s| {
            warmup_adversaries(s, data)
        })?;
        log.line(&format!("warm-up adversary losses: [{}]", fmt_losses(&a)));
        after_episode(&mut state, data, run_dir, &metrics_path, &mut report, &mut log, true)?;
    }
    while state.counters.episodes < sched.n_episodes {
        let ep = state.counters.episodes;
        let stats = {
            let orders = epoch_orders(
                state.config.seed,
                ep + 1,
                sched.n_legit_epochs.max(sched.n_adv_epochs),
                data.train.len(),
            );
            let obj = LegitObjective::Minimax {
                weights: state.config.loss.weights(),
                alc: state.config.loss.alc,
            };
            let legit = audited(
                &mut state,
                &format!("episode {ep} legitimate"),
                false,
                &mut report.audits,
                |s| legit_phase(s, data, &orders[..sched.n_legit_epochs], &obj, &format!("episode {ep}")),
            )?;
            let all: Vec<usize> = (0..state.adversaries.len()).collect();
            let adversaries = audited(
                &mut state,
                &format!("episode {ep} adversary"),
                true,
                &mut report.audits,
                |s| adversary_phase(s, data, &orders[..sched.n_adv_epochs], &all, &format!("episode {ep}")),
            )?;
            state.counters.episodes += 1;
            EpisodeStats { legit, adversaries }
        };
        log.line(&format!(
            "episode {ep}: legitimate loss {:.5}, adversary losses [{}]",
            stats.legit.epoch_means.last().copied().unwrap_or(f64::NAN),
            fmt_losses(&stats.adversaries)
        ));
        report.episodes.push(stats);
        let last = state.counters.episodes == sched.n_episodes;
        after_episode(&mut state, data, run_dir, &metrics_path, &mut report, &mut log, last)?;
    }
    let final_path = run_dir.join("final.ckpt");
    checkpoint::save_checkpoint(&state, &final_path)?;
    report.final_checkpoint = final_path;
    Ok(report)
}

fn after_episode<S: Scalar>(
    state: &mut TrainState<S>,
    data: &TrainData,
    run_dir: &Path,
    metrics_path: &Path,
    report: &mut TrainReport,
    log: &mut RunLog,
    force: bool,
) -> Result<()> {
    let ep = state.counters.episodes;
    let sched = &state.config.schedule;
    if force || ep.is_multiple_of(sched.eval_every) {
        let rows = evaluate_state(state, data)?;
        for r in &rows {
            log.line(&format!(
                "eval episode {ep} [{}]: ssim {:.4}, psnr {:.2} dB, adversary accuracy [{}]",
                r.split,
                r.ssim_bob,
                r.psnr_bob_db,
                r.acc_per_eve
                    .iter()
                    .map(|a| format!("{a:.3}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        metrics::append_csv(metrics_path, &rows)?;
        report.metrics.extend(rows);
    }
    if force || ep.is_multiple_of(sched.checkpoint_every) {
        let path = checkpoint_path(run_dir, ep);
        checkpoint::save_checkpoint(state, &path)?;
        report.checkpoints.push(path);
    }
    Ok(())
}
