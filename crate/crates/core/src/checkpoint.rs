//! Self-contained binary checkpoints.
//!
//! Layout: the magic line `secure-jscc-ckpt/1\n`, a little-endian `u64`
//! header length, a JSON header, then every tensor listed in the header's
//! manifest as raw little-endian scalars in manifest order. Saving a loaded
//! checkpoint reproduces the original bytes.

use std::fs;
use std::path::Path;

use jscc_tensor::{Adam, AdamConfig, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::params::{hex, ParamSet};

type NamedTensors<S> = Vec<(String, Tensor<S>)>;
use crate::trainer::{Counters, TrainState};

pub const CHECKPOINT_MAGIC: &str = "secure-jscc-ckpt/1\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| Error::Checkpoint(format!("rng state: {m}"));
        if self.seed.len() != 64 {
            return Err(bad("seed must be 32 bytes"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(
            self.word_pos
                .parse::<u128>()
                .map_err(|_| bad("word_pos is not an integer"))?,
        );
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub group: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Whether moment buffers exist (they are created on the first step).
    pub moments: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub dtype: String,
    pub checkpoint_id: String,
    pub config: ExperimentConfig,
    pub counters: Counters,
    pub legit_rng: RngState,
    pub eve_rngs: Vec<RngState>,
    pub optimizers: Vec<OptimizerState>,
    pub tensors: Vec<TensorEntry>,
}

fn group_names(eves: usize) -> Vec<String> {
    let mut g = vec!["encoder".to_string(), "decoder".to_string()];
    g.extend((1..=eves).map(|i| format!("eve{i}")));
    g
}

fn groups<S: Scalar>(state: &TrainState<S>) -> Vec<(&ParamSet<S>, &Adam<S>)> {
    let mut v = vec![
        (&state.codec.encoder, &state.encoder_opt),
        (&state.codec.decoder, &state.decoder_opt),
    ];
    v.extend(state.adversaries.iter().map(|a| &a.params).zip(&state.adversary_opts));
    v
}

/// Serializes the full training state.
pub fn to_bytes<S: Scalar>(state: &TrainState<S>) -> Result<Vec<u8>> {
    let names = group_names(state.adversaries.len());
    let mut optimizers = Vec::new();
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for ((params, opt), group) in groups(state).into_iter().zip(&names) {
        let moments = !opt.first.is_empty();
        if moments && (opt.first.len() != params.len() || opt.second.len() != params.len()) {
            return Err(Error::Checkpoint(format!(
                "optimizer of `{group}` does not match its parameters"
            )));
        }
        optimizers.push(OptimizerState {
            group: group.clone(),
            lr: opt.config.lr,
            beta1: opt.config.beta1,
            beta2: opt.config.beta2,
            eps: opt.config.eps,
            step: opt.step,
            moments,
        });
        let mut kinds = vec![(TensorKind::Param, params.tensors())];
        if moments {
            kinds.push((TensorKind::AdamM, &opt.first[..]));
            kinds.push((TensorKind::AdamV, &opt.second[..]));
        }
        for (kind, tensors) in kinds {
            for (name, t) in params.names().iter().zip(tensors) {
                entries.push(TensorEntry {
                    group: group.clone(),
                    name: name.clone(),
                    kind: kind.clone(),
                    shape: t.shape().to_vec(),
                });
                for &x in t.data() {
                    x.write_le(&mut payload);
                }
            }
        }
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_MAGIC.trim_end().to_string(),
        dtype: S::DTYPE.to_string(),
        checkpoint_id: state.checkpoint_id(),
        config: state.config.clone(),
        counters: state.counters,
        legit_rng: RngState::capture(&state.legit_rng),
        eve_rngs: state.eve_rngs.iter().map(RngState::capture).collect(),
        optimizers,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses only the header.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let magic = CHECKPOINT_MAGIC.as_bytes();
    if bytes.len() < magic.len() + 8 || !bytes.starts_with(magic) {
        let head = String::from_utf8_lossy(&bytes[..bytes.len().min(32)]);
        let hint = if head.starts_with("secure-jscc-ckpt/") {
            format!("unsupported checkpoint version `{}`", head.lines().next().unwrap_or(""))
        } else {
            "not a checkpoint file".to_string()
        };
        return Err(Error::Checkpoint(hint));
    }
    let at = magic.len();
    let len = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    let start = at + 8;
    if bytes.len() < start + len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[start..start + len])
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    Ok((header, start + len))
}

/// Restores a training state; fails on dtype or layout mismatches.
pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<TrainState<S>> {
    let (header, mut at) = read_header(bytes)?;
    if header.dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} parameters but {} was requested",
            header.dtype,
            S::DTYPE
        )));
    }
    let mut state = TrainState::<S>::new(header.config.clone())
        .map_err(|e| Error::Checkpoint(format!("embedded configuration is invalid: {e}")))?;
    let names = group_names(state.adversaries.len());
    if header.optimizers.len() != names.len() || header.eve_rngs.len() != state.adversaries.len() {
        return Err(Error::Checkpoint("group count does not match the configuration".into()));
    }
    let mut entries = header.tensors.iter();
    let mut loaded: Vec<(NamedTensors<S>, Adam<S>)> = Vec::new();
    for (group, opt) in names.iter().zip(&header.optimizers) {
        if &opt.group != group {
            return Err(Error::Checkpoint(format!(
                "expected optimizer `{group}`, found `{}`",
                opt.group
            )));
        }
        let count = match group.as_str() {
            "encoder" => state.codec.encoder.len(),
            "decoder" => state.codec.decoder.len(),
            _ => state.adversaries[0].params.len(),
        };
        let kinds: &[TensorKind] = if opt.moments {
            &[TensorKind::Param, TensorKind::AdamM, TensorKind::AdamV]
        } else {
            &[TensorKind::Param]
        };
        let mut blocks: Vec<Vec<(String, Tensor<S>)>> = Vec::new();
        for kind in kinds {
            let mut block = Vec::with_capacity(count);
            for _ in 0..count {
                let e = entries
                    .next()
                    .ok_or_else(|| Error::Checkpoint("manifest ends early".into()))?;
                if &e.group != group || &e.kind != kind {
                    return Err(Error::Checkpoint(format!(
                        "unexpected manifest entry {}/{}",
                        e.group, e.name
                    )));
                }
                let n: usize = e.shape.iter().product();
                let end = at + n * S::BYTES;
                if end > bytes.len() {
                    return Err(Error::Checkpoint("tensor data truncated".into()));
                }
                let data = bytes[at..end].chunks_exact(S::BYTES).map(S::read_le).collect();
                at = end;
                block.push((e.name.clone(), Tensor::from_vec(&e.shape, data)?));
            }
            blocks.push(block);
        }
        let cfg = AdamConfig {
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
        };
        let mut it = blocks.into_iter();
        let params = it.next().expect("param block");
        let strip = |b: Vec<(String, Tensor<S>)>| b.into_iter().map(|(_, t)| t).collect();
        let first = it.next().map(strip).unwrap_or_default();
        let second = it.next().map(strip).unwrap_or_default();
        loaded.push((params, Adam::from_state(cfg, opt.step, first, second)));
    }
    if entries.next().is_some() || at != bytes.len() {
        return Err(Error::Checkpoint("trailing data after the manifest".into()));
    }
    let mut it = loaded.into_iter();
    let (p, o) = it.next().expect("encoder");
    state.codec.encoder.load(p)?;
    state.encoder_opt = o;
    let (p, o) = it.next().expect("decoder");
    state.codec.decoder.load(p)?;
    state.decoder_opt = o;
    for (i, (p, o)) in it.enumerate() {
        state.adversaries[i].params.load(p)?;
        state.adversary_opts[i] = o;
    }
    state.counters = header.counters;
    state.legit_rng = header.legit_rng.restore()?;
    state.eve_rngs = header.eve_rngs.iter().map(RngState::restore).collect::<Result<_>>()?;
    if !state.codec.encoder.is_finite() || !state.codec.decoder.is_finite() {
        return Err(Error::Checkpoint("checkpoint contains non-finite parameters".into()));
    }
    Ok(state)
}

pub fn save_checkpoint<S: Scalar>(state: &TrainState<S>, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<TrainState<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Fails unless the checkpoint's codec matches `expected`.
pub fn ensure_codec(state_codec: &CodecConfig, expected: &CodecConfig) -> Result<()> {
    if state_codec != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint codec {state_codec:?} does not match the configured codec {expected:?}"
        )));
    }
    Ok(())
}
