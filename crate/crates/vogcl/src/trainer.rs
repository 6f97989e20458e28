//! Deterministic mini-batch SGD training with pluggable epoch ordering and
//! checkpoint snapshots.
//!
//! One optimizer (SGD, momentum 0.9) is used for every mode so that ordering
//! is the only difference between compared runs. Randomness is split into
//! named streams (`init`, `shuffle`, `augment`, `curriculum-sampling`) derived
//! from the master seed, so enabling augmentation does not disturb the
//! curriculum draws and vice versa.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as IoWrite;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::model::{build_model, Model, ModelArch, ModelError};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VOGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("sampler returned a non-bijective order at epoch {epoch}")]
    SamplerContract { epoch: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint magic {found:?}; expected {expected:?}", expected = CHECKPOINT_MAGIC)]
    BadMagic { found: [u8; 4] },
    #[error("checkpoint format version {found} not supported (reader supports {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    Curriculum,
    AntiCurriculum,
    ExternalScores,
}

impl TrainMode {
    pub fn uses_curriculum(self) -> bool {
        !matches!(self, TrainMode::Baseline)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Curriculum => "curriculum",
            TrainMode::AntiCurriculum => "anti_curriculum",
            TrainMode::ExternalScores => "external_scores",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub checkpoint_epochs: BTreeSet<usize>,
    pub seed: u64,
    pub mode: TrainMode,
    /// Curriculum horizon L: epochs after which sampling is frozen uniform.
    pub curriculum_horizon: usize,
    /// Horizontal flip with probability 0.5, drawn from the `augment` stream.
    pub augmentation: bool,
    /// Architecture override; `None` uses the desk default sized from the
    /// dataset.
    pub arch: Option<ModelArch>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            checkpoint_epochs: [26, 28, 30].into_iter().collect(),
            seed: 1,
            mode: TrainMode::Baseline,
            curriculum_horizon: 10,
            augmentation: false,
            arch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be finite and momentum in [0,1)".into(),
            ));
        }
        if let Some(&bad) = self
            .checkpoint_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.epochs)
        {
            return Err(TrainError::InvalidConfig(format!(
                "checkpoint epoch {bad} outside 1..={}",
                self.epochs
            )));
        }
        if self.mode.uses_curriculum()
            && (self.curriculum_horizon == 0 || self.curriculum_horizon > self.epochs)
        {
            return Err(TrainError::InvalidConfig(format!(
                "curriculum horizon {} outside 1..={}",
                self.curriculum_horizon, self.epochs
            )));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the canonical JSON form, recorded in
    /// checkpoints so mismatched artifacts are detectable.
    pub fn digest(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Produces each epoch's delivery order. Every call must return a permutation
/// of `0..n`; the trainer verifies this.
pub trait EpochSampler {
    fn permutation(&mut self, epoch: usize, n: usize) -> Vec<usize>;
}

/// Uniform reshuffle each epoch, from the `shuffle` stream.
pub struct ShuffleSampler {
    rng: Rng,
}

impl ShuffleSampler {
    pub fn new(master_seed: u64) -> Self {
        ShuffleSampler {
            rng: Rng::stream(master_seed, "shuffle"),
        }
    }
}

impl EpochSampler for ShuffleSampler {
    fn permutation(&mut self, _epoch: usize, n: usize) -> Vec<usize> {
        self.rng.permutation(n)
    }
}

/// Versioned parameter snapshot taken after a completed epoch.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub epoch: usize,
    pub arch: ModelArch,
    pub parameters: Vec<(String, Tensor)>,
    pub train_config_digest: u64,
}

impl ModelCheckpoint {
    pub fn to_model(&self) -> Result<Model, ModelError> {
        Model::from_parts(self.arch.clone(), self.parameters.clone(), 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

pub struct TrainOutput {
    pub model: Model,
    pub checkpoints: Vec<ModelCheckpoint>,
    pub loss_log: Vec<LossRecord>,
}

fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in perm {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Trains `config.epochs` epochs of SGD with momentum over `dataset`, the
/// per-epoch order coming from `sampler`. Deterministic given (config,
/// dataset, sampler state).
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    sampler: &mut dyn EpochSampler,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let arch = match &config.arch {
        Some(a) => a.clone(),
        None => {
            let shape = dataset.image_shape().expect("non-empty");
            ModelArch::desk(shape[0], dataset.num_classes())
        }
    };
    let mut model = build_model(&arch, config.seed)?;
    let mut velocity: Vec<Vec<f64>> = model
        .parameters()
        .iter()
        .map(|(_, t)| vec![0.0; t.numel()])
        .collect();
    let mut augment_rng = Rng::stream(config.seed, "augment");
    let digest = config.digest();

    let n = dataset.len();
    let mut checkpoints = Vec::new();
    let mut loss_log = Vec::new();
    for epoch in 1..=config.epochs {
        let order = sampler.permutation(epoch, n);
        if !is_permutation(&order, n) {
            return Err(TrainError::SamplerContract { epoch });
        }
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut labels = Vec::with_capacity(chunk.len());
            let shape = dataset.image_shape().expect("non-empty").to_vec();
            let img_len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(chunk.len() * img_len);
            for &idx in chunk {
                let sample = &dataset.samples()[idx];
                if config.augmentation && augment_rng.next_f64() < 0.5 {
                    data.extend_from_slice(sample.image.flip_last_axis().data());
                } else {
                    data.extend_from_slice(sample.image.data());
                }
                labels.push(sample.label);
            }
            let mut batch_shape = vec![chunk.len()];
            batch_shape.extend_from_slice(&shape);
            let batch = Tensor::new(batch_shape, data)?;

            let mut pass = model.forward_pass(&batch, false, true)?;
            let loss = pass.graph.softmax_cross_entropy(pass.logits, &labels)?;
            pass.graph.backward(loss)?;
            let loss_value = pass.graph.value(loss);

            for (i, node) in pass.param_nodes.iter().enumerate() {
                let grad = pass.graph.grad(*node).expect("params require grad");
                let vel = &mut velocity[i];
                let param = model.parameters_mut()[i].1.data_mut();
                for ((p, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
                    *v = config.momentum * *v + g;
                    *p -= config.learning_rate * *v;
                }
            }
            loss_log.push(LossRecord {
                epoch,
                step,
                loss: loss_value,
            });
        }
        if config.checkpoint_epochs.contains(&epoch) {
            checkpoints.push(ModelCheckpoint {
                format_version: CHECKPOINT_VERSION,
                epoch,
                arch: arch.clone(),
                parameters: model.parameters().to_vec(),
                train_config_digest: digest,
            });
        }
    }
    Ok(TrainOutput {
        model,
        checkpoints,
        loss_log,
    })
}

#[derive(Serialize, Deserialize)]
struct ParamInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    epoch: usize,
    arch: ModelArch,
    train_config_digest: u64,
    params: Vec<ParamInfo>,
}

/// Binary layout: magic `VOGC`, little-endian u32 version, little-endian u32
/// JSON header length, the UTF-8 JSON header, then raw little-endian f64
/// parameter data in header order. The float bytes round-trip bit-exactly.
pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<(), TrainError> {
    let header = CheckpointHeader {
        epoch: ckpt.epoch,
        arch: ckpt.arch.clone(),
        train_config_digest: ckpt.train_config_digest,
        params: ckpt
            .parameters
            .iter()
            .map(|(name, t)| ParamInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + header_json.len());
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&ckpt.format_version.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in &ckpt.parameters {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| TrainError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, TrainError> {
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let take = |range: std::ops::Range<usize>| -> Result<&[u8], TrainError> {
        bytes
            .get(range.clone())
            .ok_or_else(|| TrainError::Corrupt(format!("truncated at byte {}", range.start)))
    };
    let magic_bytes = take(0..4)?;
    let magic = [
        magic_bytes[0],
        magic_bytes[1],
        magic_bytes[2],
        magic_bytes[3],
    ];
    if magic != CHECKPOINT_MAGIC {
        return Err(TrainError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(take(4..8)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(take(8..12)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(12..12 + header_len)?)?;
    let mut offset = 12 + header_len;
    let mut parameters = Vec::with_capacity(header.params.len());
    for info in &header.params {
        let numel: usize = info.shape.iter().product();
        let raw = take(offset..offset + numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        parameters.push((info.name.clone(), Tensor::new(info.shape.clone(), data)?));
        offset += numel * 8;
    }
    if offset != bytes.len() {
        return Err(TrainError::Corrupt(format!(
            "{} trailing bytes after parameters",
            bytes.len() - offset
        )));
    }
    Ok(ModelCheckpoint {
        format_version: version,
        epoch: header.epoch,
        arch: header.arch,
        parameters,
        train_config_digest: header.train_config_digest,
    })
}

/// Loss log as CSV `epoch,step,loss`.
pub fn write_loss_log_csv(log: &[LossRecord], path: &Path) -> Result<(), TrainError> {
    let mut out = String::from("epoch,step,loss\n");
    for r in log {
        out.push_str(&format!("{},{},{:.17e}\n", r.epoch, r.step, r.loss));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| TrainError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let mut f = fs::File::create(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(out.as_bytes())
        .map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
}
