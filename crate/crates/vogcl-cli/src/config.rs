//! Experiment configuration: one JSON file drives every subcommand.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vogcl::data::SyntheticProfile;
use vogcl::metrics::AucMethod;
use vogcl::trainer::{TrainConfig, TrainMode};
use vogcl::vog::{ClassChoice, VogFormula};

use crate::CliError;

/// Where the train/test datasets come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated motif images with a per-sample difficulty knob.
    Synthetic {
        /// `{class_name: count}` in class-index order; defaults to the
        /// built-in imbalanced 7-class profile (1392 samples).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_profile: Option<serde_json::Map<String, serde_json::Value>>,
        /// Defaults to the matching held-out profile (473 samples).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_profile: Option<serde_json::Map<String, serde_json::Value>>,
        #[serde(default = "default_knob_range")]
        knob_range: (f64, f64),
        /// Seed for data generation, separate from training seeds so every
        /// run and mode sees the same dataset.
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    /// PGM directories produced by `generate-data` or by hand.
    Directory {
        train_root: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_root: Option<PathBuf>,
        /// Used to split `train_root` when no `test_root` is given.
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    /// Big-endian IDX image/label pairs.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

fn default_knob_range() -> (f64, f64) {
    (0.0, 1.0)
}

fn default_data_seed() -> u64 {
    1
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            train_profile: None,
            test_profile: None,
            knob_range: default_knob_range(),
            data_seed: default_data_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VogConfig {
    /// Epochs whose checkpoints feed the score; needs at least 2.
    pub checkpoint_epochs: BTreeSet<usize>,
    pub class_choice: ClassChoice,
    pub formula: VogFormula,
    /// Z-score scores within each class before ranking.
    pub class_normalize: bool,
}

impl Default for VogConfig {
    fn default() -> Self {
        VogConfig {
            checkpoint_epochs: [26, 28, 30].into_iter().collect(),
            class_choice: ClassChoice::TrueLabel,
            formula: VogFormula::Standard,
            class_normalize: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Number of balanced test subsets; metrics are averaged over them.
    pub subsets: usize,
    pub majority_class: usize,
    /// Class collapsed to 0 for the binary-task metrics.
    pub normal_class: Option<usize>,
    pub auc_method: AucMethod,
    /// Seed for the majority-class partition.
    pub subset_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            subsets: 4,
            majority_class: 0,
            normal_class: Some(0),
            auc_method: AucMethod::OneVsRestMacro,
            subset_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub train: TrainConfig,
    /// Independent repetitions per mode in `compare`.
    pub runs: usize,
    pub vog: VogConfig,
    /// Difficulty file for external-scores mode (same CSV format as
    /// `vog_scores.csv`, with the external value in the `vog_score` column).
    pub external_scores_path: Option<PathBuf>,
    pub evaluation: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            train: TrainConfig::default(),
            runs: 5,
            vog: VogConfig::default(),
            external_scores_path: None,
            evaluation: EvalConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn profile_from_map(
    map: &serde_json::Map<String, serde_json::Value>,
) -> Result<SyntheticProfile, CliError> {
    let mut classes = Vec::new();
    for (name, v) in map {
        let count = v.as_u64().ok_or_else(|| {
            CliError::Config(format!(
                "profile count for class '{name}' must be an integer"
            ))
        })?;
        classes.push((name.clone(), count as usize));
    }
    if classes.is_empty() {
        return Err(CliError::Config("profile has no classes".into()));
    }
    Ok(SyntheticProfile { classes })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.runs < 1 {
            return Err(CliError::Config("runs must be at least 1".into()));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.mode == TrainMode::ExternalScores && self.external_scores_path.is_none() {
            return Err(CliError::Config(
                "mode external_scores requires external_scores_path".into(),
            ));
        }
        if let Some(p) = &self.external_scores_path {
            if !p.exists() {
                return Err(CliError::Config(format!(
                    "external_scores_path {} does not exist",
                    p.display()
                )));
            }
        }
        match &self.dataset {
            DatasetSource::Synthetic { knob_range, .. } => {
                let (lo, hi) = knob_range;
                if !(0.0..=1.0).contains(lo) || !(0.0..=1.0).contains(hi) || lo > hi {
                    return Err(CliError::Config(format!(
                        "knob_range must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"
                    )));
                }
            }
            DatasetSource::Directory {
                train_root,
                test_root,
                ..
            } => {
                for p in [Some(train_root), test_root.as_ref()].into_iter().flatten() {
                    if !p.exists() {
                        return Err(CliError::Config(format!(
                            "dataset path {} does not exist",
                            p.display()
                        )));
                    }
                }
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [
                    Some(train_images),
                    Some(train_labels),
                    test_images.as_ref(),
                    test_labels.as_ref(),
                ]
                .into_iter()
                .flatten()
                {
                    if !p.exists() {
                        return Err(CliError::Config(format!(
                            "dataset path {} does not exist",
                            p.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn train_profile(&self) -> Result<SyntheticProfile, CliError> {
        match &self.dataset {
            DatasetSource::Synthetic {
                train_profile: Some(map),
                ..
            } => profile_from_map(map),
            _ => Ok(SyntheticProfile::default_train()),
        }
    }

    pub fn test_profile(&self) -> Result<SyntheticProfile, CliError> {
        match &self.dataset {
            DatasetSource::Synthetic {
                test_profile: Some(map),
                ..
            } => profile_from_map(map),
            _ => Ok(SyntheticProfile::default_test()),
        }
    }

    pub fn train_data_dir(&self) -> PathBuf {
        self.output_dir.join("data").join("train")
    }

    pub fn test_data_dir(&self) -> PathBuf {
        self.output_dir.join("data").join("test")
    }

    pub fn checkpoint_dir(&self, mode: TrainMode) -> PathBuf {
        self.output_dir.join("checkpoints").join(mode.as_str())
    }

    pub fn checkpoint_path(&self, mode: TrainMode, epoch: usize) -> PathBuf {
        self.checkpoint_dir(mode)
            .join(format!("epoch_{epoch:03}.ckpt"))
    }

    pub fn scores_path(&self) -> PathBuf {
        self.output_dir.join("vog_scores.csv")
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub mode: Option<TrainMode>,
    pub seed: Option<u64>,
    pub curriculum_horizon: Option<usize>,
    pub vog_formula: Option<VogFormula>,
    pub class_choice: Option<ClassChoice>,
    pub class_normalize: bool,
    pub auc_method: Option<AucMethod>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(mode) = self.mode {
            config.train.mode = mode;
        }
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        if let Some(h) = self.curriculum_horizon {
            config.train.curriculum_horizon = h;
        }
        if let Some(f) = self.vog_formula {
            config.vog.formula = f;
        }
        if let Some(c) = self.class_choice {
            config.vog.class_choice = c;
        }
        if self.class_normalize {
            config.vog.class_normalize = true;
        }
        if let Some(a) = self.auc_method {
            config.evaluation.auc_method = a;
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
    }
}
