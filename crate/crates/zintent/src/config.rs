use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{CorpusSpec, Variant};
use crate::zeroshot::ExtractionLayer;

/// Model hyperparameters shared by teacher and student construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_hid: usize,
    pub d_emb: usize,
    pub dropout_proj: f64,
    pub dropout_fusion: f64,
    pub tau: f64,
    pub gamma: f64,
    pub use_contrastive: bool,
    pub distill: bool,
    pub normalize_before_sim: bool,
    pub tau_literal_multiply: bool,
    pub init_from_teacher_backbone: bool,
    pub backbone_trainable: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_hid: 64,
            d_emb: 128,
            dropout_proj: 0.2,
            dropout_fusion: 0.3,
            tau: 0.007,
            gamma: 10.0,
            use_contrastive: true,
            distill: true,
            normalize_before_sim: true,
            tau_literal_multiply: false,
            init_from_teacher_backbone: false,
            backbone_trainable: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_hid == 0 || self.d_emb == 0 {
            return Err(Error::config("d_hid and d_emb must be at least 1"));
        }
        for (name, rate) in [("dropout_proj", self.dropout_proj), ("dropout_fusion", self.dropout_fusion)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(format!("{name} = {rate} not in [0, 1)")));
            }
        }
        if self.tau <= 0.0 {
            return Err(Error::config(format!("tau = {} must be positive", self.tau)));
        }
        if self.gamma < 0.0 {
            return Err(Error::config(format!("gamma = {} must be non-negative", self.gamma)));
        }
        Ok(())
    }
}

/// Optimization settings for one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Consecutive epochs without a dev-accuracy improvement before training
    /// stops; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 8,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_patience: 3,
            plateau_factor: 0.5,
            min_lr: 1e-6,
            early_stop_patience: 10,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::config(format!("lr = {} must be a non-negative finite number", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta1 and beta2 must be in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::config("eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.plateau_factor) || self.plateau_factor == 0.0 {
            return Err(Error::config(format!("plateau_factor = {} not in (0, 1)", self.plateau_factor)));
        }
        if self.min_lr < 0.0 {
            return Err(Error::config("min_lr must be non-negative"));
        }
        Ok(())
    }
}

/// Settings for the zero-shot retrieval path: which layer to export
/// embeddings from and how the database is assembled and queried.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroshotConfig {
    pub extraction_layer: ExtractionLayer,
    /// Database sentences sampled per intent; capped at the available pool.
    pub db_sentences_per_intent: usize,
    pub top_k: usize,
}

impl Default for ZeroshotConfig {
    fn default() -> Self {
        ZeroshotConfig {
            extraction_layer: ExtractionLayer::Pooled,
            db_sentences_per_intent: 30,
            top_k: 5,
        }
    }
}

impl ZeroshotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.db_sentences_per_intent == 0 {
            return Err(Error::config("db_sentences_per_intent must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k must be at least 1"));
        }
        Ok(())
    }
}

/// What the `experiment` command runs: which variants, over which seeds, and
/// the shape of the database-size sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub sweep_sizes: Vec<usize>,
    pub sweep_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1, 2, 3],
            variants: Variant::ALL.to_vec(),
            sweep_sizes: vec![5, 10, 20, 40],
            sweep_repeats: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("experiment needs at least one seed"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("experiment needs at least one variant"));
        }
        if self.sweep_sizes.is_empty() || self.sweep_sizes.contains(&0) {
            return Err(Error::config("sweep_sizes must be non-empty positive sizes"));
        }
        if self.sweep_repeats == 0 {
            return Err(Error::config("sweep_repeats must be at least 1"));
        }
        Ok(())
    }
}

/// Where run outputs land.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { out_dir: PathBuf::from("runs") }
    }
}

/// Top-level configuration file: corpus generation, model and training
/// hyperparameters, zero-shot settings, and experiment layout.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub zeroshot: ZeroshotConfig,
    pub experiment: ExperimentConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.zeroshot.validate()?;
        self.experiment.validate()?;
        Ok(())
    }

    /// The fully resolved configuration as TOML, defaults included, for a
    /// reproducibility log next to the run outputs.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("serialize config: {e}")))
    }
}
