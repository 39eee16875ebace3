use std::fs;
use std::path::{Path, PathBuf};

use euph_core::augment::AugConfig;
use euph_core::cleaning::{CleaningConfig, MedianScope};
use euph_core::embedding::MockEncoderConfig;
use euph_core::knn::{KnnConfig, DEFAULT_K, DEFAULT_LAMBDA};
use euph_core::{Delimiters, ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Every tunable of the pipeline as one flat JSON object. Missing keys take
/// their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub open_delimiter: String,
    pub close_delimiter: String,

    pub dimension: usize,
    pub hash_seed: u64,

    pub min_count: usize,
    pub max_skew: f64,
    pub median_scope: MedianScope,

    pub delta: f64,
    pub epsilon: f64,
    pub n_max: usize,
    pub literal_mode: bool,

    pub model: ModelKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub hidden: usize,

    pub k: usize,
    pub lambda: f64,
    pub leave_one_out: bool,
    /// Let augmented rows (ids starting with `euphaug-`) into the datastore.
    pub augmented_in_store: bool,

    pub corpus: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ensemble_members: Vec<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let aug = AugConfig::default();
        let train = TrainConfig::default();
        let clean = CleaningConfig::default();
        let mock = MockEncoderConfig::default();
        PipelineConfig {
            seed: 0,
            open_delimiter: "<".into(),
            close_delimiter: ">".into(),
            dimension: mock.dimension,
            hash_seed: mock.hash_seed,
            min_count: clean.min_count,
            max_skew: clean.max_skew,
            median_scope: clean.median_scope,
            delta: aug.delta,
            epsilon: aug.epsilon,
            n_max: aug.n_max,
            literal_mode: aug.literal_mode,
            model: ModelKind::PetHead,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            dropout: train.dropout,
            hidden: train.hidden,
            k: DEFAULT_K,
            lambda: DEFAULT_LAMBDA,
            leave_one_out: true,
            augmented_in_store: false,
            corpus: None,
            bundle: None,
            inventory: None,
            external: None,
            out: None,
            ensemble_members: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Missing(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn delimiters(&self) -> CliResult<Delimiters> {
        Ok(Delimiters::new(self.open_delimiter.clone(), self.close_delimiter.clone())?)
    }

    pub fn mock(&self) -> MockEncoderConfig {
        MockEncoderConfig {
            dimension: self.dimension,
            hash_seed: self.hash_seed,
        }
    }

    pub fn cleaning(&self) -> CleaningConfig {
        CleaningConfig {
            min_count: self.min_count,
            max_skew: self.max_skew,
            median_scope: self.median_scope,
        }
    }

    pub fn augment(&self) -> CliResult<AugConfig> {
        let config = AugConfig {
            delta: self.delta,
            epsilon: self.epsilon,
            n_max: self.n_max,
            literal_mode: self.literal_mode,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train(&self) -> CliResult<TrainConfig> {
        let config = TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            dropout: self.dropout,
            hidden: self.hidden,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn knn(&self) -> CliResult<KnnConfig> {
        if self.k == 0 {
            return Err(CliError::Usage("k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CliError::Usage(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(KnnConfig {
            k: self.k,
            lambda: self.lambda,
            leave_one_out: self.leave_one_out,
        })
    }
}
