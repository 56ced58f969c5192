use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::AdjustmentStrategy;
use crate::distance::MappingKind;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tasks::{gen_local_task, gen_longrange_task, load_tsv, split, Dataset, SplitTag};

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Local {
        seq_len: usize,
        vocab: usize,
        train: usize,
        #[serde(default)]
        dev: usize,
        test: usize,
        /// Seed for data generation; defaults to the run seed.
        #[serde(default)]
        data_seed: Option<u64>,
    },
    Longrange {
        seq_len: usize,
        vocab: usize,
        train: usize,
        #[serde(default)]
        dev: usize,
        test: usize,
        #[serde(default)]
        data_seed: Option<u64>,
    },
    Tsv {
        path: PathBuf,
        vocab_path: PathBuf,
        max_len: usize,
        classes: usize,
        /// Train/dev/test fractions.
        #[serde(default = "default_fractions")]
        fractions: (f64, f64, f64),
    },
}

fn default_fractions() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}

/// Model hyperparameters; vocabulary, classes and length come from the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_model")]
    pub d_model: usize,
    #[serde(default = "heads")]
    pub heads: usize,
    #[serde(default = "head_dim")]
    pub head_dim: usize,
    #[serde(default = "d_ff")]
    pub d_ff: usize,
    #[serde(default)]
    pub mapping: MappingKind,
    #[serde(default)]
    pub strategy: AdjustmentStrategy,
    #[serde(default)]
    pub use_sinusoidal_pos: bool,
    #[serde(default = "layers")]
    pub layers: usize,
}

fn d_model() -> usize {
    256
}
fn heads() -> usize {
    16
}
fn head_dim() -> usize {
    16
}
fn d_ff() -> usize {
    512
}
fn layers() -> usize {
    1
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: d_model(),
            heads: heads(),
            head_dim: head_dim(),
            d_ff: d_ff(),
            mapping: MappingKind::default(),
            strategy: AdjustmentStrategy::default(),
            use_sinusoidal_pos: false,
            layers: layers(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "lr")]
    pub lr: f64,
}

fn lr() -> f64 {
    1e-3
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { lr: lr() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub epochs: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate dev and test after every epoch instead of only at the end.
    #[serde(default)]
    pub eval_every_epoch: bool,
    /// Stop once test accuracy reaches this value (implies per-epoch evaluation).
    #[serde(default)]
    pub stop_at_test_accuracy: Option<f64>,
    #[serde(default = "out_dir")]
    pub out_dir: PathBuf,
}

fn batch_size() -> usize {
    32
}
fn out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Train/dev/test examples of a run.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Option<Dataset>,
    pub test: Dataset,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr >= 0.0) {
            return fail("optimizer.lr must be a non-negative number");
        }
        if let Some(a) = self.stop_at_test_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return fail("stop_at_test_accuracy must lie in [0, 1]");
            }
        }
        match &self.task {
            TaskSpec::Local { train, test, .. } | TaskSpec::Longrange { train, test, .. } => {
                if *train == 0 || *test == 0 {
                    return fail("task.train and task.test must be positive");
                }
            }
            TaskSpec::Tsv {
                max_len, classes, ..
            } => {
                if *max_len == 0 || *classes < 2 {
                    return fail("tsv task needs max_len >= 1 and classes >= 2");
                }
            }
        }
        // Model checks that do not depend on the data.
        let mut probe = ModelConfig::new(2, 2, 1);
        self.apply_model_section(&mut probe);
        probe.validate()
    }

    fn apply_model_section(&self, cfg: &mut ModelConfig) {
        let m = &self.model;
        cfg.d_model = m.d_model;
        cfg.heads = m.heads;
        cfg.head_dim = m.head_dim;
        cfg.d_ff = m.d_ff;
        cfg.mapping = m.mapping;
        cfg.strategy = m.strategy;
        cfg.use_sinusoidal_pos = m.use_sinusoidal_pos;
        cfg.layers = m.layers;
    }

    /// Model configuration for data with the given vocabulary, class count
    /// and maximum length.
    pub fn model_config(
        &self,
        vocab: usize,
        classes: usize,
        max_len: usize,
    ) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(vocab, classes, max_len);
        self.apply_model_section(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the datasets. Synthetic examples are generated in one stream
    /// and cut into train, dev and test in that order.
    pub fn load_data(&self) -> Result<Splits> {
        let synthetic = |ds: Dataset, train: usize, dev: usize| {
            let n = ds.len();
            Splits {
                train: ds.slice(0..train, SplitTag::Train),
                dev: (dev > 0).then(|| ds.slice(train..train + dev, SplitTag::Dev)),
                test: ds.slice(train + dev..n, SplitTag::Test),
            }
        };
        match &self.task {
            TaskSpec::Local {
                seq_len,
                vocab,
                train,
                dev,
                test,
                data_seed,
            } => {
                let ds = gen_local_task(
                    data_seed.unwrap_or(self.seed),
                    train + dev + test,
                    *seq_len,
                    *vocab,
                )?;
                Ok(synthetic(ds, *train, *dev))
            }
            TaskSpec::Longrange {
                seq_len,
                vocab,
                train,
                dev,
                test,
                data_seed,
            } => {
                let ds = gen_longrange_task(
                    data_seed.unwrap_or(self.seed),
                    train + dev + test,
                    *seq_len,
                    *vocab,
                )?;
                Ok(synthetic(ds, *train, *dev))
            }
            TaskSpec::Tsv {
                path,
                vocab_path,
                max_len,
                classes,
                fractions,
            } => {
                let ds = load_tsv(path, vocab_path, *max_len, *classes)?;
                let (train, dev, test) = split(&ds, *fractions, self.seed)?;
                if train.is_empty() || test.is_empty() {
                    return Err(Error::Config("tsv split left train or test empty".into()));
                }
                Ok(Splits {
                    train,
                    dev: (!dev.is_empty()).then_some(dev),
                    test,
                })
            }
        }
    }

    /// Longest sequence the model must accept.
    pub fn max_len(&self) -> usize {
        match &self.task {
            TaskSpec::Local { seq_len, .. } | TaskSpec::Longrange { seq_len, .. } => *seq_len,
            TaskSpec::Tsv { max_len, .. } => *max_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "task": {"kind": "longrange", "seq_len": 8, "vocab": 10, "train": 20, "test": 10},
        "model": {"d_model": 8, "heads": 2, "head_dim": 4, "d_ff": 8},
        "epochs": 1
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert_eq!(cfg.model.strategy, AdjustmentStrategy::EarlyMultiply);
        let splits = cfg.load_data().unwrap();
        assert_eq!((splits.train.len(), splits.test.len()), (20, 10));
        assert!(splits.dev.is_none());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let typo = BASE.replace("\"epochs\"", "\"epoch\"");
        assert!(matches!(
            ExperimentConfig::from_json(&typo),
            Err(Error::Config(_))
        ));
        let nested = BASE.replace("\"d_ff\": 8", "\"d_ff\": 8, \"dropout\": 0.1");
        assert!(ExperimentConfig::from_json(&nested).is_err());
        let bad_dims = BASE.replace("\"d_model\": 8", "\"d_model\": 9");
        assert!(ExperimentConfig::from_json(&bad_dims).is_err());
        let zero = BASE.replace("\"epochs\": 1", "\"epochs\": 0");
        assert!(ExperimentConfig::from_json(&zero).is_err());
        let strategy = BASE.replace("\"d_ff\": 8", "\"d_ff\": 8, \"strategy\": \"early\"");
        assert!(ExperimentConfig::from_json(&strategy).is_err());
    }
}
