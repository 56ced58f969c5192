use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::model::{EvalMetrics, ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev: Option<EvalMetrics>,
    pub test: Option<EvalMetrics>,
}

/// Learned distance parameters of one layer, in head order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerHeads {
    pub layer: usize,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

impl LayerHeads {
    pub fn from_params(params: &ModelParams) -> Vec<LayerHeads> {
        (0..params.blocks.len())
            .map(|layer| {
                let d = params.distance_params(layer);
                LayerHeads {
                    layer,
                    w: d.iter().map(|p| p.w).collect(),
                    v: d.iter().map(|p| p.v).collect(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub model: ModelConfig,
    pub epochs_completed: usize,
    pub stopped_early: bool,
    pub epochs: Vec<EpochRecord>,
    pub final_dev: Option<EvalMetrics>,
    pub final_test: EvalMetrics,
    pub heads: Vec<LayerHeads>,
    /// Wall-clock seconds per epoch; the only non-deterministic field.
    pub epoch_seconds: Vec<f64>,
}

/// Short hex digest of the config (which includes the seed).
pub fn run_id(config: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&json);
    Ok(digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with timing removed, for reproducibility comparisons.
    pub fn canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.epoch_seconds.clear();
        copy.to_json()
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,train_accuracy,dev_accuracy,dev_macro_f,test_accuracy,test_macro_f,seconds\n",
        );
        let opt = |m: Option<EvalMetrics>| match m {
            Some(m) => format!("{},{}", m.accuracy, m.macro_f),
            None => ",".to_string(),
        };
        for (i, e) in self.epochs.iter().enumerate() {
            let secs = self
                .epoch_seconds
                .get(i)
                .map(|s| format!("{s:.3}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.dev),
                opt(e.test),
                secs
            );
        }
        out
    }
}
