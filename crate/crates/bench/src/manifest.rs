//! JSON record of one finished run.

use std::fs;
use std::path::Path;

use pcode_core::train::EvalMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub test_mse: f64,
    pub sample_mse: f64,
    pub mean_dt: f64,
    pub mean_dt_star: f64,
    pub cell_updates_per_seq: f64,
    pub function_evals_per_seq: f64,
}

impl From<EvalMetrics> for Metrics {
    fn from(m: EvalMetrics) -> Self {
        Self {
            test_mse: m.test_mse,
            sample_mse: m.sample_mse,
            mean_dt: m.mean_dt,
            mean_dt_star: m.mean_dt_star,
            cell_updates_per_seq: m.cell_updates_per_seq,
            function_evals_per_seq: m.function_evals_per_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub held_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Training {
    /// Prediction loss of every optimizer step.
    pub loss_curve: Vec<f64>,
    /// Mean optimal step of every optimizer step.
    pub dt_star_curve: Vec<f64>,
    /// `(step, held-out loss)` at each early-stopping evaluation.
    pub valid_curve: Vec<(usize, f64)>,
    pub eval_every: usize,
    pub patience: usize,
    pub best_step: usize,
    pub steps_run: usize,
    /// Teacher-forced loss on the training split with the kept weights.
    pub final_train_loss: f64,
}

/// Wall-clock times are deliberately absent so that repeated runs produce
/// identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Ordered `(key, value)` snapshot of the config.
    pub config: Vec<(String, String)>,
    pub config_hash: String,
    pub task: String,
    pub model: String,
    pub epsilon: f64,
    /// `value` or `baseline:<run id>`.
    pub epsilon_source: String,
    pub split: Split,
    pub training: Training,
    /// Held-out metrics of the saved weights.
    pub metrics: Metrics,
    /// Checkpoint file name, relative to the manifest.
    pub checkpoint: String,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Config snapshot back in text form.
    pub fn config_text(&self) -> String {
        self.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
