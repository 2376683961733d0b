//! Self-describing JSON checkpoints and loss-curve CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{GruNetwork, GruShape};
use super::scheme::Scheme;
use super::train::{ModelConfig, TrainedModel};
use crate::joint::STATE_DIM;
use crate::provenance::Provenance;
use crate::teleop::NormStats;

pub const CHECKPOINT_FORMAT: &str = "bilateral-seq-model/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: invalid checkpoint: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub k: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub stats: NormStats,
    pub initial_master: [f64; STATE_DIM],
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_trained(m: &TrainedModel, prov: &Provenance) -> Self {
        let s = m.network.shape;
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config_hash: prov.config_hash.clone(),
            seed: prov.seed,
            scheme: m.model.scheme,
            k: m.model.k,
            input_dim: s.input,
            output_dim: s.output,
            hidden_size: s.hidden,
            num_layers: s.layers,
            epochs: m.loss_curve.len(),
            final_loss: m.loss_curve.last().copied(),
            stats: m.stats.clone(),
            initial_master: m.initial_master,
            params: m.network.params.clone(),
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            scheme: self.scheme,
            k: self.k,
        }
    }

    pub fn network(&self) -> GruNetwork {
        GruNetwork {
            shape: GruShape {
                input: self.input_dim,
                hidden: self.hidden_size,
                layers: self.num_layers,
                output: self.output_dim,
            },
            params: self.params.clone(),
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(format!("unsupported format `{}`", self.format));
        }
        self.scheme.validate_k(self.k)?;
        if self.input_dim != self.scheme.input_dim(STATE_DIM)
            || self.output_dim != self.scheme.output_dim(STATE_DIM)
        {
            return Err(format!("dims {}→{} do not match {}", self.input_dim, self.output_dim, self.scheme));
        }
        if self.hidden_size == 0 || self.num_layers == 0 {
            return Err("empty network".into());
        }
        let want = self.network().shape.num_params();
        if self.params.len() != want {
            return Err(format!("{} parameters, expected {want}", self.params.len()));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        fs::write(path, text + "\n").map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let invalid = |message: String| CheckpointError::Invalid {
            path: path.display().to_string(),
            message,
        };
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        ckpt.check().map_err(invalid)?;
        Ok(ckpt)
    }
}

pub fn render_loss_curve(curve: &[f64], prov: &Provenance) -> String {
    let mut out = format!("{prov}\nepoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, l).unwrap();
    }
    out
}
