//! Experiment configuration: one TOML file of namespaced keys, e.g.
//!
//! ```toml
//! seed = 7
//! trials.heights_mm = [70.0, 45.0, 19.0]
//! train.hidden_size = 32
//! run.modes = ["conventional", "feedback"]
//! ```
//!
//! Every key is optional; omitted keys take their defaults.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::Gains;
use crate::executor::{ExecConfig, HeightStep, Mode};
use crate::metrics::SuccessCriterion;
use crate::model::{ModelConfig, Scheme, TrainConfig};
use crate::sim::{Environment, RobotParams};
use crate::teleop::ExpertConfig;

use super::HarnessError;

/// Demonstrations to collect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialPlan {
    pub heights_mm: Vec<f64>,
    pub per_height: usize,
    /// Trial length, s.
    pub duration: f64,
    /// Control cycles per dataset row.
    pub downsample: usize,
}

impl Default for TrialPlan {
    fn default() -> Self {
        TrialPlan {
            heights_mm: vec![70.0, 45.0, 19.0],
            per_height: 5,
            duration: 13.0,
            downsample: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelGrid {
    pub grid: Vec<ModelConfig>,
}

impl Default for ModelGrid {
    fn default() -> Self {
        let mut grid = vec![ModelConfig { scheme: Scheme::S2M, k: 1 }];
        for scheme in [Scheme::SM2SM, Scheme::S2SM] {
            grid.extend([1, 5, 10].map(|k| ModelConfig { scheme, k }));
        }
        ModelGrid { grid }
    }
}

/// Paper height jumps from `from_mm` to `to_mm` at `at` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub from_mm: f64,
    pub to_mm: f64,
    pub at: f64,
}

/// Autonomous episodes to run for every trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPlan {
    pub heights_mm: Vec<f64>,
    pub modes: Vec<Mode>,
    pub exec: ExecConfig,
    /// Extra episodes with a mid-run height change.
    pub perturbations: Vec<Perturbation>,
    /// Also write the 1 ms slave trace of every episode.
    pub save_traces: bool,
}

impl Default for RunPlan {
    fn default() -> Self {
        RunPlan {
            heights_mm: vec![70.0, 55.0, 45.0, 31.0, 19.0],
            modes: Mode::ALL.to_vec(),
            exec: ExecConfig::default(),
            perturbations: Vec::new(),
            save_traces: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Weights of the θ, θ̇ and τ ratios in the total.
    pub ratio_weights: [f64; 3],
    /// Amplitude statistics skip everything before this time, s.
    pub amplitude_start: f64,
    /// Cycle length for amplitude statistics, s.
    pub amplitude_period: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            ratio_weights: [1.0; 3],
            amplitude_start: 1.5,
            amplitude_period: 3.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub robot: RobotParams,
    pub env: Environment,
    pub gains: Gains,
    pub expert: ExpertConfig,
    pub trials: TrialPlan,
    pub train: TrainConfig,
    pub models: ModelGrid,
    pub run: RunPlan,
    pub criterion: SuccessCriterion,
    pub metrics: MetricsConfig,
}

/// One autonomous episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub model: ModelConfig,
    pub mode: Mode,
    pub height_mm: f64,
    pub perturbation: Option<Perturbation>,
}

impl Cell {
    /// File stem, e.g. `S2SM_k5_feedback_h45` or `S2SM_k1_feedback_h45to31`.
    pub fn label(&self) -> String {
        let base = format!("{}_{}_h{}", self.model.label(), self.mode, self.height_mm);
        match self.perturbation {
            Some(p) => format!("{base}to{}", p.to_mm),
            None => base,
        }
    }

    pub fn height_step(&self) -> Option<HeightStep> {
        self.perturbation.map(|p| HeightStep {
            at: p.at,
            height: p.to_mm / 1000.0,
        })
    }
}

/// Selection from `--filter scheme=..,k=..,height=..,mode=..`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Filter {
    pub scheme: Option<Scheme>,
    pub k: Option<usize>,
    pub height_mm: Option<f64>,
    pub mode: Option<Mode>,
}

impl Filter {
    pub fn parse(text: &str) -> Result<Filter, String> {
        let mut f = Filter::default();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("filter term `{part}` is not key=value"))?;
            let bad = |e: &dyn fmt::Display| format!("filter {key}: {e}");
            match key.trim() {
                "scheme" => f.scheme = Some(value.parse().map_err(|e: String| bad(&e))?),
                "k" => f.k = Some(value.parse().map_err(|e| bad(&e))?),
                "height" | "height_mm" => f.height_mm = Some(value.parse().map_err(|e| bad(&e))?),
                "mode" => f.mode = Some(value.parse().map_err(|e: String| bad(&e))?),
                other => return Err(format!("unknown filter key `{other}`")),
            }
        }
        if f.scheme == Some(Scheme::S2M) && f.mode == Some(Mode::Feedback) {
            return Err("S2M has no slave estimate, so feedback mode is not available".into());
        }
        Ok(f)
    }

    pub fn model(&self, m: &ModelConfig) -> bool {
        self.scheme.map_or(true, |s| s == m.scheme) && self.k.map_or(true, |k| k == m.k)
    }

    pub fn cell(&self, c: &Cell) -> bool {
        self.model(&c.model)
            && self.mode.map_or(true, |m| m == c.mode)
            && self.height_mm.map_or(true, |h| (h - c.height_mm).abs() < 1e-9)
    }
}

fn check_heights(what: &str, heights: &[f64], env: &Environment) -> Result<(), String> {
    for &h in heights {
        env.with_height(h / 1000.0)
            .validate()
            .map_err(|e| format!("{what}: {h} mm: {e}"))?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Validation(format!("config: {e}")))?;
        cfg.validate().map_err(HarnessError::Validation)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.robot.validate().map_err(|e| e.to_string())?;
        self.gains.validate()?;
        self.train.validate()?;
        self.run.exec.validate()?;
        self.criterion.validate()?;
        if !(self.expert.tremor >= 0.0 && self.expert.tremor.is_finite()) {
            return Err("expert.tremor must be finite and >= 0".into());
        }
        if self.trials.per_height == 0 || !(self.trials.duration > 0.0) || self.trials.downsample == 0 {
            return Err("trials: per_height, duration and downsample must be > 0".into());
        }
        check_heights("trials.heights_mm", &self.trials.heights_mm, &self.env)?;
        check_heights("run.heights_mm", &self.run.heights_mm, &self.env)?;
        for m in &self.models.grid {
            m.validate().map_err(|e| format!("models.grid: {}: {e}", m.label()))?;
        }
        let mut seen = self.models.grid.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.grid.len() {
            return Err("models.grid lists a model twice".into());
        }
        for p in &self.run.perturbations {
            check_heights("run.perturbations", &[p.from_mm, p.to_mm], &self.env)?;
            if !(p.at > 0.0 && p.at < self.run.exec.duration) {
                return Err(format!("run.perturbations: switch time {} s is outside the episode", p.at));
            }
        }
        if !(self.metrics.amplitude_period > 0.0 && self.metrics.amplitude_start >= 0.0) {
            return Err("metrics: amplitude_period must be > 0".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization with the seed left out, so
    /// runs differing only in seed share a hash.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { seed: 0, ..self.clone() }.to_toml();
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Every episode of the run stage, in report order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for model in &self.models.grid {
            for mode in &self.run.modes {
                if *mode == Mode::Feedback && !model.scheme.predicts_slave() {
                    continue;
                }
                for &h in &self.run.heights_mm {
                    out.push(Cell { model: *model, mode: *mode, height_mm: h, perturbation: None });
                }
                for p in &self.run.perturbations {
                    out.push(Cell { model: *model, mode: *mode, height_mm: p.from_mm, perturbation: Some(*p) });
                }
            }
        }
        out
    }
}

/// Deterministic sub-seed for a named job.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{tag}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
