//! Minibatch training over shuffled windows of the normalized dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{rollout_loss, LossError, PairedWindow};
use super::network::{GruNetwork, GruShape, SequenceModel};
use super::optim::{clip_grad_norm, Adam};
use super::scheme::Scheme;
use crate::joint::STATE_DIM;
use crate::teleop::{Dataset, NormStats};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("dataset yields no training windows (window {window}, k {k})")]
    NoWindows { window: usize, k: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Hyperparameters shared by every (scheme, k) job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    /// `[k, epochs]` pairs; a k without an entry uses the closest smaller k.
    pub epoch_schedule: Vec<[usize; 2]>,
    pub learning_rate: f64,
    /// Window length in 20 ms rows.
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 64,
            num_layers: 2,
            epoch_schedule: vec![[1, 1000], [5, 3000], [10, 4000]],
            learning_rate: 1e-3,
            window: 100,
            stride: 10,
            batch_size: 16,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn epochs_for(&self, k: usize) -> usize {
        let mut sched = self.epoch_schedule.clone();
        sched.sort();
        sched
            .iter()
            .rev()
            .find(|[kk, _]| *kk <= k)
            .or(sched.first())
            .map_or(0, |[_, e]| *e)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_size == 0 || self.num_layers == 0 {
            return Err("hidden_size and num_layers must be >= 1".into());
        }
        if self.window < 2 || self.stride == 0 || self.batch_size == 0 {
            return Err("window must be >= 2, stride and batch_size >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err("learning_rate and grad_clip must be > 0".into());
        }
        Ok(())
    }
}

/// One training job.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scheme: Scheme,
    pub k: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.scheme.validate_k(self.k)
    }

    /// File-name friendly label, e.g. `S2SM_k5`.
    pub fn label(&self) -> String {
        format!("{}_k{}", self.scheme, self.k)
    }
}

/// A trained network together with everything needed to run it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: ModelConfig,
    pub network: GruNetwork,
    pub stats: NormStats,
    /// Mean measured master state at the start of the demonstrations.
    pub initial_master: [f64; STATE_DIM],
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

/// Normalized trial as flat row-major arrays.
struct NormalizedTrial {
    slave: Vec<f64>,
    master: Vec<f64>,
    rows: usize,
}

fn normalize(ds: &Dataset) -> Vec<NormalizedTrial> {
    ds.trials
        .iter()
        .map(|t| NormalizedTrial {
            slave: t.slave.iter().flat_map(|r| ds.stats.normalize_slave(r)).collect(),
            master: t.master.iter().flat_map(|r| ds.stats.normalize_master(r)).collect(),
            rows: t.len(),
        })
        .collect()
}

/// `(trial, first_row, rows)` of every training window.
fn windows(trials: &[NormalizedTrial], window: usize, stride: usize, k: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        if t.rows >= window {
            let mut start = 0;
            while start + window <= t.rows {
                out.push((i, start, window));
                start += stride;
            }
        } else if t.rows > k {
            out.push((i, 0, t.rows));
        }
    }
    out
}

/// Trains one (scheme, k) model. Deterministic given `seed`; `on_epoch`
/// receives the mean window loss of every epoch.
pub fn train(
    ds: &Dataset,
    model: ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel, TrainError> {
    model.validate().map_err(TrainError::InvalidConfig)?;
    cfg.validate().map_err(TrainError::InvalidConfig)?;
    let shape = GruShape {
        input: model.scheme.input_dim(STATE_DIM),
        hidden: cfg.hidden_size,
        layers: cfg.num_layers,
        output: model.scheme.output_dim(STATE_DIM),
    };
    let mut network = GruNetwork::init(shape, seed);
    let trials = normalize(ds);
    let mut order = windows(&trials, cfg.window, cfg.stride, model.k);
    if order.is_empty() {
        return Err(TrainError::NoWindows {
            window: cfg.window,
            k: model.k,
        });
    }

    let epochs = cfg.epochs_for(model.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut opt = Adam::new(network.params.len(), cfg.learning_rate);
    let mut grads = vec![0.0; network.params.len()];
    let mut loss_curve = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &(ti, start, rows) in batch {
                let t = &trials[ti];
                let span = start * STATE_DIM..(start + rows) * STATE_DIM;
                let w = PairedWindow::new(STATE_DIM, &t.slave[span.clone()], &t.master[span]);
                epoch_loss += rollout_loss(&network, &w, model.scheme, model.k, Some(&mut grads))?;
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= inv);
            clip_grad_norm(&mut grads, cfg.grad_clip);
            opt.step(network.params_mut(), &grads);
        }
        let mean = epoch_loss / order.len() as f64;
        if !mean.is_finite() || network.params.iter().any(|p| !p.is_finite()) {
            return Err(TrainError::DivergedLoss { epoch });
        }
        loss_curve.push(mean);
        on_epoch(epoch, mean);
    }

    Ok(TrainedModel {
        model,
        network,
        stats: ds.stats.clone(),
        initial_master: ds.initial_master_mean(),
        loss_curve,
        seed,
    })
}

/// Mean window loss of `net` over the whole dataset (no training).
pub fn evaluate_loss(
    ds: &Dataset,
    net: &GruNetwork,
    model: ModelConfig,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let trials = normalize(ds);
    let order = windows(&trials, cfg.window, cfg.stride, model.k);
    if order.is_empty() {
        return Err(TrainError::NoWindows {
            window: cfg.window,
            k: model.k,
        });
    }
    let mut total = 0.0;
    for &(ti, start, rows) in &order {
        let t = &trials[ti];
        let span = start * STATE_DIM..(start + rows) * STATE_DIM;
        let w = PairedWindow::new(STATE_DIM, &t.slave[span.clone()], &t.master[span]);
        total += rollout_loss(net, &w, model.scheme, model.k, None)?;
    }
    Ok(total / order.len() as f64)
}
