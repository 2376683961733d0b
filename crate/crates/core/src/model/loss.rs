//! k-step rollout loss of the three training graphs, with gradients by
//! backpropagation through the whole rollout.
//!
//! A window of `L` paired rows gives `L − 1` prediction steps. Steps are
//! grouped into rollouts of `k`: the first step of a rollout reads measured
//! data, later steps read the model's own previous prediction (the whole
//! `(Ŝ, M̂)` for SM2SM, only `Ŝ` for S2SM). The hidden state runs through
//! the whole window. The loss is the per-step mean squared error, summed
//! within each rollout and averaged over rollouts.

use thiserror::Error;

use super::network::SequenceModel;
use super::scheme::Scheme;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("window of {rows} rows is too short for k = {k} (need >= k + 1)")]
    WindowTooShort { rows: usize, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Row-major paired slave/master samples in normalized space.
#[derive(Clone, Copy, Debug)]
pub struct PairedWindow<'a> {
    pub dim: usize,
    pub slave: &'a [f64],
    pub master: &'a [f64],
}

impl<'a> PairedWindow<'a> {
    pub fn new(dim: usize, slave: &'a [f64], master: &'a [f64]) -> Self {
        assert_eq!(slave.len(), master.len(), "slave/master length differ");
        assert_eq!(slave.len() % dim, 0, "ragged window");
        PairedWindow { dim, slave, master }
    }

    pub fn rows(&self) -> usize {
        self.slave.len() / self.dim
    }

    pub fn slave_row(&self, t: usize) -> &'a [f64] {
        &self.slave[t * self.dim..(t + 1) * self.dim]
    }

    pub fn master_row(&self, t: usize) -> &'a [f64] {
        &self.master[t * self.dim..(t + 1) * self.dim]
    }
}

/// Number of rollouts a window of `rows` rows splits into.
pub fn rollout_count(rows: usize, k: usize) -> usize {
    (rows - 1).div_ceil(k)
}

/// Input to step `t`, given the previous prediction.
fn build_input(scheme: Scheme, w: &PairedWindow, t: usize, k: usize, prev_y: &[f64], x: &mut [f64]) {
    let d = w.dim;
    let measured = t % k == 0;
    match scheme {
        Scheme::S2M => x.copy_from_slice(w.slave_row(t)),
        Scheme::SM2SM if measured => {
            x[..d].copy_from_slice(w.slave_row(t));
            x[d..].copy_from_slice(w.master_row(t));
        }
        Scheme::SM2SM => x.copy_from_slice(prev_y),
        Scheme::S2SM if measured => x.copy_from_slice(w.slave_row(t)),
        Scheme::S2SM => x.copy_from_slice(&prev_y[..d]),
    }
}

fn build_target(scheme: Scheme, w: &PairedWindow, t: usize, target: &mut [f64]) {
    let d = w.dim;
    match scheme {
        Scheme::S2M => target.copy_from_slice(w.master_row(t + 1)),
        Scheme::SM2SM | Scheme::S2SM => {
            target[..d].copy_from_slice(w.slave_row(t + 1));
            target[d..].copy_from_slice(w.master_row(t + 1));
        }
    }
}

/// Loss of one window; when `grads` is given, its gradient is added to it.
pub fn rollout_loss<M: SequenceModel>(
    model: &M,
    window: &PairedWindow,
    scheme: Scheme,
    k: usize,
    grads: Option<&mut [f64]>,
) -> Result<f64, LossError> {
    let rows = window.rows();
    if k == 0 || rows < k + 1 {
        return Err(LossError::WindowTooShort { rows, k });
    }
    let (n_in, n_out) = (scheme.input_dim(window.dim), scheme.output_dim(window.dim));
    if model.input_dim() != n_in || model.output_dim() != n_out {
        return Err(LossError::ShapeMismatch(format!(
            "{scheme} with state width {} needs {n_in}→{n_out}, model is {}→{}",
            window.dim,
            model.input_dim(),
            model.output_dim()
        )));
    }
    if let Some(g) = &grads {
        if g.len() != model.params().len() {
            return Err(LossError::ShapeMismatch("gradient buffer length".into()));
        }
    }

    let steps = rows - 1;
    let n_h = model.hidden_len();
    let scale = 1.0 / (n_out as f64 * rollout_count(rows, k) as f64);

    let mut hidden = vec![0.0; (steps + 1) * n_h];
    let mut ys = vec![0.0; steps * n_out];
    let mut residuals = vec![0.0; steps * n_out];
    let mut caches = vec![M::Cache::default(); steps];
    let mut x = vec![0.0; n_in];
    let mut target = vec![0.0; n_out];
    let mut sum_sq = 0.0;

    for t in 0..steps {
        let prev_y = if t == 0 { &[][..] } else { &ys[(t - 1) * n_out..t * n_out] };
        build_input(scheme, window, t, k, prev_y, &mut x);
        let (h_done, h_rest) = hidden.split_at_mut((t + 1) * n_h);
        let y = &mut ys[t * n_out..(t + 1) * n_out];
        model.step(&x, &h_done[t * n_h..], y, &mut h_rest[..n_h], &mut caches[t]);
        build_target(scheme, window, t, &mut target);
        for j in 0..n_out {
            let r = y[j] - target[j];
            residuals[t * n_out + j] = r;
            sum_sq += r * r;
        }
    }
    let loss = sum_sq * scale;

    if let Some(grads) = grads {
        let mut dh = vec![0.0; n_h];
        let mut dh_prev = vec![0.0; n_h];
        let mut carry = vec![0.0; n_out];
        let mut dy = vec![0.0; n_out];
        let mut dx = vec![0.0; n_in];
        for t in (0..steps).rev() {
            for j in 0..n_out {
                dy[j] = 2.0 * scale * residuals[t * n_out + j] + carry[j];
            }
            model.step_backward(&caches[t], &dy, &dh, grads, &mut dx, &mut dh_prev);
            std::mem::swap(&mut dh, &mut dh_prev);
            carry.iter_mut().for_each(|c| *c = 0.0);
            if t % k != 0 && scheme != Scheme::S2M {
                // This step's input was the previous prediction.
                carry[..n_in].copy_from_slice(&dx);
            }
        }
    }
    Ok(loss)
}
