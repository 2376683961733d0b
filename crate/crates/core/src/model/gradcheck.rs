//! Central finite-difference check of the rollout-loss gradient.

use super::loss::{rollout_loss, LossError, PairedWindow};
use super::network::SequenceModel;
use super::scheme::Scheme;

/// Step used for the finite differences, in normalized parameter units.
pub const GRAD_CHECK_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error `|a − n| / (|a| + |n| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

/// Compares backpropagated gradients with central differences for every
/// parameter. Meant for small networks.
pub fn grad_check<M: SequenceModel + Clone>(
    model: &M,
    window: &PairedWindow,
    scheme: Scheme,
    k: usize,
) -> Result<GradCheckReport, LossError> {
    let mut analytic = vec![0.0; model.params().len()];
    rollout_loss(model, window, scheme, k, Some(&mut analytic))?;
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + GRAD_CHECK_STEP;
        let up = rollout_loss(&probe, window, scheme, k, None)?;
        probe.params_mut()[i] = orig - GRAD_CHECK_STEP;
        let down = rollout_loss(&probe, window, scheme, k, None)?;
        probe.params_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * GRAD_CHECK_STEP));
    }
    let (worst, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::LinearModel;

    #[test]
    fn unused_weight_has_zero_gradient_both_ways() {
        // All inputs are zero, so only the biases receive gradient.
        let s = [0.0; 4];
        let m = [0.5, 0.1, -0.2, 0.3];
        let w = PairedWindow::new(1, &s, &m);
        let net = LinearModel::new(1, 2, &[0.7, -0.3], &[0.1, 0.2]);
        let rep = grad_check(&net, &w, Scheme::S2SM, 1).unwrap();
        for i in 0..2 {
            assert_eq!(rep.analytic[i], 0.0);
            assert!(rep.numeric[i].abs() < 1e-12);
        }
        assert!(rep.max_rel_error < 1e-6);
    }
}
