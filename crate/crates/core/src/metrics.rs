//! Scores for autonomous runs: estimate-vs-response variances and their
//! conventional/feedback ratios, amplitude reproducibility of the drawing
//! motion, and a pass/fail task check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{AutonomousLog, SlaveSample, StateVec, TickRow};
use crate::joint::NUM_JOINTS;
use crate::sim::{pen_tip, Environment, RobotParams};
use crate::teleop::{ExpertConfig, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("log has no slave predictions (S2M, or too short)")]
    MissingPredictions,
    #[error("feedback variance is zero for {0:?}")]
    DegenerateDenominator(Vec<String>),
    #[error("signal of {samples} samples is shorter than two periods ({needed})")]
    TooShort { samples: usize, needed: usize },
}

pub const QUANTITIES: [&str; 3] = ["theta", "theta_dot", "tau"];

/// Per-joint mean squared estimation error `(1/T) Σ (res − est)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub theta: [f64; NUM_JOINTS],
    pub theta_dot: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
    /// Number of paired rows.
    pub steps: usize,
}

impl VarianceReport {
    pub fn quantity(&self, q: usize) -> [f64; NUM_JOINTS] {
        [self.theta, self.theta_dot, self.tau][q]
    }
}

/// Rows that carry a slave estimate, as `(S_res, Ŝ)` pairs.
pub fn paired_rows(rows: &[TickRow]) -> Vec<(StateVec, StateVec)> {
    rows.iter().filter_map(|r| r.s_hat.map(|s| (r.s_res, s))).collect()
}

pub fn prediction_variance(pairs: &[(StateVec, StateVec)]) -> Result<VarianceReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::MissingPredictions);
    }
    let t = pairs.len() as f64;
    let channel = |c: usize| pairs.iter().map(|(res, est)| (res[c] - est[c]).powi(2)).sum::<f64>() / t;
    Ok(VarianceReport {
        theta: std::array::from_fn(|j| channel(j)),
        theta_dot: std::array::from_fn(|j| channel(NUM_JOINTS + j)),
        tau: std::array::from_fn(|j| channel(2 * NUM_JOINTS + j)),
        steps: pairs.len(),
    })
}

pub fn log_variance(log: &AutonomousLog) -> Result<VarianceReport, MetricsError> {
    prediction_variance(&paired_rows(&log.rows))
}

/// Conventional over feedback variance ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    /// `[quantity][joint]` of `V_conv / V_fb`.
    pub per_joint: [[f64; NUM_JOINTS]; 3],
    pub theta: f64,
    pub theta_dot: f64,
    pub tau: f64,
    pub total: f64,
}

/// Per-quantity ratios are joint means of `V_conv/V_fb`; the total is
/// their weighted sum (unit weights by default).
pub fn variance_ratios(
    conv: &VarianceReport,
    fb: &VarianceReport,
    weights: [f64; 3],
) -> Result<RatioReport, MetricsError> {
    let mut bad = Vec::new();
    for q in 0..3 {
        for j in 0..NUM_JOINTS {
            if !(fb.quantity(q)[j] > 0.0) {
                bad.push(format!("{}[{}]", QUANTITIES[q], j + 1));
            }
        }
    }
    if !bad.is_empty() {
        return Err(MetricsError::DegenerateDenominator(bad));
    }
    let per_joint: [[f64; NUM_JOINTS]; 3] =
        std::array::from_fn(|q| std::array::from_fn(|j| conv.quantity(q)[j] / fb.quantity(q)[j]));
    let mean = |q: usize| per_joint[q].iter().sum::<f64>() / NUM_JOINTS as f64;
    let (theta, theta_dot, tau) = (mean(0), mean(1), mean(2));
    Ok(RatioReport {
        per_joint,
        theta,
        theta_dot,
        tau,
        total: weights[0] * theta + weights[1] * theta_dot + weights[2] * tau,
    })
}

/// Cycle-wise amplitude and window mean of a periodic signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeStats {
    pub amplitude: f64,
    pub mean: f64,
}

/// Samples `[start, start + n·period)` are split into `n` whole cycles; the
/// amplitude is the median over cycles of half the peak-to-peak, the mean
/// is over every sample from `start` on.
pub fn amplitude_stats(
    signal: &[f64],
    dt: f64,
    start: f64,
    period: f64,
) -> Result<AmplitudeStats, MetricsError> {
    let first = (start / dt).round() as usize;
    let per = (period / dt).round() as usize;
    let needed = first + 2 * per;
    if per == 0 || signal.len() < needed {
        return Err(MetricsError::TooShort {
            samples: signal.len(),
            needed,
        });
    }
    let window = &signal[first..];
    let mut halves: Vec<f64> = window
        .chunks_exact(per)
        .map(|c| {
            let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            0.5 * (hi - lo)
        })
        .collect();
    halves.sort_by(f64::total_cmp);
    let m = halves.len();
    let amplitude = if m % 2 == 1 {
        halves[m / 2]
    } else {
        0.5 * (halves[m / 2 - 1] + halves[m / 2])
    };
    Ok(AmplitudeStats {
        amplitude,
        mean: window.iter().sum::<f64>() / window.len() as f64,
    })
}

/// `(|Δamplitude|, |Δmean|)`.
pub fn reproducibility_gap(train: &AmplitudeStats, auto: &AmplitudeStats) -> (f64, f64) {
    ((train.amplitude - auto.amplitude).abs(), (train.mean - auto.mean).abs())
}

/// Task-success thresholds. Calibrated so that every demonstration passes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessCriterion {
    /// Acceptable normal force, N.
    pub force_low: f64,
    pub force_high: f64,
    /// Fraction of the drawing window the force must stay in band.
    pub duty: f64,
    /// Distance within which the pen must pass each waypoint, m.
    pub waypoint_tol: f64,
    /// Largest allowed joint speed, rad/s.
    pub velocity_bound: f64,
    /// Start of the drawing window, s.
    pub window_start: f64,
    /// Waypoints are checked once per period of this length, s.
    pub period: f64,
}

impl Default for SuccessCriterion {
    fn default() -> Self {
        SuccessCriterion {
            force_low: 0.5,
            force_high: 3.0,
            duty: 0.9,
            waypoint_tol: 0.005,
            velocity_bound: 10.0,
            window_start: 1.5,
            period: 3.0,
        }
    }
}

impl SuccessCriterion {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.force_low && self.force_low < self.force_high) {
            return Err("force band must satisfy 0 <= low < high".into());
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(format!("duty must lie in (0, 1], got {}", self.duty));
        }
        if !(self.waypoint_tol > 0.0 && self.velocity_bound > 0.0 && self.period > 0.0 && self.window_start >= 0.0) {
            return Err("tolerances, bound and period must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub success: bool,
    pub reason: Option<String>,
    /// Fraction of the window with the force in band.
    pub force_duty: f64,
}

/// Success iff the episode completed, stayed under the speed bound, kept
/// the force in band for the duty fraction and passed both waypoints in
/// every whole period of the drawing window. The reason names the first
/// failed check in the order divergence, contact, speed, force, waypoints.
pub fn success_check(
    trace: &[SlaveSample],
    dt: f64,
    divergence: Option<&str>,
    expert: &ExpertConfig,
    params: &RobotParams,
    env: &Environment,
    crit: &SuccessCriterion,
) -> SuccessReport {
    let fail = |reason: String, force_duty: f64| SuccessReport {
        success: false,
        reason: Some(reason),
        force_duty,
    };
    if let Some(d) = divergence {
        return fail(d.to_string(), 0.0);
    }
    let first = (crit.window_start / dt).round() as usize;
    let window = trace.get(first..).unwrap_or(&[]);
    if window.is_empty() {
        return fail("episode shorter than the drawing window start".into(), 0.0);
    }
    let touching = window.iter().filter(|s| s.contact_normal > 0.0).count();
    let in_band = window
        .iter()
        .filter(|s| (crit.force_low..=crit.force_high).contains(&s.contact_normal))
        .count();
    let force_duty = in_band as f64 / window.len() as f64;
    if touching == 0 {
        return fail("no contact".into(), force_duty);
    }
    if let Some((i, s)) = trace
        .iter()
        .enumerate()
        .find(|(_, s)| s.slave.theta_dot.max_abs() > crit.velocity_bound)
    {
        let v = s.slave.theta_dot.max_abs();
        return fail(format!("velocity bound exceeded at t = {:.3} s ({v:.2} rad/s)", i as f64 * dt), force_duty);
    }
    if force_duty < crit.duty {
        return fail(
            format!("force in band for {:.1}% < {:.1}%", 100.0 * force_duty, 100.0 * crit.duty),
            force_duty,
        );
    }
    let per = (crit.period / dt).round() as usize;
    for (c, cycle) in window.chunks_exact(per).enumerate() {
        let mut best = [f64::INFINITY; 2];
        for s in cycle {
            let env_h = env.with_height(s.paper_height);
            let tip = pen_tip(s.slave.theta, params, &env_h);
            for (w, p) in expert.waypoints(s.paper_height).iter().enumerate() {
                let d = ((tip[0] - p[0]).powi(2) + (tip[1] - p[1]).powi(2) + (tip[2] - p[2]).powi(2)).sqrt();
                best[w] = best[w].min(d);
            }
        }
        for (w, name) in ["A", "B"].iter().enumerate() {
            if best[w] > crit.waypoint_tol {
                let t0 = crit.window_start + c as f64 * crit.period;
                return fail(
                    format!("missed waypoint {name} in cycle at {t0:.1} s by {:.1} mm", 1000.0 * best[w]),
                    force_duty,
                );
            }
        }
    }
    SuccessReport {
        success: true,
        reason: None,
        force_duty,
    }
}

pub fn log_success(
    log: &AutonomousLog,
    expert: &ExpertConfig,
    params: &RobotParams,
    env: &Environment,
    crit: &SuccessCriterion,
) -> SuccessReport {
    let div = log.divergence.as_ref().map(|d| d.to_string());
    success_check(&log.trace, log.dt, div.as_deref(), expert, params, env, crit)
}

/// Slave trace of a demonstration, for scoring it like an autonomous run.
pub fn trajectory_trace(traj: &Trajectory) -> Vec<SlaveSample> {
    traj.steps
        .iter()
        .map(|s| SlaveSample {
            slave: s.slave,
            contact_normal: s.contact_normal,
            paper_height: traj.paper_height,
        })
        .collect()
}
