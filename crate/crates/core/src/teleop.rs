//! Scripted demonstrations under four-channel bilateral control.
//!
//! A scripted operator drives the master robot; the slave, holding the pen,
//! follows through the bilateral law and draws arcs on the paper. Trials
//! are recorded at the 1 ms control cycle and decimated to the 20 ms
//! learning rate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{bilateral_refs, Gains, ObserverState};
use crate::joint::{JointVector, RobotState, STATE_DIM};
use crate::sim::{
    contact, inverse_kinematics, jacobian, step_joint_dynamics, Encoder, Environment, RobotParams, SimError,
    CONTROL_DT,
};

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("simulation diverged at t = {t_ms} ms: {reason}")]
    SimulationDiverged { t_ms: u64, reason: String },
    #[error("trajectory of {len} steps cannot be decimated by {factor}")]
    LengthMismatch { len: usize, factor: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("invalid trial: {0}")]
    InvalidTrial(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Shape of the scripted operator's motion, shared by all trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Horizontal distance of the drawn arc from the base axis, m.
    pub radius: f64,
    /// Joint-1 angle of waypoints A (+) and B (−), rad.
    pub arc_angle: f64,
    /// Nominal sweep period, s.
    pub period: f64,
    /// Pen-tip height of the start pose, m.
    pub hover_height: f64,
    /// Length of the approach phase, s.
    pub approach_time: f64,
    /// Pen-tip descent speed during the approach, m/s.
    pub descent_speed: f64,
    /// How far below the paper surface the operator aims the pen, m.
    pub press_depth: f64,
    /// Nominal downward press applied through the master, N.
    pub press_force: f64,
    /// Time over which the press force and sweep amplitude ramp in, s.
    pub ramp_time: f64,
    /// Operator joint stiffness, N·m/rad.
    pub hand_stiffness: f64,
    /// Operator joint damping, N·m·s/rad.
    pub hand_damping: f64,
    /// Relative trial-to-trial jitter on amplitude, period and force.
    pub amplitude_jitter: f64,
    pub period_jitter: f64,
    pub force_jitter: f64,
    /// RMS of the hand tremor added to every joint torque, N·m.
    pub tremor: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            radius: 0.18,
            arc_angle: 0.35,
            period: 3.0,
            hover_height: 0.09,
            approach_time: 1.0,
            descent_speed: 0.08,
            press_depth: 0.002,
            press_force: 1.2,
            ramp_time: 0.5,
            hand_stiffness: 3.0,
            hand_damping: 0.15,
            amplitude_jitter: 0.02,
            period_jitter: 0.05,
            force_jitter: 0.1,
            tremor: 0.0,
        }
    }
}

impl ExpertConfig {
    /// Both robots start here, at rest.
    pub fn start_pose(&self, params: &RobotParams, env: &Environment) -> JointVector {
        inverse_kinematics(0.0, self.radius, self.hover_height + env.pen_length, params)
            .expect("start pose out of reach")
    }

    /// Pen-tip positions of waypoints A and B on the paper.
    pub fn waypoints(&self, paper_height: f64) -> [[f64; 3]; 2] {
        let at = |yaw: f64| [self.radius * yaw.cos(), self.radius * yaw.sin(), paper_height];
        [at(self.arc_angle), at(-self.arc_angle)]
    }
}

/// One demonstration trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub paper_height: f64,
    pub duration: f64,
    pub seed: u64,
}

impl TrialSpec {
    pub fn steps(&self) -> usize {
        (self.duration / CONTROL_DT).round() as usize
    }
}

/// Sinusoids summed per joint to make the tremor.
const TREMOR_TONES: usize = 6;
/// Tremor frequency band, Hz.
const TREMOR_BAND: (f64, f64) = (1.0, 8.0);

/// Operator script for one trial, with jitter already drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertPlan {
    pub config: ExpertConfig,
    pub amplitude: f64,
    pub period: f64,
    pub press_force: f64,
    pub paper_height: f64,
    pen_length: f64,
    params: RobotParams,
    /// `(frequency, phase)` of each tremor tone, per joint.
    tones: [[(f64, f64); TREMOR_TONES]; 3],
}

impl ExpertPlan {
    pub fn new(
        config: &ExpertConfig,
        spec: &TrialSpec,
        params: &RobotParams,
        env: &Environment,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut jitter = |rel: f64| 1.0 + rel * rng.gen_range(-1.0..=1.0);
        let amplitude = config.arc_angle * jitter(config.amplitude_jitter);
        let period = config.period * jitter(config.period_jitter);
        let press_force = config.press_force * jitter(config.force_jitter);
        let mut tones = [[(0.0, 0.0); TREMOR_TONES]; 3];
        for tone in tones.iter_mut().flatten() {
            *tone = (rng.gen_range(TREMOR_BAND.0..TREMOR_BAND.1), rng.gen_range(0.0..2.0 * PI));
        }
        ExpertPlan {
            config: *config,
            amplitude,
            period,
            press_force,
            paper_height: spec.paper_height,
            pen_length: env.pen_length,
            params: *params,
            tones,
        }
    }

    /// Hand tremor at `t`. Random tone phases give each joint an expected RMS
    /// of `config.tremor`.
    pub fn tremor(&self, t: f64) -> JointVector {
        let scale = self.config.tremor * (2.0 / TREMOR_TONES as f64).sqrt();
        JointVector(self.tones.map(|tones| {
            scale * tones.iter().map(|&(f, phi)| (2.0 * PI * f * t + phi).sin()).sum::<f64>()
        }))
    }

    fn ramp(&self, t: f64) -> f64 {
        let x = ((t - self.config.approach_time) / self.config.ramp_time).clamp(0.0, 1.0);
        x * x * (3.0 - 2.0 * x)
    }

    /// Reference joint angles at time `t`.
    pub fn reference(&self, t: f64) -> JointVector {
        let c = &self.config;
        let floor = self.paper_height - c.press_depth;
        let tip_z = (c.hover_height - c.descent_speed * t).max(floor);
        let yaw = if t > c.approach_time {
            self.amplitude
                * self.ramp(t)
                * (2.0 * PI * (t - c.approach_time) / self.period).sin()
        } else {
            0.0
        };
        inverse_kinematics(yaw, c.radius, tip_z + self.pen_length, &self.params)
            .expect("reference out of reach")
    }

    pub fn reference_velocity(&self, t: f64) -> JointVector {
        let h = 1e-5;
        (self.reference(t + h) - self.reference((t - h).max(0.0))) * (1.0 / (t + h - (t - h).max(0.0)))
    }

    /// Downward press expressed as joint torques at `theta`.
    pub fn press_bias(&self, t: f64, theta: JointVector) -> JointVector {
        let force = self.press_force * self.ramp(t);
        let jz = jacobian(theta, &self.params)[2];
        JointVector(jz) * (-force)
    }
}

/// Torque the operator's hand applies to the master at time `t`.
pub fn expert_action(t: f64, plan: &ExpertPlan, master: &RobotState) -> JointVector {
    let c = &plan.config;
    let error = plan.reference(t) - master.theta;
    let error_dot = plan.reference_velocity(t) - master.theta_dot;
    error * c.hand_stiffness
        + error_dot * c.hand_damping
        + plan.press_bias(t, master.theta)
        + plan.tremor(t)
}

/// One recorded control cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrajectoryStep {
    /// Measured master response.
    pub master: RobotState,
    /// Measured slave response.
    pub slave: RobotState,
    pub tau_ref_master: JointVector,
    pub tau_ref_slave: JointVector,
    /// Ground-truth slave contact, for evaluation only.
    pub contact_normal: f64,
    pub tau_ext_slave: JointVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub paper_height: f64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Velocity beyond which a rollout counts as diverged, rad/s.
pub const DIVERGENCE_SPEED: f64 = 50.0;

/// Seed offsets separating the two encoders from the jitter stream.
const ENCODER_STREAM_MASTER: u64 = 0x6d61_7374_6572;
const ENCODER_STREAM_SLAVE: u64 = 0x736c_6176_65;

/// Runs one bilateral teleoperation trial at the 1 ms control cycle.
pub fn collect_trial(
    spec: &TrialSpec,
    expert: &ExpertConfig,
    params: &RobotParams,
    env: &Environment,
    gains: &Gains,
) -> Result<Trajectory, TeleopError> {
    if !(spec.duration > 0.0) {
        return Err(TeleopError::InvalidTrial("duration must be > 0".into()));
    }
    let env = env.with_height(spec.paper_height);
    env.validate()?;
    params.validate()?;
    let plan = ExpertPlan::new(expert, spec, params, &env);
    let start = expert.start_pose(params, &env);

    let mut plant_m = RobotState::at_rest(start);
    let mut plant_s = RobotState::at_rest(start);
    let mut obs_m = ObserverState::new();
    let mut obs_s = ObserverState::new();
    let mut enc_m = Encoder::new(params.encoder_noise, spec.seed ^ ENCODER_STREAM_MASTER);
    let mut enc_s = Encoder::new(params.encoder_noise, spec.seed ^ ENCODER_STREAM_SLAVE);
    let n = spec.steps();
    let mut steps = Vec::with_capacity(n);

    for k in 0..n {
        let t = k as f64 * CONTROL_DT;
        let meas_m = obs_m.measure(enc_m.read(plant_m.theta), params, gains, CONTROL_DT);
        let meas_s = obs_s.measure(enc_s.read(plant_s.theta), params, gains, CONTROL_DT);
        let (ref_m, ref_s) = bilateral_refs(&meas_m, &meas_s, gains, params.inertia);
        let u_m = obs_m.actuate(ref_m);
        let u_s = obs_s.actuate(ref_s);

        let hand = expert_action(t, &plan, &plant_m);
        let touch = contact(plant_s.theta, plant_s.theta_dot, params, &env);
        steps.push(TrajectoryStep {
            master: meas_m,
            slave: meas_s,
            tau_ref_master: ref_m,
            tau_ref_slave: ref_s,
            contact_normal: touch.normal,
            tau_ext_slave: touch.tau_ext,
        });

        // The hand assists the master, i.e. the master pushes back with −hand.
        plant_m = step_joint_dynamics(&plant_m, u_m, -hand, params, CONTROL_DT)?;
        plant_s = step_joint_dynamics(&plant_s, u_s, touch.tau_ext, params, CONTROL_DT)?;
        let speed = plant_m.theta_dot.max_abs().max(plant_s.theta_dot.max_abs());
        if speed > DIVERGENCE_SPEED {
            return Err(TeleopError::SimulationDiverged {
                t_ms: k as u64,
                reason: format!("joint speed {speed:.1} rad/s"),
            });
        }
    }
    Ok(Trajectory {
        dt: CONTROL_DT,
        paper_height: spec.paper_height,
        steps,
    })
}

/// How well a trial met the bilateral goals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilateralResidual {
    /// Fraction of post-settling steps with every |θm − θs| below tolerance.
    pub position_ok: f64,
    /// Fraction of contact steps with every |τm + τs| below tolerance.
    pub force_ok: f64,
    pub max_position_error: f64,
    pub contact_steps: usize,
}

pub fn bilateral_residual(
    traj: &Trajectory,
    settle: f64,
    position_tol: f64,
    force_tol: f64,
) -> BilateralResidual {
    let first = (settle / traj.dt).round() as usize;
    let (mut checked, mut pos_ok, mut contact_steps, mut force_ok) = (0usize, 0usize, 0usize, 0usize);
    let mut max_err = 0.0_f64;
    for step in traj.steps.iter().skip(first) {
        let err = (step.master.theta - step.slave.theta).max_abs();
        max_err = max_err.max(err);
        checked += 1;
        if err < position_tol {
            pos_ok += 1;
        }
        if step.contact_normal > 0.0 {
            contact_steps += 1;
            if (step.master.tau + step.slave.tau).max_abs() < force_tol {
                force_ok += 1;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    BilateralResidual {
        position_ok: frac(pos_ok, checked),
        force_ok: frac(force_ok, contact_steps),
        max_position_error: max_err,
        contact_steps,
    }
}

/// Decimated paired sequence of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub height_mm: f64,
    /// Sample spacing, ms.
    pub step_ms: u64,
    pub slave: Vec<[f64; STATE_DIM]>,
    pub master: Vec<[f64; STATE_DIM]>,
}

impl TrialRecord {
    pub fn len(&self) -> usize {
        self.slave.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slave.is_empty()
    }
}

/// Keeps every `factor`-th sample, starting with the first.
pub fn downsample(
    traj: &Trajectory,
    factor: usize,
    trial: usize,
) -> Result<TrialRecord, TeleopError> {
    if factor == 0 || traj.len() % factor != 0 {
        return Err(TeleopError::LengthMismatch {
            len: traj.len(),
            factor,
        });
    }
    let picked = traj.steps.iter().step_by(factor);
    let (slave, master) = picked.map(|s| (s.slave.to_array(), s.master.to_array())).unzip();
    Ok(TrialRecord {
        trial,
        height_mm: (traj.paper_height * 1000.0 * 1e6).round() / 1e6,
        step_ms: (traj.dt * 1000.0 * factor as f64).round() as u64,
        slave,
        master,
    })
}

/// Smallest standard deviation used for normalization.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel z-score statistics for both robots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub slave_mean: [f64; STATE_DIM],
    pub slave_std: [f64; STATE_DIM],
    pub master_mean: [f64; STATE_DIM],
    pub master_std: [f64; STATE_DIM],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            slave_mean: [0.0; STATE_DIM],
            slave_std: [1.0; STATE_DIM],
            master_mean: [0.0; STATE_DIM],
            master_std: [1.0; STATE_DIM],
        }
    }

    pub fn normalize_slave(&self, x: &[f64]) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| (x[i] - self.slave_mean[i]) / self.slave_std[i])
    }

    pub fn normalize_master(&self, x: &[f64]) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| (x[i] - self.master_mean[i]) / self.master_std[i])
    }

    pub fn denormalize_slave(&self, z: &[f64]) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| z[i] * self.slave_std[i] + self.slave_mean[i])
    }

    pub fn denormalize_master(&self, z: &[f64]) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| z[i] * self.master_std[i] + self.master_mean[i])
    }
}

fn channel_stats(rows: &[&[f64; STATE_DIM]]) -> ([f64; STATE_DIM], [f64; STATE_DIM]) {
    let n = rows.len() as f64;
    let mean: [f64; STATE_DIM] = std::array::from_fn(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n);
    let std = std::array::from_fn(|c| {
        let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
        var.sqrt().max(STD_FLOOR)
    });
    (mean, std)
}

/// Raw decimated trials plus normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trials: Vec<TrialRecord>,
    pub stats: NormStats,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.trials.iter().map(TrialRecord::len).sum()
    }

    /// Mean master state over the first sample of every trial.
    pub fn initial_master_mean(&self) -> [f64; STATE_DIM] {
        let n = self.trials.len() as f64;
        std::array::from_fn(|c| self.trials.iter().map(|t| t.master[0][c]).sum::<f64>() / n)
    }

    pub fn trials_at(&self, height_mm: f64) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(move |t| (t.height_mm - height_mm).abs() < 1e-9)
    }
}

/// Computes statistics over every row of every trial; trial order is kept.
pub fn build_dataset(trials: Vec<TrialRecord>) -> Result<Dataset, TeleopError> {
    let slave: Vec<_> = trials.iter().flat_map(|t| t.slave.iter()).collect();
    let master: Vec<_> = trials.iter().flat_map(|t| t.master.iter()).collect();
    if slave.is_empty() {
        return Err(TeleopError::EmptyDataset);
    }
    let (slave_mean, slave_std) = channel_stats(&slave);
    let (master_mean, master_std) = channel_stats(&master);
    Ok(Dataset {
        trials,
        stats: NormStats {
            slave_mean,
            slave_std,
            master_mean,
            master_std,
        },
    })
}
