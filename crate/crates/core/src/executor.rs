//! Autonomous execution: a 20 ms inference loop driving the 1 ms slave
//! controller, with either the conventional command law or command
//! feedback of the slave's estimation error.
//!
//! Timeline of one tick `t` (every 20 ms):
//! 1. measure `S_res(t)`;
//! 2. form the command from the predictions made at tick `t − 1` for time
//!    `t` (at tick 0 none exist, so the initial pose is held);
//! 3. infer from `S_res(t)` the predictions for tick `t + 1`.
//!
//! The command is then held for the next 20 control cycles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{slave_autonomous_ref, Gains, ObserverState};
use crate::joint::{CommandTriple, JointVector, RobotState, NUM_JOINTS, STATE_DIM};
use crate::model::network::{infer, GruNetwork, SequenceModel};
use crate::model::{Checkpoint, Scheme};
use crate::sim::{contact, step_joint_dynamics, Encoder, Environment, RobotParams, SimError, CONTROL_DT};
use crate::teleop::{NormStats, TrialRecord, DIVERGENCE_SPEED};

pub type StateVec = [f64; STATE_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("{0} predicts no slave state; command feedback needs Ŝ")]
    MissingSlaveEstimate(Scheme),
    #[error("predictor is {got} but {want} was expected")]
    SchemeMismatch { want: Scheme, got: Scheme },
    #[error("invalid execution setup: {0}")]
    Invalid(String),
}

/// Command law used in autonomous operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Conventional,
    Feedback,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Conventional, Mode::Feedback];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Conventional => "conventional",
            Mode::Feedback => "feedback",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "conventional" | "conv" => Ok(Mode::Conventional),
            "feedback" | "fb" => Ok(Mode::Feedback),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// One inference result in physical units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub slave: Option<StateVec>,
    pub master: StateVec,
}

/// Anything that maps the measured slave stream to next-step predictions.
pub trait Predictor {
    fn scheme(&self) -> Scheme;
    /// Clears all recurrent state; called at episode start.
    fn reset(&mut self);
    /// Consumes `S_res(t)` and predicts tick `t + 1`.
    fn predict(&mut self, s_res: &StateVec) -> Prediction;
}

/// Trained network with its normalization and recurrent state.
#[derive(Clone, Debug)]
pub struct NetworkPredictor {
    scheme: Scheme,
    network: GruNetwork,
    stats: NormStats,
    initial_master: StateVec,
    hidden: Vec<f64>,
    /// SM2SM only: normalized master fed back as the next input.
    virtual_master: StateVec,
}

impl NetworkPredictor {
    pub fn new(scheme: Scheme, network: GruNetwork, stats: NormStats, initial_master: StateVec) -> Self {
        let mut p = NetworkPredictor {
            scheme,
            hidden: vec![0.0; network.hidden_len()],
            network,
            stats,
            initial_master,
            virtual_master: [0.0; STATE_DIM],
        };
        p.reset();
        p
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        NetworkPredictor::new(ckpt.scheme, ckpt.network(), ckpt.stats.clone(), ckpt.initial_master)
    }

    /// Normalized network input that the next `predict` call would use.
    pub fn virtual_master(&self) -> StateVec {
        self.virtual_master
    }
}

impl Predictor for NetworkPredictor {
    fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn reset(&mut self) {
        self.hidden.iter_mut().for_each(|h| *h = 0.0);
        self.virtual_master = self.stats.normalize_master(&self.initial_master);
    }

    fn predict(&mut self, s_res: &StateVec) -> Prediction {
        let s = self.stats.normalize_slave(s_res);
        let x: Vec<f64> = match self.scheme {
            Scheme::S2M | Scheme::S2SM => s.to_vec(),
            Scheme::SM2SM => s.iter().chain(self.virtual_master.iter()).copied().collect(),
        };
        let y = infer(&self.network, &x, &mut self.hidden);
        match self.scheme {
            Scheme::S2M => Prediction {
                slave: None,
                master: self.stats.denormalize_master(&y),
            },
            Scheme::SM2SM | Scheme::S2SM => {
                let (ys, ym) = y.split_at(STATE_DIM);
                self.virtual_master.copy_from_slice(ym);
                Prediction {
                    slave: Some(self.stats.denormalize_slave(ys)),
                    master: self.stats.denormalize_master(ym),
                }
            }
        }
    }
}

/// Replays a recorded trial: `M̂(t+1) = M(t+1)`, `Ŝ(t+1) = S(t+1)`.
/// Ignores its input; holds the last sample past the end of the record.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    record: TrialRecord,
    scheme: Scheme,
    tick: usize,
}

impl OraclePredictor {
    pub fn new(record: TrialRecord, scheme: Scheme) -> Self {
        OraclePredictor {
            record,
            scheme,
            tick: 0,
        }
    }
}

impl Predictor for OraclePredictor {
    fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn reset(&mut self) {
        self.tick = 0;
    }

    fn predict(&mut self, _s_res: &StateVec) -> Prediction {
        self.tick += 1;
        let i = self.tick.min(self.record.len() - 1);
        Prediction {
            slave: self.scheme.predicts_slave().then_some(self.record.slave[i]),
            master: self.record.master[i],
        }
    }
}

/// Always predicts the physical zero state.
#[derive(Clone, Copy, Debug)]
pub struct ZeroPredictor(pub Scheme);

impl Predictor for ZeroPredictor {
    fn scheme(&self) -> Scheme {
        self.0
    }

    fn reset(&mut self) {}

    fn predict(&mut self, _s_res: &StateVec) -> Prediction {
        Prediction {
            slave: self.0.predicts_slave().then_some([0.0; STATE_DIM]),
            master: [0.0; STATE_DIM],
        }
    }
}

/// First-order low-pass `y = K·y_prev + (1 − K)·x` on every channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpfState {
    pub k: f64,
    pub y: Option<StateVec>,
}

impl LpfState {
    pub fn new(k: f64) -> Self {
        LpfState { k, y: None }
    }

    /// Starts from `y0` instead of latching the first input.
    pub fn with_initial(k: f64, y0: StateVec) -> Self {
        LpfState { k, y: Some(y0) }
    }
}

pub fn lpf_scalar(k: f64, y_prev: f64, x: f64) -> f64 {
    k * y_prev + (1.0 - k) * x
}

/// Filters one command vector. An unprimed filter outputs its input.
pub fn lpf_step(state: &LpfState, x: &StateVec) -> (StateVec, LpfState) {
    let y = match state.y {
        None => *x,
        Some(prev) => std::array::from_fn(|i| lpf_scalar(state.k, prev[i], x[i])),
    };
    (y, LpfState { k: state.k, y: Some(y) })
}

/// Signs of the estimation-error feedback: `+` on position and velocity,
/// `−` on torque.
pub const FEEDBACK_SIGNS: StateVec = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0];

/// The predicted master is the slave command, unchanged.
pub fn conventional_command(m_hat: &StateVec) -> CommandTriple {
    CommandTriple::from_slice(m_hat)
}

/// Unfiltered feedback command `M̂ + D·(Ŝ − S_res)`.
pub fn feedback_raw(m_hat: &StateVec, s_hat: &StateVec, s_res: &StateVec) -> StateVec {
    std::array::from_fn(|i| m_hat[i] + FEEDBACK_SIGNS[i] * (s_hat[i] - s_res[i]))
}

pub fn feedback_command(
    m_hat: &StateVec,
    s_hat: &StateVec,
    s_res: &StateVec,
    lpf: &LpfState,
) -> (CommandTriple, LpfState) {
    let (y, lpf) = lpf_step(lpf, &feedback_raw(m_hat, s_hat, s_res));
    (CommandTriple::from_slice(&y), lpf)
}

/// Sudden change of the paper height during an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightStep {
    /// Time of the change, s.
    pub at: f64,
    /// New paper height, m.
    pub height: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    /// Episode length, s.
    pub duration: f64,
    /// Control cycles per inference tick.
    pub infer_every: usize,
    /// Low-pass coefficient K of the feedback law.
    pub lpf_k: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            duration: 13.0,
            infer_every: 20,
            lpf_k: 0.5,
        }
    }
}

impl ExecConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0) || self.infer_every == 0 {
            return Err("duration must be > 0 and infer_every >= 1".into());
        }
        if !(0.0..1.0).contains(&self.lpf_k) {
            return Err(format!("lpf_k must lie in [0, 1), got {}", self.lpf_k));
        }
        Ok(())
    }
}

/// One 20 ms row of an autonomous episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickRow {
    pub t_ms: u64,
    pub s_res: StateVec,
    /// Slave state predicted for this tick at the previous tick.
    pub s_hat: Option<StateVec>,
    pub m_hat: Option<StateVec>,
    pub command: StateVec,
}

/// One 1 ms sample of the slave and its ground-truth contact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlaveSample {
    /// Measured response; θ is exact, θ̇ and τ come from the observers.
    pub slave: RobotState,
    /// Simulator normal force on the pen, N.
    pub contact_normal: f64,
    pub paper_height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub t_ms: u64,
    pub reason: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "diverged at t = {} ms: {}", self.t_ms, self.reason)
    }
}

/// Everything recorded in one episode. A diverged episode stops early and
/// keeps what was logged up to that point.
#[derive(Clone, Debug, PartialEq)]
pub struct AutonomousLog {
    pub scheme: Scheme,
    pub mode: Mode,
    pub dt: f64,
    pub duration: f64,
    pub paper_height: f64,
    pub rows: Vec<TickRow>,
    pub trace: Vec<SlaveSample>,
    pub divergence: Option<Divergence>,
}

/// Runs one autonomous episode from the demonstrations' start pose.
/// `seed` drives the encoder noise, if the robot has any.
#[allow(clippy::too_many_arguments)]
pub fn run_autonomous(
    predictor: &mut dyn Predictor,
    mode: Mode,
    start: JointVector,
    params: &RobotParams,
    env: &Environment,
    gains: &Gains,
    cfg: &ExecConfig,
    height_step: Option<HeightStep>,
    seed: u64,
) -> Result<AutonomousLog, ExecError> {
    cfg.validate().map_err(ExecError::Invalid)?;
    env.validate().map_err(|e| ExecError::Invalid(e.to_string()))?;
    let scheme = predictor.scheme();
    if mode == Mode::Feedback && !scheme.predicts_slave() {
        return Err(ExecError::MissingSlaveEstimate(scheme));
    }
    predictor.reset();

    let n = (cfg.duration / CONTROL_DT).round() as usize;
    let mut env_now = *env;
    let mut plant = RobotState::at_rest(start);
    let mut obs = ObserverState::new();
    let mut encoder = Encoder::new(params.encoder_noise, seed);
    let mut lpf = LpfState::new(cfg.lpf_k);
    let mut pending: Option<Prediction> = None;
    let mut command = CommandTriple::from_state(&RobotState::at_rest(start));
    let mut log = AutonomousLog {
        scheme,
        mode,
        dt: CONTROL_DT,
        duration: cfg.duration,
        paper_height: env.paper_height,
        rows: Vec::with_capacity(n / cfg.infer_every + 1),
        trace: Vec::with_capacity(n),
        divergence: None,
    };

    for step in 0..n {
        if let Some(hs) = height_step {
            if step == (hs.at / CONTROL_DT).round() as usize {
                env_now = env_now.with_height(hs.height);
            }
        }
        let meas = obs.measure(encoder.read(plant.theta), params, gains, CONTROL_DT);
        if step % cfg.infer_every == 0 {
            let s_res = meas.to_array();
            if let Some(p) = pending {
                command = match (mode, p.slave) {
                    (Mode::Conventional, _) => conventional_command(&p.master),
                    (Mode::Feedback, Some(s_hat)) => {
                        let (c, next) = feedback_command(&p.master, &s_hat, &s_res, &lpf);
                        lpf = next;
                        c
                    }
                    (Mode::Feedback, None) => return Err(ExecError::MissingSlaveEstimate(scheme)),
                };
            }
            log.rows.push(TickRow {
                t_ms: step as u64,
                s_res,
                s_hat: pending.and_then(|p| p.slave),
                m_hat: pending.map(|p| p.master),
                command: command.to_array(),
            });
            pending = Some(predictor.predict(&s_res));
        }

        let tau_ref = slave_autonomous_ref(&command, &meas, gains, params.inertia);
        let u = obs.actuate(tau_ref);
        let touch = contact(plant.theta, plant.theta_dot, params, &env_now);
        log.trace.push(SlaveSample {
            slave: meas,
            contact_normal: touch.normal,
            paper_height: env_now.paper_height,
        });

        let diverged = |reason: String| Divergence {
            t_ms: step as u64,
            reason,
        };
        if !command.is_finite() {
            log.divergence = Some(diverged("non-finite command".into()));
            break;
        }
        match step_joint_dynamics(&plant, u, touch.tau_ext, params, CONTROL_DT) {
            Ok(next) => plant = next,
            Err(SimError::NonFinite) => {
                log.divergence = Some(diverged("non-finite state".into()));
                break;
            }
            Err(e) => return Err(ExecError::Invalid(e.to_string())),
        }
        let speed = plant.theta_dot.max_abs();
        if speed > DIVERGENCE_SPEED {
            log.divergence = Some(diverged(format!("joint speed {speed:.1} rad/s")));
            break;
        }
    }
    Ok(log)
}

impl AutonomousLog {
    pub fn completed(&self) -> bool {
        self.divergence.is_none()
    }

    /// 1 ms θ of joint `j` (0-based).
    pub fn theta(&self, j: usize) -> Vec<f64> {
        assert!(j < NUM_JOINTS);
        self.trace.iter().map(|s| s.slave.theta.0[j]).collect()
    }
}
