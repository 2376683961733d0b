//! Fixed-step simulation of a three-joint desktop manipulator.
//!
//! Joint 1 rotates about the vertical axis; joints 2 and 3 move the two
//! links in the gravity plane. The pen tip hangs `pen_length` below the
//! end of link 3 and meets a horizontal sheet of paper through a unilateral
//! penalty contact. Joint dynamics are decoupled and diagonal:
//!
//! `J θ̈ = τ_ref − τ_ext − D θ̇ − τ_g(θ)`
//!
//! where `τ_ext` is the torque the robot exerts on its surroundings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::joint::{JointVector, RobotState};

/// The control cycle, in seconds.
pub const CONTROL_DT: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite state after integration step")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
}

/// Kinematic and dynamic parameters of one robot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    /// Joint inertia, kg·m².
    pub inertia: JointVector,
    /// Viscous friction, N·m·s/rad.
    pub viscous_friction: JointVector,
    /// Gravity coefficients, N·m. Component 1 is unused.
    pub gravity_coeff: JointVector,
    pub link2: f64,
    pub link3: f64,
    pub base_height: f64,
    /// Half-width of the uniform encoder read-out error, rad.
    pub encoder_noise: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            inertia: JointVector::splat(0.003),
            viscous_friction: JointVector::new(0.05, 0.01, 0.01),
            gravity_coeff: JointVector::new(0.0, 0.15, 0.08),
            link2: 0.135,
            link3: 0.135,
            base_height: 0.10,
            encoder_noise: 0.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.inertia.0.iter().any(|&j| !(j > 0.0)) {
            return Err(SimError::InvalidParams("inertia must be > 0".into()));
        }
        if self.viscous_friction.0.iter().any(|&d| !(d >= 0.0)) {
            return Err(SimError::InvalidParams("friction must be >= 0".into()));
        }
        if !(self.link2 > 0.0 && self.link3 > 0.0) {
            return Err(SimError::InvalidParams("link lengths must be > 0".into()));
        }
        if !(self.encoder_noise >= 0.0 && self.encoder_noise.is_finite()) {
            return Err(SimError::InvalidParams("encoder noise must be finite and >= 0".into()));
        }
        if !self.base_height.is_finite() || !self.gravity_coeff.is_finite() {
            return Err(SimError::InvalidParams("non-finite geometry".into()));
        }
        Ok(())
    }

    pub fn reach(&self) -> f64 {
        self.link2 + self.link3
    }
}

/// The sheet of paper and the pen touching it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Environment {
    /// Height of the paper surface above the table, m.
    pub paper_height: f64,
    /// Contact stiffness, N/m.
    pub contact_stiffness: f64,
    /// Contact damping, N·s/m.
    pub contact_damping: f64,
    /// Distance from the end of link 3 down to the pen tip, m.
    pub pen_length: f64,
    /// Coulomb coefficient for pen drag along the paper.
    pub drag_coeff: f64,
    /// Tip speed (m/s) over which the drag force ramps to full Coulomb value.
    pub drag_smoothing: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Environment {
            paper_height: 0.045,
            contact_stiffness: 2000.0,
            contact_damping: 5.0,
            pen_length: 0.02,
            drag_coeff: 0.2,
            drag_smoothing: 0.02,
        }
    }
}

impl Environment {
    pub fn with_height(mut self, paper_height: f64) -> Self {
        self.paper_height = paper_height;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.01..=0.10).contains(&self.paper_height) {
            return Err(SimError::InvalidParams(format!(
                "paper height {} m outside [0.01, 0.10]",
                self.paper_height
            )));
        }
        if !(self.contact_stiffness > 0.0) || !(self.contact_damping >= 0.0) {
            return Err(SimError::InvalidParams(
                "contact stiffness must be > 0 and damping >= 0".into(),
            ));
        }
        if !(self.drag_coeff >= 0.0) || !(self.drag_smoothing > 0.0) {
            return Err(SimError::InvalidParams("invalid pen drag parameters".into()));
        }
        Ok(())
    }
}

/// Joint encoders with a seeded read-out error.
#[derive(Clone, Debug)]
pub struct Encoder {
    half_width: f64,
    rng: ChaCha8Rng,
}

impl Encoder {
    pub fn new(half_width: f64, seed: u64) -> Self {
        Encoder {
            half_width,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Reads `theta`. Exact when the noise is zero.
    pub fn read(&mut self, theta: JointVector) -> JointVector {
        if self.half_width == 0.0 {
            return theta;
        }
        let w = self.half_width;
        theta + JointVector(std::array::from_fn(|_| self.rng.gen_range(-w..=w)))
    }
}

/// End of link 3 in the base frame. At `theta = 0` the arm is stretched
/// horizontally along +x at `base_height`; positive `theta2`/`theta3` raise
/// the links.
pub fn forward_kinematics(theta: JointVector, params: &RobotParams) -> [f64; 3] {
    let [t1, t2, t3] = theta.0;
    let (l2, l3) = (params.link2, params.link3);
    let radius = l2 * t2.cos() + l3 * (t2 + t3).cos();
    [
        radius * t1.cos(),
        radius * t1.sin(),
        params.base_height + l2 * t2.sin() + l3 * (t2 + t3).sin(),
    ]
}

/// Pen tip position: end of link 3 shifted down by the pen length.
pub fn pen_tip(theta: JointVector, params: &RobotParams, env: &Environment) -> [f64; 3] {
    let mut p = forward_kinematics(theta, params);
    p[2] -= env.pen_length;
    p
}

/// Translational Jacobian `∂p/∂θ`, rows x/y/z, columns joints 1..3.
pub fn jacobian(theta: JointVector, params: &RobotParams) -> [[f64; 3]; 3] {
    let [t1, t2, t3] = theta.0;
    let (l2, l3) = (params.link2, params.link3);
    let (s1, c1) = t1.sin_cos();
    let (s2, c2) = t2.sin_cos();
    let (s23, c23) = (t2 + t3).sin_cos();
    let radius = l2 * c2 + l3 * c23;
    let lift = l2 * s2 + l3 * s23;
    [
        [-radius * s1, -lift * c1, -l3 * s23 * c1],
        [radius * c1, -lift * s1, -l3 * s23 * s1],
        [0.0, radius, l3 * c23],
    ]
}

/// Holding torque against gravity (`∂V/∂θ` of the potential
/// `V = g_c2 sin θ2 + g_c3 sin(θ2+θ3)`).
pub fn gravity_torque(theta: JointVector, params: &RobotParams) -> JointVector {
    let g = params.gravity_coeff;
    let c2 = theta[1].cos();
    let c23 = (theta[1] + theta[2]).cos();
    JointVector::new(0.0, g[1] * c2 + g[2] * c23, g[2] * c23)
}

/// Everything the paper contact produces at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContactForce {
    /// Normal force pushing the pen up, N. Never negative.
    pub normal: f64,
    /// Horizontal drag force on the pen, N.
    pub drag: [f64; 2],
    /// Torque the robot exerts on the paper, mapped to joints.
    pub tau_ext: JointVector,
}

/// Penalty contact between pen tip and paper.
pub fn contact(
    theta: JointVector,
    theta_dot: JointVector,
    params: &RobotParams,
    env: &Environment,
) -> ContactForce {
    let tip = pen_tip(theta, params, env);
    if tip[2] >= env.paper_height {
        return ContactForce::default();
    }
    let jac = jacobian(theta, params);
    let vel: [f64; 3] = std::array::from_fn(|r| {
        (0..3).map(|c| jac[r][c] * theta_dot[c]).sum::<f64>()
    });
    let penetration = env.paper_height - tip[2];
    let normal = (env.contact_stiffness * penetration - env.contact_damping * vel[2]).max(0.0);

    // Regularized Coulomb drag opposing horizontal tip motion.
    let speed = vel[0].hypot(vel[1]);
    let drag = if speed > 0.0 {
        let mag = env.drag_coeff * normal * (speed / env.drag_smoothing).min(1.0);
        [-mag * vel[0] / speed, -mag * vel[1] / speed]
    } else {
        [0.0, 0.0]
    };

    // Force on the pen is (drag, normal); the robot pushes back with its negative.
    let on_paper = [-drag[0], -drag[1], -normal];
    let tau_ext = JointVector(std::array::from_fn(|c| {
        (0..3).map(|r| jac[r][c] * on_paper[r]).sum::<f64>()
    }));
    ContactForce {
        normal,
        drag,
        tau_ext,
    }
}

/// Joint torque the robot exerts on the paper.
pub fn contact_torque(
    theta: JointVector,
    theta_dot: JointVector,
    params: &RobotParams,
    env: &Environment,
) -> JointVector {
    contact(theta, theta_dot, params, env).tau_ext
}

/// One semi-implicit Euler step. The returned `tau` carries `tau_ext`.
pub fn step_joint_dynamics(
    state: &RobotState,
    tau_ref: JointVector,
    tau_ext: JointVector,
    params: &RobotParams,
    dt: f64,
) -> Result<RobotState, SimError> {
    let friction = params.viscous_friction.hadamard(state.theta_dot);
    let gravity = gravity_torque(state.theta, params);
    let net = tau_ref - tau_ext - friction - gravity;
    let accel = JointVector(std::array::from_fn(|i| net[i] / params.inertia[i]));
    let theta_dot = state.theta_dot + accel * dt;
    let theta = state.theta + theta_dot * dt;
    let next = RobotState {
        theta,
        theta_dot,
        tau: tau_ext,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(SimError::NonFinite)
    }
}

/// Joint angles placing the end of link 3 at horizontal `radius` and
/// height `z` with joint 1 at `yaw`. Elbow-up branch (θ3 ≤ 0).
pub fn inverse_kinematics(
    yaw: f64,
    radius: f64,
    z: f64,
    params: &RobotParams,
) -> Option<JointVector> {
    let (l2, l3) = (params.link2, params.link3);
    let dz = z - params.base_height;
    let d2 = radius * radius + dz * dz;
    let cos3 = (d2 - l2 * l2 - l3 * l3) / (2.0 * l2 * l3);
    if !(-1.0..=1.0).contains(&cos3) {
        return None;
    }
    let t3 = -cos3.acos();
    let t2 = dz.atan2(radius) - (l3 * t3.sin()).atan2(l2 + l3 * t3.cos());
    Some(JointVector::new(yaw, t2, t3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6};

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn fk_home_pose_points_along_x() {
        let p = forward_kinematics(JointVector::ZERO, &params());
        assert_abs_diff_eq!(p[0], 0.27, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.10, epsilon = 1e-15);
    }

    #[test]
    fn fk_base_rotation() {
        let p = forward_kinematics(JointVector::new(FRAC_PI_2, 0.0, 0.0), &params());
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.27, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.10, epsilon = 1e-15);
    }

    #[test]
    fn fk_bent_pose_matches_trig_oracle() {
        // θ2 = 30°, θ3 = −30°: link 2 rises at 30°, link 3 is horizontal.
        // x = 0.135·cos30° + 0.135, z = 0.10 + 0.135·sin30°.
        let p = forward_kinematics(JointVector::new(0.0, FRAC_PI_6, -FRAC_PI_6), &params());
        let x = 0.135 * 3f64.sqrt() / 2.0 + 0.135;
        assert_abs_diff_eq!(p[0], x, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.251_913_429_510_011_4, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.1675, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = params();
        let theta = JointVector::new(0.3, 0.6, -1.4);
        let jac = jacobian(theta, &p);
        let h = 1e-6;
        for c in 0..3 {
            let mut plus = theta;
            let mut minus = theta;
            plus[c] += h;
            minus[c] -= h;
            let fp = forward_kinematics(plus, &p);
            let fm = forward_kinematics(minus, &p);
            for r in 0..3 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert_abs_diff_eq!(jac[r][c], fd, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ik_round_trips_through_fk() {
        let p = params();
        let theta = inverse_kinematics(0.2, 0.18, 0.06, &p).unwrap();
        let tip = forward_kinematics(theta, &p);
        assert_abs_diff_eq!(tip[0].hypot(tip[1]), 0.18, epsilon = 1e-12);
        assert_abs_diff_eq!(tip[2], 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(tip[1].atan2(tip[0]), 0.2, epsilon = 1e-12);
        assert!(theta[2] <= 0.0);
        assert!(inverse_kinematics(0.0, 0.5, 0.1, &p).is_none());
    }

    #[test]
    fn no_contact_above_paper() {
        let p = params();
        let env = Environment::default();
        let theta = inverse_kinematics(0.0, 0.18, env.paper_height + env.pen_length + 0.01, &p)
            .unwrap();
        assert_eq!(
            contact_torque(theta, JointVector::ZERO, &p, &env),
            JointVector::ZERO
        );
    }

    #[test]
    fn one_millimetre_penetration_gives_two_newtons() {
        let p = params();
        let env = Environment::default();
        let theta =
            inverse_kinematics(0.1, 0.18, env.paper_height + env.pen_length - 0.001, &p).unwrap();
        let c = contact(theta, JointVector::ZERO, &p, &env);
        assert_abs_diff_eq!(c.normal, 2.0, epsilon = 1e-9);

        // Jacobian oracle from finite differences of the kinematics.
        let h = 1e-6;
        for j in 0..3 {
            let mut plus = theta;
            let mut minus = theta;
            plus[j] += h;
            minus[j] -= h;
            let dz = (forward_kinematics(plus, &p)[2] - forward_kinematics(minus, &p)[2]) / (2.0 * h);
            // The robot presses down on the paper: τ = Jᵀ·(0, 0, −2).
            assert_abs_diff_eq!(c.tau_ext[j], -2.0 * dz, epsilon = 1e-8);
        }
        assert_eq!(c.tau_ext[0], 0.0);
    }

    #[test]
    fn contact_is_unilateral() {
        let p = params();
        let env = Environment::default();
        let theta =
            inverse_kinematics(0.0, 0.18, env.paper_height + env.pen_length - 0.001, &p).unwrap();
        // Fast upward motion: raw penalty force would be negative.
        let jac = jacobian(theta, &p);
        let up = JointVector::new(0.0, 10.0 / jac[2][1], 0.0);
        let c = contact(theta, up, &p, &env);
        assert_eq!(c.normal, 0.0);
        assert_eq!(c.tau_ext, JointVector::ZERO);
    }

    #[test]
    fn free_drift() {
        let mut p = params();
        p.viscous_friction = JointVector::ZERO;
        p.gravity_coeff = JointVector::ZERO;
        let s = RobotState {
            theta: JointVector::ZERO,
            theta_dot: JointVector::new(1.0, 0.0, 0.0),
            tau: JointVector::ZERO,
        };
        let n = step_joint_dynamics(&s, JointVector::ZERO, JointVector::ZERO, &p, 0.001).unwrap();
        assert_eq!(n.theta[0], 0.001);
        assert_eq!(n.theta_dot[0], 1.0);
    }

    #[test]
    fn viscous_first_order_response() {
        let p = params();
        let (j, d, torque) = (p.inertia[0], p.viscous_friction[0], 0.02);
        let mut s = RobotState::default();
        let steps = (5.0 * j / d / CONTROL_DT).ceil() as usize;
        for _ in 0..steps {
            s = step_joint_dynamics(
                &s,
                JointVector::new(torque, 0.0, 0.0) + gravity_torque(s.theta, &p),
                JointVector::ZERO,
                &p,
                CONTROL_DT,
            )
            .unwrap();
        }
        let terminal = torque / d;
        assert!((s.theta_dot[0] - terminal).abs() < 0.01 * terminal);
    }

    #[test]
    fn gravity_equilibrium_holds_still() {
        let p = params();
        let theta = JointVector::new(0.1, 0.5, -1.3);
        let mut s = RobotState::at_rest(theta);
        for _ in 0..100 {
            let hold = gravity_torque(s.theta, &p);
            s = step_joint_dynamics(&s, hold, JointVector::ZERO, &p, CONTROL_DT).unwrap();
        }
        assert_eq!(s.theta_dot, JointVector::ZERO);
        assert_eq!(s.theta, theta);
    }

    #[test]
    fn gravity_has_no_yaw_component() {
        let p = params();
        for t in [-1.0, 0.0, 0.7, 2.0] {
            assert_eq!(gravity_torque(JointVector::new(t, t, -t), &p)[0], 0.0);
        }
        // Joint 3 term vanishes when link 3 is vertical; joint 2 then only
        // sees link 2, which vanishes at θ2 = 90°.
        let g = gravity_torque(JointVector::new(0.0, FRAC_PI_2, 0.0), &p);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gravity_is_potential_gradient() {
        let p = params();
        let g = p.gravity_coeff;
        let potential = |t: JointVector| g[1] * t[1].sin() + g[2] * (t[1] + t[2]).sin();
        let theta = JointVector::new(0.0, FRAC_PI_4, 0.0);
        let tau = gravity_torque(theta, &p);
        let h = 1e-6;
        for j in 0..3 {
            let mut plus = theta;
            let mut minus = theta;
            plus[j] += h;
            minus[j] -= h;
            let grad = (potential(plus) - potential(minus)) / (2.0 * h);
            assert_abs_diff_eq!(tau[j], grad, epsilon = 1e-9);
        }
        // (0.15 + 0.08)·cos 45°
        assert_abs_diff_eq!(tau[1], 0.23 * FRAC_PI_4.cos(), epsilon = 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params();
        p.inertia[1] = 0.0;
        assert!(p.validate().is_err());
        assert!(Environment::default().with_height(0.2).validate().is_err());
        assert!(params().validate().is_ok());
    }
}
