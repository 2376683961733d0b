//! Per-joint acceleration control: pseudo-derivative velocity, disturbance
//! observer, reaction-force observer and the four-channel bilateral law.

use serde::{Deserialize, Serialize};

use crate::joint::{CommandTriple, JointVector, RobotState};
use crate::sim::{gravity_torque, RobotParams};

/// Controller gains shared by master and slave.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    /// Position proportional gain, 1/s².
    pub kp: f64,
    /// Position derivative gain, 1/s.
    pub kd: f64,
    /// Force proportional gain.
    pub kf: f64,
    /// Disturbance observer cutoff, rad/s.
    pub g_dob: f64,
    /// Pseudo-derivative cutoff, rad/s.
    pub g_pd: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            kp: 400.0,
            kd: 40.0,
            kf: 1.0,
            g_dob: 200.0,
            g_pd: 200.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.kp, self.kd, self.kf, self.g_dob, self.g_pd];
        if all.iter().all(|g| g.is_finite() && *g > 0.0) {
            Ok(())
        } else {
            Err(format!("all gains must be finite and > 0: {self:?}"))
        }
    }
}

/// Filtered backward difference realizing `s·g/(s+g)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PseudoDerivative {
    velocity: JointVector,
    prev_theta: JointVector,
    primed: bool,
}

impl PseudoDerivative {
    pub fn velocity(&self) -> JointVector {
        self.velocity
    }
}

/// One pseudo-derivative update. The first call only latches the angle.
pub fn pseudo_derivative(
    prev: &PseudoDerivative,
    theta_res: JointVector,
    g_pd: f64,
    dt: f64,
) -> (JointVector, PseudoDerivative) {
    if !prev.primed {
        let next = PseudoDerivative {
            velocity: prev.velocity,
            prev_theta: theta_res,
            primed: true,
        };
        return (prev.velocity, next);
    }
    let a = (-g_pd * dt).exp();
    let raw = (theta_res - prev.prev_theta) * (1.0 / dt);
    let velocity = prev.velocity * a + raw * (1.0 - a);
    (
        velocity,
        PseudoDerivative {
            velocity,
            prev_theta: theta_res,
            primed: true,
        },
    )
}

/// Low-pass accumulator of the disturbance observer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DobState {
    filtered: JointVector,
}

/// Disturbance observer: `τ̂_dis = LPF(τ_ref + g·J·θ̇) − g·J·θ̇`.
///
/// `tau_ref` is the torque actually applied over the last cycle.
pub fn dob_estimate(
    state: &DobState,
    tau_ref: JointVector,
    theta_dot_res: JointVector,
    inertia: JointVector,
    g_dob: f64,
    dt: f64,
) -> (JointVector, DobState) {
    let a = (-g_dob * dt).exp();
    let momentum = inertia.hadamard(theta_dot_res) * g_dob;
    let filtered = state.filtered * a + (tau_ref + momentum) * (1.0 - a);
    (filtered - momentum, DobState { filtered })
}

/// Reaction-force observer: strips modeled friction and gravity from the
/// disturbance estimate, leaving the torque exerted on the surroundings.
pub fn rfob_torque(
    tau_dis_hat: JointVector,
    theta: JointVector,
    theta_dot: JointVector,
    params: &RobotParams,
) -> JointVector {
    tau_dis_hat - params.viscous_friction.hadamard(theta_dot) - gravity_torque(theta, params)
}

/// Four-channel bilateral law. Returns `(τ_ref_m, τ_ref_s)` before
/// disturbance compensation.
pub fn bilateral_refs(
    master: &RobotState,
    slave: &RobotState,
    gains: &Gains,
    inertia: JointVector,
) -> (JointVector, JointVector) {
    let position = position_term(
        slave.theta - master.theta,
        slave.theta_dot - master.theta_dot,
        gains,
        inertia,
    );
    let force = (master.tau + slave.tau) * (gains.kf / 2.0);
    (position - force, -position - force)
}

/// Slave half of the bilateral law with a command standing in for the master.
pub fn slave_autonomous_ref(
    command: &CommandTriple,
    slave: &RobotState,
    gains: &Gains,
    inertia: JointVector,
) -> JointVector {
    let position = position_term(
        command.theta_cmd - slave.theta,
        command.theta_dot_cmd - slave.theta_dot,
        gains,
        inertia,
    );
    position - (command.tau_cmd + slave.tau) * (gains.kf / 2.0)
}

fn position_term(
    error: JointVector,
    error_dot: JointVector,
    gains: &Gains,
    inertia: JointVector,
) -> JointVector {
    (inertia * 0.5).hadamard(error * gains.kp + error_dot * gains.kd)
}

/// Observer bank of one robot: pseudo-derivative, DOB and RFOB, plus the
/// torque applied on the previous cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObserverState {
    pub derivative: PseudoDerivative,
    pub dob: DobState,
    pub last_applied: JointVector,
    pub tau_dis_hat: JointVector,
}

impl ObserverState {
    pub fn new() -> Self {
        ObserverState::default()
    }

    /// Turns an encoder reading into a measured response
    /// `(θ, θ̇_res, τ_res)`.
    pub fn measure(
        &mut self,
        theta: JointVector,
        params: &RobotParams,
        gains: &Gains,
        dt: f64,
    ) -> RobotState {
        let (theta_dot, derivative) = pseudo_derivative(&self.derivative, theta, gains.g_pd, dt);
        let (tau_dis_hat, dob) = dob_estimate(
            &self.dob,
            self.last_applied,
            theta_dot,
            params.inertia,
            gains.g_dob,
            dt,
        );
        self.derivative = derivative;
        self.dob = dob;
        self.tau_dis_hat = tau_dis_hat;
        RobotState {
            theta,
            theta_dot,
            tau: rfob_torque(tau_dis_hat, theta, theta_dot, params),
        }
    }

    /// Adds disturbance compensation to a reference and records the result
    /// as the applied torque.
    pub fn actuate(&mut self, tau_ref: JointVector) -> JointVector {
        let applied = tau_ref + self.tau_dis_hat;
        self.last_applied = applied;
        applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{step_joint_dynamics, CONTROL_DT};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const DT: f64 = CONTROL_DT;

    #[test]
    fn derivative_of_constant_settles_to_zero() {
        let g = 200.0;
        let mut st = PseudoDerivative::default();
        let mut out = JointVector::ZERO;
        for _ in 0..=((5.0 / g / DT) as usize) {
            let (v, n) = pseudo_derivative(&st, JointVector::splat(0.7), g, DT);
            st = n;
            out = v;
        }
        assert!(out.max_abs() < 1e-12);
    }

    #[test]
    fn derivative_of_ramp_converges_to_slope() {
        let (g, slope) = (200.0, 0.8);
        let mut st = PseudoDerivative::default();
        let steps = (5.0 / g / DT).ceil() as usize;
        let mut out = JointVector::ZERO;
        for k in 0..=steps {
            let (v, n) = pseudo_derivative(&st, JointVector::splat(slope * k as f64 * DT), g, DT);
            st = n;
            out = v;
        }
        // Closed form: v_n = slope·(1 − a^n), a = exp(−g·dt).
        let a = (-g * DT).exp();
        assert_abs_diff_eq!(out[0], slope * (1.0 - a.powi(steps as i32)), epsilon = 1e-12);
        assert!((out[0] - slope).abs() < 0.01 * slope);
    }

    #[test]
    fn derivative_first_call_is_zero() {
        let (v, _) = pseudo_derivative(&PseudoDerivative::default(), JointVector::ZERO, 200.0, DT);
        assert_eq!(v, JointVector::ZERO);
    }

    #[test]
    fn dob_converges_to_constant_disturbance() {
        let (g, d) = (200.0, JointVector::new(0.3, -0.2, 0.05));
        let inertia = JointVector::splat(0.003);
        let mut st = DobState::default();
        let mut est = JointVector::ZERO;
        for _ in 0..(5.0 / g / DT).ceil() as usize {
            // At rest with the applied torque exactly cancelling d.
            let (e, n) = dob_estimate(&st, d, JointVector::ZERO, inertia, g, DT);
            st = n;
            est = e;
        }
        for j in 0..3 {
            assert!((est[j] - d[j]).abs() <= 0.01 * d[j].abs());
        }
    }

    #[test]
    fn dob_idle_is_zero() {
        let mut st = DobState::default();
        for _ in 0..1000 {
            let (e, n) = dob_estimate(
                &st,
                JointVector::ZERO,
                JointVector::ZERO,
                JointVector::splat(0.003),
                200.0,
                DT,
            );
            assert_eq!(e, JointVector::ZERO);
            st = n;
        }
    }

    #[test]
    fn dob_tracks_viscous_friction_in_cruise() {
        // Gravity-free robot cruising under a constant torque balancing friction.
        let mut params = RobotParams::default();
        params.gravity_coeff = JointVector::ZERO;
        let gains = Gains::default();
        let speed = 0.5;
        let push = params.viscous_friction * speed;
        let mut plant = RobotState {
            theta_dot: JointVector::splat(speed),
            ..Default::default()
        };
        let mut obs = ObserverState::new();
        let mut est = JointVector::ZERO;
        for _ in 0..2000 {
            obs.measure(plant.theta, &params, &gains, DT);
            est = obs.tau_dis_hat;
            obs.last_applied = push;
            plant = step_joint_dynamics(&plant, push, JointVector::ZERO, &params, DT).unwrap();
        }
        for j in 0..3 {
            assert!((est[j] - push[j]).abs() <= 0.02 * push[j].abs(), "{est:?} vs {push:?}");
        }
    }

    #[test]
    fn rfob_cancels_modeled_torques() {
        let params = RobotParams::default();
        let theta = JointVector::new(0.2, 0.4, -1.1);
        let theta_dot = JointVector::new(0.3, -0.1, 0.6);
        let dis = params.viscous_friction.hadamard(theta_dot) + gravity_torque(theta, &params);
        let res = rfob_torque(dis, theta, theta_dot, &params);
        assert!(res.max_abs() < 1e-15);
    }

    #[test]
    fn bilateral_refs_zero_when_goals_met() {
        let m = RobotState {
            theta: JointVector::new(0.1, 0.5, -1.2),
            theta_dot: JointVector::new(0.2, 0.0, -0.1),
            tau: JointVector::new(0.05, -0.1, 0.02),
        };
        let s = RobotState { tau: -m.tau, ..m };
        let (rm, rs) = bilateral_refs(&m, &s, &Gains::default(), JointVector::splat(0.003));
        assert_eq!(rm, JointVector::ZERO);
        assert_eq!(rs, JointVector::ZERO);
    }

    #[test]
    fn bilateral_refs_position_arithmetic() {
        let m = RobotState::default();
        let s = RobotState::at_rest(JointVector::new(0.1, 0.0, 0.0));
        let (rm, rs) = bilateral_refs(&m, &s, &Gains::default(), JointVector::splat(0.003));
        assert_abs_diff_eq!(rm[0], 0.06, epsilon = 1e-15);
        assert_abs_diff_eq!(rs[0], -0.06, epsilon = 1e-15);
        assert_eq!(rm[1], 0.0);
        assert_eq!(rs[2], 0.0);
    }

    #[test]
    fn autonomous_ref_zero_when_command_matches() {
        let s = RobotState {
            theta: JointVector::new(0.1, 0.5, -1.2),
            theta_dot: JointVector::new(0.2, 0.0, -0.1),
            tau: JointVector::new(0.05, -0.1, 0.02),
        };
        let cmd = CommandTriple {
            theta_cmd: s.theta,
            theta_dot_cmd: s.theta_dot,
            tau_cmd: -s.tau,
        };
        let r = slave_autonomous_ref(&cmd, &s, &Gains::default(), JointVector::splat(0.003));
        assert_eq!(r, JointVector::ZERO);
    }

    #[test]
    fn autonomous_ref_position_arithmetic() {
        let cmd = CommandTriple {
            theta_cmd: JointVector::new(0.0, 0.05, 0.0),
            ..Default::default()
        };
        let r = slave_autonomous_ref(
            &cmd,
            &RobotState::default(),
            &Gains::default(),
            JointVector::splat(0.003),
        );
        assert_abs_diff_eq!(r[1], 0.0015 * 400.0 * 0.05, epsilon = 1e-15);
        assert_eq!(r[0], 0.0);
        assert_eq!(r[2], 0.0);
    }

    #[test]
    fn autonomous_ref_equals_slave_half_of_bilateral_law() {
        // A command built from the master response, τ passed through with
        // the master's own sign, reproduces the slave reference exactly.
        let m = RobotState {
            theta: JointVector::new(0.3, 0.2, -0.9),
            theta_dot: JointVector::new(-0.4, 0.1, 0.2),
            tau: JointVector::new(0.03, 0.2, -0.07),
        };
        let s = RobotState {
            theta: JointVector::new(0.28, 0.25, -0.95),
            theta_dot: JointVector::new(-0.35, 0.0, 0.3),
            tau: JointVector::new(-0.01, -0.15, 0.05),
        };
        let gains = Gains::default();
        let inertia = JointVector::splat(0.003);
        let (_, rs) = bilateral_refs(&m, &s, &gains, inertia);
        let auto = slave_autonomous_ref(&CommandTriple::from_state(&m), &s, &gains, inertia);
        for j in 0..3 {
            assert_abs_diff_eq!(auto[j], rs[j], epsilon = 1e-15);
        }
    }

    fn jv() -> impl Strategy<Value = JointVector> {
        prop::array::uniform3(-2.0f64..2.0).prop_map(JointVector)
    }

    fn state() -> impl Strategy<Value = RobotState> {
        (jv(), jv(), jv()).prop_map(|(theta, theta_dot, tau)| RobotState {
            theta,
            theta_dot,
            tau,
        })
    }

    proptest! {
        #[test]
        fn bilateral_position_terms_antisymmetric(m in state(), s in state()) {
            let gains = Gains::default();
            let inertia = JointVector::splat(0.003);
            let (rm, rs) = bilateral_refs(&m, &s, &gains, inertia);
            let force = (m.tau + s.tau) * (gains.kf / 2.0);
            let pos_m = rm + force;
            let pos_s = rs + force;
            for j in 0..3 {
                prop_assert!((pos_m[j] + pos_s[j]).abs() < 1e-14);
                // Force terms identical on both sides.
                prop_assert!(((rm[j] - pos_m[j]) - (rs[j] - pos_s[j])).abs() < 1e-14);
            }
        }

        #[test]
        fn observers_are_linear(inputs in prop::collection::vec(jv(), 5..40)) {
            let inertia = JointVector::splat(0.003);
            let (mut pd1, mut pd2) = (PseudoDerivative::default(), PseudoDerivative::default());
            let (mut d1, mut d2) = (DobState::default(), DobState::default());
            for x in &inputs {
                let (v1, n1) = pseudo_derivative(&pd1, *x, 200.0, DT);
                let (v2, n2) = pseudo_derivative(&pd2, *x * 2.0, 200.0, DT);
                pd1 = n1;
                pd2 = n2;
                let (e1, m1) = dob_estimate(&d1, *x, v1, inertia, 200.0, DT);
                let (e2, m2) = dob_estimate(&d2, *x * 2.0, v2, inertia, 200.0, DT);
                d1 = m1;
                d2 = m2;
                for j in 0..3 {
                    prop_assert!((v2[j] - 2.0 * v1[j]).abs() <= 1e-12 * (1.0 + v1[j].abs()));
                    prop_assert!((e2[j] - 2.0 * e1[j]).abs() <= 1e-12 * (1.0 + e1[j].abs()));
                }
            }
        }
    }
}
