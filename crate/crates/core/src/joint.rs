//! Per-joint value types shared by the simulator, controllers and learners.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Number of actuated joints on each robot.
pub const NUM_JOINTS: usize = 3;

/// Width of a flattened robot state: angle, velocity and torque per joint.
pub const STATE_DIM: usize = 3 * NUM_JOINTS;

/// One scalar per joint, ordered joint 1..3.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointVector(pub [f64; NUM_JOINTS]);

impl JointVector {
    pub const ZERO: JointVector = JointVector([0.0; NUM_JOINTS]);

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        JointVector([a, b, c])
    }

    pub fn splat(v: f64) -> Self {
        JointVector([v; NUM_JOINTS])
    }

    /// Element-wise product.
    pub fn hadamard(self, other: JointVector) -> Self {
        JointVector(std::array::from_fn(|i| self.0[i] * other.0[i]))
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        JointVector(self.0.map(f))
    }

    pub fn dot(self, other: JointVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for JointVector {
    type Output = JointVector;
    fn add(self, rhs: JointVector) -> JointVector {
        JointVector(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl AddAssign for JointVector {
    fn add_assign(&mut self, rhs: JointVector) {
        *self = *self + rhs;
    }
}

impl Sub for JointVector {
    type Output = JointVector;
    fn sub(self, rhs: JointVector) -> JointVector {
        JointVector(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl Neg for JointVector {
    type Output = JointVector;
    fn neg(self) -> JointVector {
        self.map(|v| -v)
    }
}

impl Mul<f64> for JointVector {
    type Output = JointVector;
    fn mul(self, rhs: f64) -> JointVector {
        self.map(|v| v * rhs)
    }
}

impl Mul<JointVector> for f64 {
    type Output = JointVector;
    fn mul(self, rhs: JointVector) -> JointVector {
        rhs * self
    }
}

/// Response triple of one robot at one instant.
///
/// For the simulator this is the true plant state (with `tau` holding the
/// ground-truth external torque); for controllers and datasets it is the
/// measured state (`theta`, pseudo-derivative velocity, reaction-force
/// observer torque).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub theta: JointVector,
    pub theta_dot: JointVector,
    pub tau: JointVector,
}

impl RobotState {
    pub fn at_rest(theta: JointVector) -> Self {
        RobotState {
            theta,
            theta_dot: JointVector::ZERO,
            tau: JointVector::ZERO,
        }
    }

    /// Flattens to `[theta1..3, dtheta1..3, tau1..3]`.
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        out[..3].copy_from_slice(&self.theta.0);
        out[3..6].copy_from_slice(&self.theta_dot.0);
        out[6..].copy_from_slice(&self.tau.0);
        out
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= STATE_DIM, "state slice too short: {}", v.len());
        RobotState {
            theta: JointVector([v[0], v[1], v[2]]),
            theta_dot: JointVector([v[3], v[4], v[5]]),
            tau: JointVector([v[6], v[7], v[8]]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.theta_dot.is_finite() && self.tau.is_finite()
    }
}

/// Command values handed to the slave controller during autonomous runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandTriple {
    pub theta_cmd: JointVector,
    pub theta_dot_cmd: JointVector,
    pub tau_cmd: JointVector,
}

impl CommandTriple {
    pub fn from_state(state: &RobotState) -> Self {
        CommandTriple {
            theta_cmd: state.theta,
            theta_dot_cmd: state.theta_dot,
            tau_cmd: state.tau,
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        RobotState {
            theta: self.theta_cmd,
            theta_dot: self.theta_dot_cmd,
            tau: self.tau_cmd,
        }
        .to_array()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        CommandTriple::from_state(&RobotState::from_slice(v))
    }

    pub fn is_finite(&self) -> bool {
        self.theta_cmd.is_finite() && self.theta_dot_cmd.is_finite() && self.tau_cmd.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_order_is_theta_dtheta_tau() {
        let s = RobotState {
            theta: JointVector::new(1.0, 2.0, 3.0),
            theta_dot: JointVector::new(4.0, 5.0, 6.0),
            tau: JointVector::new(7.0, 8.0, 9.0),
        };
        let a = s.to_array();
        assert_eq!(a, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(RobotState::from_slice(&a), s);
    }

    #[test]
    fn vector_arithmetic() {
        let a = JointVector::new(1.0, -2.0, 3.0);
        let b = JointVector::splat(2.0);
        assert_eq!(a + b, JointVector::new(3.0, 0.0, 5.0));
        assert_eq!(a - b, JointVector::new(-1.0, -4.0, 1.0));
        assert_eq!(a.hadamard(b), a * 2.0);
        assert_eq!(-a, JointVector::new(-1.0, 2.0, -3.0));
        assert_eq!(a.max_abs(), 3.0);
        assert_eq!(a.dot(b), 4.0);
    }
}
