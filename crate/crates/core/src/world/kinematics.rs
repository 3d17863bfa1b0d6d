use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Frame, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v: f64,
    pub omega: f64,
}

impl VelocityCommand {
    pub const STOP: VelocityCommand = VelocityCommand { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub v: f64,
    pub omega: f64,
    pub radius: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Linear acceleration limit, m/s². `f64::INFINITY` for instantaneous changes.
    pub accel: f64,
    /// Angular acceleration limit, rad/s².
    pub alpha: f64,
}

impl RobotState {
    pub fn at_rest(pose: Pose2D) -> Self {
        Self {
            pose,
            v: 0.0,
            omega: 0.0,
            radius: 0.3,
            v_max: 0.3,
            omega_max: 1.0,
            accel: 0.5,
            alpha: 2.0,
        }
    }

    /// Applies the acceleration limits over `dt`, then the velocity limits.
    pub fn achievable(&self, cmd: VelocityCommand, dt: f64) -> VelocityCommand {
        let dv = (cmd.v - self.v).clamp(-self.accel * dt, self.accel * dt);
        let dw = (cmd.omega - self.omega).clamp(-self.alpha * dt, self.alpha * dt);
        VelocityCommand {
            v: (self.v + dv).clamp(-self.v_max, self.v_max),
            omega: (self.omega + dw).clamp(-self.omega_max, self.omega_max),
        }
    }
}

/// Constant-curvature displacement after `t` seconds at `(v, omega)`, in the
/// frame of the starting pose.
pub fn arc_offset(v: f64, omega: f64, t: f64) -> (f64, f64, f64) {
    if omega.abs() < 1e-6 {
        (v * t, 0.0, omega * t)
    } else {
        let r = v / omega;
        let th = omega * t;
        (r * th.sin(), r * (1.0 - th.cos()), th)
    }
}

/// Advances a unicycle robot by one control period.
pub fn step_kinematics(state: &RobotState, cmd: VelocityCommand, dt: f64) -> RobotState {
    assert!(dt > 0.0, "dt must be positive");
    let applied = state.achievable(cmd, dt);
    let (dx, dy, dth) = arc_offset(applied.v, applied.omega, dt);
    let (s, c) = state.pose.theta.sin_cos();
    let pose = Pose2D {
        x: state.pose.x + c * dx - s * dy,
        y: state.pose.y + s * dx + c * dy,
        theta: wrap_angle(state.pose.theta + dth),
        frame: Frame::Odom,
    };
    RobotState {
        pose,
        v: applied.v,
        omega: applied.omega,
        ..*state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unlimited() -> RobotState {
        RobotState {
            accel: f64::INFINITY,
            alpha: f64::INFINITY,
            v_max: 10.0,
            omega_max: 10.0,
            ..RobotState::at_rest(Pose2D::new(0.0, 0.0, 0.0, Frame::Odom))
        }
    }

    #[test]
    fn straight_line_instant_accel() {
        let s = step_kinematics(&unlimited(), VelocityCommand::new(0.3, 0.0), 1.0);
        assert!((s.pose.x - 0.3).abs() < 1e-12);
        assert_eq!(s.pose.y, 0.0);
    }

    #[test]
    fn ramp_from_rest_is_accel_limited() {
        let st = RobotState::at_rest(Pose2D::new(0.0, 0.0, 0.0, Frame::Odom));
        let s = step_kinematics(&st, VelocityCommand::new(0.3, 0.0), 0.1);
        assert!((s.v - 0.05).abs() < 1e-12);
        let s = step_kinematics(&st, VelocityCommand::new(5.0, 0.0), 10.0);
        assert_eq!(s.v, 0.3);
    }

    #[test]
    fn pure_rotation() {
        let s = step_kinematics(&unlimited(), VelocityCommand::new(0.0, 1.0), PI);
        assert!((s.pose.theta.abs() - PI).abs() < 1e-9);
        assert_eq!((s.pose.x, s.pose.y), (0.0, 0.0));
    }

    #[test]
    fn quarter_arc() {
        let s = step_kinematics(&unlimited(), VelocityCommand::new(1.0, 1.0), PI / 2.0);
        assert!((s.pose.x - 1.0).abs() < 1e-12);
        assert!((s.pose.y - 1.0).abs() < 1e-12);
        assert!((s.pose.theta - PI / 2.0).abs() < 1e-12);
    }
}
