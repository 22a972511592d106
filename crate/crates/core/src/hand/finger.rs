use nalgebra::{Matrix3x2, Rotation3, Vector2, Vector3};
use std::f64::consts::FRAC_PI_2;

use super::HandError;
use crate::posemath::Pose;

/// Slack on joint-limit checks for values produced by the solver.
pub const LIMIT_TOL: f64 = 1e-9;

pub const Q_MIN: f64 = 0.0;
pub const Q_MAX: f64 = FRAC_PI_2;

/// Planar two-link finger. The base pose maps finger-plane coordinates
/// (along the straight finger, towards the flexion side, normal) to the hand
/// frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerParams {
    pub k_p: f64,
    pub k_d: f64,
    pub r_a: f64,
    pub r_p: f64,
    pub r_d: f64,
    pub l_p: f64,
    pub l_d: f64,
    pub base_pose: Pose,
}

impl Default for FingerParams {
    fn default() -> Self {
        Self {
            k_p: 1.0,
            k_d: 1.5,
            r_a: 5.0,
            r_p: 5.0,
            r_d: 5.0,
            l_p: 40.0,
            l_d: 40.0,
            base_pose: Pose::identity(),
        }
    }
}

pub fn within_limits(q: &[f64; 2]) -> bool {
    q.iter().all(|&x| (Q_MIN - LIMIT_TOL..=Q_MAX + LIMIT_TOL).contains(&x))
}

impl FingerParams {
    pub fn validate(&self) -> Result<(), HandError> {
        let vals = [self.k_p, self.k_d, self.r_a, self.r_p, self.r_d, self.l_p, self.l_d];
        if vals.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(HandError::InvalidParams("finger parameters must be positive"))
        }
    }

    /// Fingertip in the finger plane.
    pub fn planar_tip(&self, q: &[f64; 2]) -> Vector2<f64> {
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        Vector2::new(self.l_p * c1 + self.l_d * c12, self.l_p * s1 + self.l_d * s12)
    }

    /// Fingertip in the hand frame, without the joint-limit check.
    pub fn tip(&self, q: &[f64; 2]) -> Vector3<f64> {
        let t = self.planar_tip(q);
        self.base_pose.transform_point(&Vector3::new(t.x, t.y, 0.0))
    }

    pub fn fk(&self, q: &[f64; 2]) -> Result<Vector3<f64>, HandError> {
        if !within_limits(q) {
            return Err(HandError::JointLimit { q_p: q[0], q_d: q[1] });
        }
        Ok(self.tip(q))
    }

    /// d tip / d (q_p, q_d) in the hand frame.
    pub fn jacobian(&self, q: &[f64; 2]) -> Matrix3x2<f64> {
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        let r = self.base_pose.rotation.matrix();
        let a = r.column(0);
        let b = r.column(1);
        let d_dp = a * (-self.l_p * s1 - self.l_d * s12) + b * (self.l_p * c1 + self.l_d * c12);
        let d_dd = a * (-self.l_d * s12) + b * (self.l_d * c12);
        Matrix3x2::from_columns(&[d_dp, d_dd])
    }

    pub fn energy(&self, q: &[f64; 2]) -> f64 {
        0.5 * (self.k_p * q[0] * q[0] + self.k_d * q[1] * q[1])
    }

    pub fn energy_gradient(&self, q: &[f64; 2]) -> [f64; 2] {
        [self.k_p * q[0], self.k_d * q[1]]
    }

    /// Velocity form of the tendon relation.
    pub fn tendon_residual(&self, q_dot: &[f64; 2], a_dot: f64) -> f64 {
        self.r_a * a_dot - self.r_p * q_dot[0] - self.r_d * q_dot[1]
    }

    /// Actuator position consistent with `q` (reference a = 0 at q = 0).
    pub fn actuator_for(&self, q: &[f64; 2]) -> f64 {
        (self.r_p * q[0] + self.r_d * q[1]) / self.r_a
    }

    /// Two-link inverse kinematics with a non-negative distal angle.
    pub fn ik(&self, target: &Vector3<f64>) -> Result<[f64; 2], HandError> {
        let local = self.base_pose.inverse().transform_point(target);
        if local.z.abs() > 1e-6 * (self.l_p + self.l_d) {
            return Err(HandError::Unreachable("target is off the finger plane"));
        }
        let (x, y) = (local.x, local.y);
        let d2 = x * x + y * y;
        let c2 = (d2 - self.l_p * self.l_p - self.l_d * self.l_d) / (2.0 * self.l_p * self.l_d);
        if !(-1.0..=1.0).contains(&c2) {
            return Err(HandError::Unreachable("target outside finger reach"));
        }
        let q_d = c2.acos();
        let q_p = y.atan2(x) - (self.l_d * q_d.sin()).atan2(self.l_p + self.l_d * q_d.cos());
        let q = [q_p, q_d];
        if !within_limits(&q) {
            return Err(HandError::Unreachable("target needs joints beyond their limits"));
        }
        Ok([q_p.clamp(Q_MIN, Q_MAX), q_d.clamp(Q_MIN, Q_MAX)])
    }
}

/// Palm layout of the symmetric three-finger hand.
#[derive(Clone, Debug, PartialEq)]
pub struct HandLayout {
    /// Radius of the finger bases around the palm axis (mm).
    pub base_radius: f64,
    /// Outward tilt of the straight finger away from the approach axis (rad).
    pub splay: f64,
    pub finger: FingerParams,
}

impl Default for HandLayout {
    fn default() -> Self {
        Self {
            base_radius: 60.0,
            splay: 40f64.to_radians(),
            finger: FingerParams::default(),
        }
    }
}

impl HandLayout {
    /// Base pose of the finger at `azimuth` about the palm axis. The hand
    /// frame has z along the approach direction.
    pub fn base_pose(&self, azimuth: f64) -> Pose {
        let u = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
        let z = Vector3::z();
        let (s, c) = self.splay.sin_cos();
        let a = z * c + u * s;
        let b = z * s - u * c;
        let n = a.cross(&b);
        let rot = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[a, b, n]));
        Pose::new(rot, u * self.base_radius)
    }

    pub fn fingers(&self) -> Vec<FingerParams> {
        (0..3)
            .map(|i| FingerParams {
                base_pose: self.base_pose(std::f64::consts::TAU * i as f64 / 3.0),
                ..self.finger.clone()
            })
            .collect()
    }
}
