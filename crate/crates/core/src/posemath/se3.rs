use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::fmt;

use super::PoseError;

/// Angles within this distance of pi make the log map ambiguous.
pub const NEAR_PI_TOL: f64 = 1e-6;

/// Rigid transform. Translations are in millimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

/// Tangent vector of SE(3): angular part in radians, linear part in mm.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Twist) -> f64 {
        (self.omega - other.omega).amax().max((self.v - other.v).amax())
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew-symmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

// Coefficients of the SO(3)/SE(3) series: a = sin t / t, b = (1 - cos t) / t^2,
// c = (t - sin t) / t^3. Taylor expansions below 1e-4 keep full precision.
fn series(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation3::identity(), t)
    }

    pub fn from_rotation(r: Rotation3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Project the rotation back onto SO(3).
    pub fn renormalized(&self) -> Pose {
        let mut r = self.rotation;
        r.renormalize();
        Pose::new(r, self.translation)
    }

    /// Largest entry of |R^T R - I|.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.rotation.matrix();
        (m.transpose() * m - Matrix3::identity()).amax()
    }

    pub fn exp(xi: &Twist) -> Pose {
        let theta = xi.omega.norm();
        let (a, b, c) = series(theta);
        let w = hat(&xi.omega);
        let w2 = w * w;
        let r = Matrix3::identity() + w * a + w2 * b;
        let v = Matrix3::identity() + w * b + w2 * c;
        Pose {
            rotation: Rotation3::from_matrix_unchecked(r),
            translation: v * xi.v,
        }
    }

    pub fn log(&self) -> Result<Twist, PoseError> {
        let omega = rotation_log(&self.rotation)?;
        let theta = omega.norm();
        let w = hat(&omega);
        // V^-1 = I - W/2 + (1/t^2)(1 - a/(2b)) W^2
        // The closed form cancels badly for small angles; the series is
        // exact to rounding below 0.1 rad.
        let k = if theta < 0.1 {
            let t2 = theta * theta;
            1.0 / 12.0 + t2 * (1.0 / 720.0 + t2 * (1.0 / 30240.0 + t2 * (1.0 / 1209600.0 + t2 / 47900160.0)))
        } else {
            let (a, b, _) = series(theta);
            (1.0 - a / (2.0 * b)) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - w * 0.5 + w * w * k;
        Ok(Twist {
            omega,
            v: v_inv * self.translation,
        })
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dr = (self.rotation.matrix() - other.rotation.matrix()).amax();
        dr.max((self.translation - other.translation).amax())
    }

    /// Angle of the relative rotation between two poses.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation.rotation_to(&other.rotation).angle()
    }

    /// Chordal mean: averaged translations and sign-aligned quaternions.
    /// Only meaningful for poses that are close together.
    pub fn mean(poses: &[Pose]) -> Option<Pose> {
        let first = poses.first()?.quaternion();
        let mut q = nalgebra::Vector4::zeros();
        let mut t = Vector3::zeros();
        for p in poses {
            let qi = p.quaternion();
            let sign = if qi.coords.dot(&first.coords) < 0.0 { -1.0 } else { 1.0 };
            q += qi.coords * sign;
            t += p.translation;
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
        Some(Pose::new(q.to_rotation_matrix(), t / poses.len() as f64))
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    /// Seven whitespace separated numbers: `tx ty tz qx qy qz qw`.
    pub fn to_line(&self) -> String {
        let q = self.quaternion();
        let t = &self.translation;
        format!(
            "{} {} {} {} {} {} {}",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
    }

    pub fn parse_line(line: &str) -> Result<Pose, PoseError> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| PoseError::Parse(format!("{line:?}: {e}")))?;
        Pose::from_slice(&vals)
    }

    pub fn from_slice(vals: &[f64]) -> Result<Pose, PoseError> {
        if vals.len() != 7 {
            return Err(PoseError::Parse(format!(
                "expected 7 numbers, got {}",
                vals.len()
            )));
        }
        let q = nalgebra::Quaternion::new(vals[6], vals[3], vals[4], vals[5]);
        if !(q.norm() > 0.0) || vals.iter().any(|v| !v.is_finite()) {
            return Err(PoseError::Parse("non-finite or zero quaternion".into()));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Pose::new(
            uq.to_rotation_matrix(),
            Vector3::new(vals[0], vals[1], vals[2]),
        ))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Rotation vector of `r`. Errors within [`NEAR_PI_TOL`] of a half turn,
/// where the axis sign is ambiguous.
pub fn rotation_log(r: &Rotation3<f64>) -> Result<Vector3<f64>, PoseError> {
    let m = r.matrix();
    let s = vee(m); // sin(theta) * axis
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_t = s.norm();
    let theta = sin_t.atan2(cos_t);
    if (std::f64::consts::PI - theta) < NEAR_PI_TOL {
        return Err(PoseError::NearPiRotation { angle: theta });
    }
    if theta < 1e-4 {
        let t2 = theta * theta;
        return Ok(s * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0));
    }
    if cos_t > -0.5 {
        return Ok(s * (theta / sin_t));
    }
    // Close to pi sin(theta) is small, so recover the axis from the
    // symmetric part: R + R^T - 2cos I = 2(1 - cos) k k^T.
    let b = (m + m.transpose() - Matrix3::identity() * (2.0 * cos_t)) / (2.0 * (1.0 - cos_t));
    let i = (0..3)
        .max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)]))
        .unwrap_or(0);
    let mut k = b.column(i).into_owned() / b[(i, i)].max(0.0).sqrt();
    k /= k.norm();
    if k.dot(&s) < 0.0 {
        k = -k;
    }
    Ok(k * theta)
}

/// Counts compositions and re-orthonormalizes the accumulated rotation every
/// `period` steps.
#[derive(Clone, Debug)]
pub struct PoseChain {
    pose: Pose,
    count: u64,
    period: u64,
}

impl PoseChain {
    pub const DEFAULT_PERIOD: u64 = 100;

    pub fn new(start: Pose) -> Self {
        Self {
            pose: start,
            count: 0,
            period: Self::DEFAULT_PERIOD,
        }
    }

    pub fn with_period(start: Pose, period: u64) -> Self {
        Self {
            pose: start,
            count: 0,
            period: period.max(1),
        }
    }

    /// Left-multiply: `pose <- delta * pose`.
    pub fn push_left(&mut self, delta: &Pose) {
        self.pose = delta.compose(&self.pose);
        self.bump();
    }

    /// Right-multiply: `pose <- pose * delta`.
    pub fn push_right(&mut self, delta: &Pose) {
        self.pose = self.pose.compose(delta);
        self.bump();
    }

    fn bump(&mut self) {
        self.count += 1;
        if self.count % self.period == 0 {
            self.pose = self.pose.renormalized();
        }
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn compositions(&self) -> u64 {
        self.count
    }
}
