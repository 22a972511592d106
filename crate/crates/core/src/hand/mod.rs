//! Quasistatic model of the tendon-driven three-finger hand and its learned
//! inverse.

mod dataset;
mod equilibrium;
mod finger;
mod model;

pub use dataset::{
    dataset_hash, generate_dataset, read_dataset, write_dataset, DatasetOptions, TransitionRecord, DATASET_HEADER,
};
pub use equilibrium::{solve as solve_equilibrium, Equilibrium, SolverOptions};
pub use finger::{within_limits, FingerParams, HandLayout, Q_MAX, Q_MIN};
pub use model::{fit_inverse_model, rollout_cosines, FitOptions, Layer, InverseHandModel, ACTUATOR_SPEED_LIMIT};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};

use crate::posemath::{vee, Pose, Twist};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HandError {
    #[error("joint angles ({q_p}, {q_d}) outside [0, pi/2]")]
    JointLimit { q_p: f64, q_d: f64 },
    #[error("contacts are collinear")]
    CollinearContacts,
    #[error("no configuration keeps the contact triangle (violation {violation} mm)")]
    InfeasibleTriangle { violation: f64 },
    #[error("equilibrium did not converge in {iterations} iterations (violation {violation}, gradient {gradient})")]
    NonConvergence { iterations: usize, violation: f64, gradient: f64 },
    #[error("unreachable: {0}")]
    Unreachable(&'static str),
    #[error("invalid hand parameters: {0}")]
    InvalidParams(&'static str),
    #[error("training diverged (loss {0})")]
    DivergedTraining(f64),
    #[error("dataset has {infeasible} infeasible samples out of {attempted}")]
    TooManyInfeasible { infeasible: usize, attempted: usize },
    #[error("model or dataset format error: {0}")]
    Format(String),
}

/// Joint angles and actuator positions of every finger.
#[derive(Clone, Debug, PartialEq)]
pub struct HandConfig {
    pub q: Vec<[f64; 2]>,
    pub a: Vec<f64>,
}

/// Fingertip contacts in the hand frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactSet {
    pub p: [Vector3<f64>; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactTriangle {
    pub t12: f64,
    pub t23: f64,
    pub t31: f64,
}

impl ContactTriangle {
    pub fn as_array(&self) -> [f64; 3] {
        [self.t12, self.t23, self.t31]
    }

    pub fn max_abs_diff(&self, other: &ContactTriangle) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_valid(&self) -> bool {
        let [a, b, c] = self.as_array();
        a + b > c && b + c > a && c + a > b
    }
}

fn check_collinear(p: &ContactSet) -> Result<Vector3<f64>, HandError> {
    let e1 = p.p[1] - p.p[0];
    let e2 = p.p[2] - p.p[0];
    let n = e1.cross(&e2);
    let scale = e1.norm_squared().max(e2.norm_squared());
    if !(n.norm() > 1e-9 * scale) {
        return Err(HandError::CollinearContacts);
    }
    Ok(n)
}

pub fn contact_triangle(p: &ContactSet) -> Result<ContactTriangle, HandError> {
    check_collinear(p)?;
    Ok(ContactTriangle {
        t12: (p.p[0] - p.p[1]).norm(),
        t23: (p.p[1] - p.p[2]).norm(),
        t31: (p.p[2] - p.p[0]).norm(),
    })
}

/// Gram-Schmidt frame of the contacts: origin at the centroid, x along
/// p2 - p1, z normal to the contact plane.
pub fn object_frame(p: &ContactSet) -> Result<Pose, HandError> {
    let n = check_collinear(p)?;
    let x = (p.p[1] - p.p[0]).normalize();
    let z = n.normalize();
    let y = z.cross(&x);
    let origin = (p.p[0] + p.p[1] + p.p[2]) / 3.0;
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Ok(Pose::new(r, origin))
}

/// Rate of the element-wise frame difference: the angular part is the
/// skew part of (R1 - R0) R0^T, the linear part the origin difference.
pub fn frame_rate(x0: &Pose, x1: &Pose, dt: f64) -> Twist {
    let dr = x1.rotation.matrix() - x0.rotation.matrix();
    let w = dr * x0.rotation.matrix().transpose();
    Twist::new(vee(&w) / dt, (x1.translation - x0.translation) / dt)
}

/// Grasped state: configuration, the held triangle, and current contacts.
#[derive(Clone, Debug, PartialEq)]
pub struct HandState {
    pub config: HandConfig,
    pub triangle: ContactTriangle,
    pub contacts: ContactSet,
    pub frame: Pose,
}

#[derive(Clone, Debug)]
pub struct Hand {
    pub fingers: Vec<FingerParams>,
    pub solver: SolverOptions,
}

impl Default for Hand {
    fn default() -> Self {
        Self::new(&HandLayout::default())
    }
}

/// A planned grasp: where the hand frame sits in the object frame and the
/// resulting hand state.
#[derive(Clone, Debug)]
pub struct GraspPlan {
    pub object_to_hand: Pose,
    pub state: HandState,
}

impl Hand {
    pub fn new(layout: &HandLayout) -> Self {
        Self {
            fingers: layout.fingers(),
            solver: SolverOptions::default(),
        }
    }

    pub fn contacts_of(&self, q: &[[f64; 2]]) -> ContactSet {
        ContactSet {
            p: [self.fingers[0].tip(&q[0]), self.fingers[1].tip(&q[1]), self.fingers[2].tip(&q[2])],
        }
    }

    /// State at joint angles `q`, with actuators consistent with the tendons.
    pub fn state_at(&self, q: &[[f64; 2]]) -> Result<HandState, HandError> {
        for qi in q {
            if !within_limits(qi) {
                return Err(HandError::JointLimit { q_p: qi[0], q_d: qi[1] });
            }
        }
        let contacts = self.contacts_of(q);
        Ok(HandState {
            config: HandConfig {
                q: q.to_vec(),
                a: self.fingers.iter().zip(q).map(|(f, qi)| f.actuator_for(qi)).collect(),
            },
            triangle: contact_triangle(&contacts)?,
            frame: object_frame(&contacts)?,
            contacts,
        })
    }

    pub fn equilibrium(
        &self,
        q0: &HandConfig,
        a: &[f64],
        triangle: Option<&ContactTriangle>,
    ) -> Result<Equilibrium, HandError> {
        solve_equilibrium(&self.fingers, &q0.q, a, triangle, &self.solver)
    }

    /// Integrates the actuators by `a_dot * dt`, re-solves with the triangle
    /// held, and returns the new state with the frame rate.
    pub fn step(&self, state: &HandState, a_dot: &[f64; 3], dt: f64) -> Result<(HandState, Twist), HandError> {
        if !(dt > 0.0) {
            return Err(HandError::InvalidParams("dt must be positive"));
        }
        let a: Vec<f64> = state.config.a.iter().zip(a_dot).map(|(a, d)| a + d * dt).collect();
        let eq = self.equilibrium(&state.config, &a, Some(&state.triangle))?;
        let contacts = self.contacts_of(&eq.q);
        let frame = object_frame(&contacts)?;
        let xdot = frame_rate(&state.frame, &frame, dt);
        Ok((
            HandState {
                config: HandConfig { q: eq.q, a },
                triangle: state.triangle,
                contacts,
                frame,
            },
            xdot,
        ))
    }

    /// Places the palm so each finger plane passes through its contact and
    /// solves finger IK. Contacts are given in the object frame on a common
    /// plane normal to the object z-axis; the hand approaches along -z.
    pub fn plan_grasp(&self, contacts: &[Vector3<f64>; 3]) -> Result<GraspPlan, HandError> {
        let pts: Vec<Vector2<f64>> = contacts.iter().map(|c| c.xy()).collect();
        let z0 = contacts[0].z;
        if contacts.iter().any(|c| (c.z - z0).abs() > 1e-9) {
            return Err(HandError::Unreachable("grasp contacts must share a plane"));
        }
        let f = fermat_point(&pts).ok_or(HandError::Unreachable("contact triangle has an angle of 120 degrees or more"))?;
        let x_axis = (pts[0] - f).normalize();
        // Hand frame in object coordinates: z down, x towards contact 0.
        let hx = Vector3::new(x_axis.x, x_axis.y, 0.0);
        let hz = -Vector3::z();
        let hy = hz.cross(&hx);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[hx, hy, hz]));
        let mut best: Option<(f64, f64, Vec<[f64; 2]>)> = None;
        for step in 0..=520 {
            let depth = 20.0 + 0.25 * step as f64;
            let obj_to_hand = Pose::new(rot, Vector3::new(f.x, f.y, z0 + depth));
            let inv = obj_to_hand.inverse();
            let mut qs = Vec::with_capacity(3);
            for (finger, c) in self.fingers.iter().zip(contacts) {
                match finger.ik(&inv.transform_point(c)) {
                    Ok(q) => qs.push(q),
                    Err(_) => break,
                }
            }
            if qs.len() < 3 {
                continue;
            }
            let margin = qs
                .iter()
                .flat_map(|q| [q[0] - Q_MIN, Q_MAX - q[0], q[1] - Q_MIN, Q_MAX - q[1]])
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().map_or(true, |b| margin > b.0) {
                best = Some((margin, depth, qs));
            }
        }
        let (_, depth, q) = best.ok_or(HandError::Unreachable("contacts outside the hand workspace"))?;
        let object_to_hand = Pose::new(rot, Vector3::new(f.x, f.y, z0 + depth));
        Ok(GraspPlan {
            object_to_hand,
            state: self.state_at(&q)?,
        })
    }
}

/// Point whose directions to the three vertices are 120 degrees apart, or
/// None when some angle of the triangle reaches 120 degrees.
pub fn fermat_point(p: &[Vector2<f64>]) -> Option<Vector2<f64>> {
    for i in 0..3 {
        let u = p[(i + 1) % 3] - p[i];
        let v = p[(i + 2) % 3] - p[i];
        let cos = u.dot(&v) / (u.norm() * v.norm());
        if cos <= -0.5 + 1e-9 {
            return None;
        }
    }
    // Weiszfeld iteration on the geometric median.
    let mut x = (p[0] + p[1] + p[2]) / 3.0;
    for _ in 0..10_000 {
        let mut num = Vector2::zeros();
        let mut den = 0.0;
        for q in p {
            let d = (q - x).norm().max(1e-15);
            num += q / d;
            den += 1.0 / d;
        }
        let next = num / den;
        let moved = (next - x).norm();
        x = next;
        if moved < 1e-13 {
            break;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grasp_contacts(d_o: f64, w: f64) -> [Vector3<f64>; 3] {
        let s = d_o / 2.0;
        [Vector3::new(s, 0.0, 0.0), Vector3::new(-s, -w, 0.0), Vector3::new(-s, w, 0.0)]
    }

    #[test]
    fn triangle_examples() {
        let p = ContactSet { p: [Vector3::zeros(), Vector3::x(), Vector3::y()] };
        let t = contact_triangle(&p).unwrap();
        assert_eq!(t.t12, 1.0);
        assert!((t.t23 - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.t31, 1.0);
        let line = ContactSet { p: [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0] };
        assert_eq!(contact_triangle(&line), Err(HandError::CollinearContacts));
    }

    #[test]
    fn object_frame_conventions() {
        let p = ContactSet { p: [Vector3::zeros(), Vector3::new(3.0, 0.0, 0.0), Vector3::new(0.0, 3.0, 0.0)] };
        let x = object_frame(&p).unwrap();
        assert!((x.rotation.matrix() - Matrix3::identity()).amax() < 1e-15);
        assert!((x.translation - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
        let swapped = ContactSet { p: [p.p[0], p.p[2], p.p[1]] };
        let y = object_frame(&swapped).unwrap();
        assert!((y.rotation * Vector3::z() + Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn object_frame_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut v = || Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let p = ContactSet { p: [v(), v(), v()] };
            let g = Pose::exp(&Twist::new(v() * 0.05, v()));
            let q = ContactSet { p: p.p.map(|x| g.transform_point(&x)) };
            let a = g.compose(&object_frame(&p).unwrap());
            let b = object_frame(&q).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9);
        }
    }

    #[test]
    fn fermat_point_angles() {
        let pts = [Vector2::new(15.0, 0.0), Vector2::new(-15.0, -7.5), Vector2::new(-15.0, 7.5)];
        let f = fermat_point(&pts).unwrap();
        for i in 0..3 {
            let u = (pts[i] - f).normalize();
            let v = (pts[(i + 1) % 3] - f).normalize();
            assert!((u.dot(&v) + 0.5).abs() < 1e-9);
        }
        let obtuse = [Vector2::new(0.0, 0.0), Vector2::new(10.0, 0.5), Vector2::new(-10.0, 0.5)];
        assert!(fermat_point(&obtuse).is_none());
    }

    #[test]
    fn grasp_spans_object_width() {
        let hand = Hand::default();
        let plan = hand.plan_grasp(&grasp_contacts(30.0, 7.5)).unwrap();
        let world = plan.state.contacts.p.map(|p| plan.object_to_hand.transform_point(&p));
        assert!((world[0].x - world[1].x - 30.0).abs() < 1e-9);
        assert!((world[2].y - world[1].y - 15.0).abs() < 1e-9);
        // The planned state is an equilibrium of its own actuators.
        let eq = hand.equilibrium(&plan.state.config, &plan.state.config.a, Some(&plan.state.triangle)).unwrap();
        for (a, b) in eq.q.iter().zip(&plan.state.config.q) {
            assert!((a[0] - b[0]).abs() < 1e-7 && (a[1] - b[1]).abs() < 1e-7);
        }
    }

    #[test]
    fn grasp_too_wide_is_unreachable() {
        assert!(Hand::default().plan_grasp(&grasp_contacts(400.0, 7.5)).is_err());
    }

    #[test]
    fn zero_actuation_step_is_still() {
        let hand = Hand::default();
        let plan = hand.plan_grasp(&grasp_contacts(30.0, 7.5)).unwrap();
        let (next, xdot) = hand.step(&plan.state, &[0.0; 3], 1.0 / 30.0).unwrap();
        assert!(next.frame.max_abs_diff(&plan.state.frame) < 1e-8);
        assert!(xdot.omega.norm() < 1e-6 && xdot.v.norm() < 1e-6);
    }

    #[test]
    fn symmetric_actuation_translates() {
        let hand = Hand::default();
        // Equilateral contacts centred on the palm axis.
        let r = 12.0;
        let c = [0.0f64, 120.0, 240.0].map(|d: f64| {
            let a = (-d).to_radians();
            Vector3::new(r * a.cos(), r * a.sin(), 0.0)
        });
        let plan = hand.plan_grasp(&c).unwrap();
        let (_, xdot) = hand.step(&plan.state, &[0.3; 3], 1.0 / 30.0).unwrap();
        assert!(xdot.omega.norm() < 1e-6, "{:?}", xdot.omega);
        assert!(xdot.v.xy().norm() < 1e-6);
        assert!(xdot.v.z.abs() > 1e-3);
    }

    #[test]
    fn half_steps_agree_with_full_step() {
        let hand = Hand::default();
        let plan = hand.plan_grasp(&grasp_contacts(30.0, 7.5)).unwrap();
        let ad = [0.4, -0.3, 0.1];
        let mut errs = Vec::new();
        for &dt in &[0.2, 0.1, 0.05] {
            let (full, _) = hand.step(&plan.state, &ad, dt).unwrap();
            let (h1, _) = hand.step(&plan.state, &ad, dt / 2.0).unwrap();
            let (h2, _) = hand.step(&h1, &ad, dt / 2.0).unwrap();
            errs.push(full.frame.max_abs_diff(&h2.frame));
        }
        // Path independence makes the discrepancy solver-limited.
        assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");
    }

    #[test]
    fn steps_preserve_triangle() {
        let hand = Hand::default();
        let plan = hand.plan_grasp(&grasp_contacts(30.0, 7.5)).unwrap();
        let mut s = plan.state.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let ad = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let (n, _) = hand.step(&s, &ad, 1.0 / 30.0).unwrap();
            let t = contact_triangle(&n.contacts).unwrap();
            assert!(t.max_abs_diff(&plan.state.triangle) <= 1e-3);
            s = n;
        }
    }
}
