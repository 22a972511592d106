//! Quasistatic plant: imprecise arm, compliance springs, peg-hole contact,
//! jamming and success detection.

pub mod contact;
mod trace;

pub use contact::{min_clearance, resolve, Compliance, Contact, ContactGeometry, RelConfig, Resolution, Section, Side};
pub use trace::{parse_trace, TraceRecord, TraceSummary};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{HoleGeometry, PegGeometry, Point2};
use crate::hand::{GraspPlan, Hand, HandError, HandState};
use crate::posemath::Pose;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("contact projection did not converge in {iterations} sweeps")]
    SolverFailure { iterations: usize },
    #[error("end effector left the workspace at {0:?}")]
    WorkspaceExceeded([f64; 3]),
    #[error("grasp failed: {0}")]
    GraspInfeasible(String),
    #[error("hand: {0}")]
    Hand(#[from] HandError),
    #[error("object is not grasped")]
    NotGrasped,
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
}

/// Named compliance settings matching the ablation table rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompliancePreset {
    Compliant,
    RigidHandCompliantArm,
    RigidHandRigidArmCompliantHole,
    AllRigid,
}

impl CompliancePreset {
    pub const ALL: [CompliancePreset; 4] = [
        CompliancePreset::Compliant,
        CompliancePreset::RigidHandCompliantArm,
        CompliancePreset::RigidHandRigidArmCompliantHole,
        CompliancePreset::AllRigid,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CompliancePreset::Compliant => "compliant",
            CompliancePreset::RigidHandCompliantArm => "rigid_hand_compliant_arm",
            CompliancePreset::RigidHandRigidArmCompliantHole => "rigid_hand_rigid_arm_compliant_hole",
            CompliancePreset::AllRigid => "all_rigid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn config(&self) -> ComplianceConfig {
        let (hand, arm, hole) = match self {
            CompliancePreset::Compliant => (true, true, false),
            CompliancePreset::RigidHandCompliantArm => (false, true, false),
            CompliancePreset::RigidHandRigidArmCompliantHole => (false, false, true),
            CompliancePreset::AllRigid => (false, false, false),
        };
        ComplianceConfig {
            arm_compliant: arm,
            hand_compliant: hand,
            hole_compliant: hole,
            ..ComplianceConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplianceConfig {
    pub arm_compliant: bool,
    pub hand_compliant: bool,
    pub hole_compliant: bool,
    /// Hand spring stiffness (N/mm).
    pub k_c: f64,
    /// Arm stiffness when compliant (N/mm).
    pub k_arm: f64,
    /// Hole mount stiffness when compliant (N/mm).
    pub hole_spring: f64,
    pub mu: f64,
}

impl Default for ComplianceConfig {
    fn default() -> Self {
        Self {
            arm_compliant: true,
            hand_compliant: true,
            hole_compliant: false,
            k_c: 5.0,
            k_arm: 3.0,
            hole_spring: 5.0,
            mu: 0.3,
        }
    }
}

impl ComplianceConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let check = |flag: bool, k: f64, name: &str| {
            if flag && !(k > 0.0 && k.is_finite()) {
                Err(WorldError::InvalidConfig(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        check(self.hand_compliant, self.k_c, "k_c")?;
        check(self.arm_compliant, self.k_arm, "k_arm")?;
        check(self.hole_compliant, self.hole_spring, "hole_spring")?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(WorldError::InvalidConfig("mu must be non-negative".into()));
        }
        Ok(())
    }

    pub fn any_compliant(&self) -> bool {
        self.arm_compliant || self.hand_compliant || self.hole_compliant
    }

    /// Series compliance of the (u1, u2, z, theta1, theta2) coordinates; tilt
    /// springs act through `lever`.
    pub fn compliance(&self, lever: f64) -> Compliance {
        let mut lat = 0.0;
        let mut vert = 0.0;
        if self.hand_compliant {
            lat += 1.0 / self.k_c;
            vert += 1.0 / self.k_c;
        }
        if self.arm_compliant {
            lat += 1.0 / self.k_arm;
            vert += 1.0 / self.k_arm;
        }
        if self.hole_compliant {
            lat += 1.0 / self.hole_spring;
        }
        let tilt = lat / (lever * lever);
        [lat, lat, vert, tilt, tilt]
    }

    /// Share of a lateral or tilt deflection taken up by the hole mount.
    pub fn hole_share(&self) -> f64 {
        let c = self.compliance(1.0);
        if self.hole_compliant && c[0] > 0.0 {
            (1.0 / self.hole_spring) / c[0]
        } else {
            0.0
        }
    }
}

/// Position-controlled arm with a constant per-trial bias and fresh jitter
/// on every executed command.
#[derive(Clone, Debug)]
pub struct ArmModel {
    pub bias: Vector3<f64>,
    pub noise: f64,
    pub workspace: (Vector3<f64>, Vector3<f64>),
    commanded: Pose,
    actual: Pose,
    jitter: Vector3<f64>,
    rng: ChaCha8Rng,
}

pub const MAX_ARM_BIAS: f64 = 26.0;

/// Largest per-command change of the jitter, as a fraction of its bound.
pub const JITTER_STEP: f64 = 0.2;

/// Uniform sample in the ball of radius `r`.
pub fn sample_bias(rng: &mut impl Rng, r: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        if v.norm_squared() <= 1.0 {
            return v * r;
        }
    }
}

impl ArmModel {
    pub fn new(bias: Vector3<f64>, noise: f64, start: Pose, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let mut arm = Self {
            bias,
            noise,
            workspace: (Vector3::new(-1000.0, -1000.0, -100.0), Vector3::new(1000.0, 1000.0, 1000.0)),
            commanded: start,
            actual: start,
            jitter: Vector3::zeros(),
            rng,
        };
        if noise > 0.0 {
            arm.jitter = Vector3::from_fn(|_, _| arm.rng.gen_range(-noise..=noise));
        }
        arm.actual = arm.realize(&start);
        arm
    }

    pub fn commanded(&self) -> &Pose {
        &self.commanded
    }

    pub fn actual(&self) -> &Pose {
        &self.actual
    }

    /// Tracking error drifts: a random walk reflected at `±noise` per axis.
    fn realize(&mut self, cmd: &Pose) -> Pose {
        let n = self.noise;
        if n > 0.0 {
            let s = n * JITTER_STEP;
            for i in 0..3 {
                let mut j = self.jitter[i] + self.rng.gen_range(-s..=s);
                if j > n {
                    j = 2.0 * n - j;
                } else if j < -n {
                    j = -2.0 * n - j;
                }
                self.jitter[i] = j;
            }
        }
        Pose::new(cmd.rotation, cmd.translation + self.bias + self.jitter)
    }

    /// Executes a world-frame delta on the commanded pose: rotation is
    /// applied on the left, translation added.
    pub fn execute(&mut self, delta: &Pose) -> Result<Pose, WorldError> {
        let cmd = Pose::new(delta.rotation * self.commanded.rotation, self.commanded.translation + delta.translation);
        self.execute_to(&cmd)
    }

    pub fn execute_to(&mut self, cmd: &Pose) -> Result<Pose, WorldError> {
        let t = cmd.translation;
        let (lo, hi) = &self.workspace;
        if !(0..3).all(|i| t[i] >= lo[i] && t[i] <= hi[i]) {
            return Err(WorldError::WorkspaceExceeded([t.x, t.y, t.z]));
        }
        self.commanded = *cmd;
        self.actual = self.realize(cmd);
        Ok(self.actual)
    }

    fn set(&mut self, commanded: Pose, actual: Pose) {
        self.commanded = commanded;
        self.actual = actual;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    /// Radius of the per-trial bias ball (mm).
    pub bias_radius: f64,
    /// Per-command jitter bound (mm).
    pub noise: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self { bias_radius: MAX_ARM_BIAS, noise: 0.5 }
    }
}

impl ArmConfig {
    /// Stiff industrial arm.
    pub fn rigid() -> Self {
        Self { bias_radius: 1.0, noise: 0.05 }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(0.0..=MAX_ARM_BIAS).contains(&self.bias_radius) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(WorldError::InvalidConfig(format!(
                "arm bias radius must be in [0, {MAX_ARM_BIAS}] mm and noise non-negative"
            )));
        }
        Ok(())
    }
}

/// Snapshot of the plant.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub peg_pose: Pose,
    pub hole_pose: Pose,
    /// Fingertip contacts in the hand frame while grasped.
    pub grasp: Option<crate::hand::ContactSet>,
    pub clock: f64,
    pub contact_report: Vec<Contact>,
    pub jammed: bool,
    pub blocked: bool,
    pub inserted_depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisturbanceKind {
    MoveHole,
    PushObject,
    PushArm,
}

impl DisturbanceKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "move_hole" => Some(Self::MoveHole),
            "push_object" => Some(Self::PushObject),
            "push_arm" => Some(Self::PushArm),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::MoveHole => "move_hole",
            Self::PushObject => "push_object",
            Self::PushArm => "push_arm",
        }
    }
}

#[derive(Clone, Debug)]
struct Grip {
    hand: HandState,
    /// Peg pose in the contact frame of the current hand state.
    peg_in_frame: Pose,
}

/// Outcome of one commanded motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    pub blocked: bool,
    pub fraction: f64,
    pub contacts: usize,
}

/// Tilt of a peg relative to the hole, split along the peg's own axes.
///
/// `yaw` is what remains of the relative rotation after removing the
/// smallest rotation taking the hole axis to the peg axis. `e1` is the peg's
/// first principal axis under that yaw and `e2 = z x e1`, both in the hole
/// frame. `theta[0]` grows as the peg top leans towards -e1 (a rotation
/// about -e2); `theta[1]` is the rotation about +e1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltFrame {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub theta: [f64; 2],
    pub yaw: Rotation3<f64>,
}

impl TiltFrame {
    pub fn new(rel_rot: &Rotation3<f64>, pi1: &Point2) -> Self {
        let a = rel_rot * Vector3::z();
        let tilt = Rotation3::rotation_between(&Vector3::z(), &a).unwrap_or_else(Rotation3::identity);
        let yaw = tilt.inverse() * rel_rot;
        let p = yaw * Vector3::new(pi1.x, pi1.y, 0.0);
        let e1 = Vector3::new(p.x, p.y, 0.0).normalize();
        let e2 = Vector3::z().cross(&e1);
        Self {
            e1,
            e2,
            theta: [(-a.dot(&e1)).atan2(a.z), (-a.dot(&e2)).atan2(a.z)],
            yaw,
        }
    }

    /// Angle of the yaw rotation about the hole axis.
    pub fn yaw_angle(&self) -> f64 {
        let m = self.yaw.matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    }
}

const TILT_SUCCESS: f64 = 2.0 * std::f64::consts::PI / 180.0;

pub fn check_inserted(state: &WorldState, hole: &HoleGeometry) -> bool {
    let a = state.hole_pose.rotation.inverse() * (state.peg_pose.rotation * Vector3::z());
    let tilt = a.z.clamp(-1.0, 1.0).acos();
    state.inserted_depth >= 0.95 * hole.depth && tilt <= TILT_SUCCESS
}

#[derive(Clone, Debug)]
pub struct World {
    pub peg: PegGeometry,
    pub hole: HoleGeometry,
    pub compliance: ComplianceConfig,
    pub hand: Hand,
    pub arm: ArmModel,
    pi1: Point2,
    pi2: Point2,
    w: Compliance,
    hole_nominal: Pose,
    grip: Option<Grip>,
    state: WorldState,
    /// Peg relative to the nominal hole: resolved and spring anchor.
    rel: RelConfig,
    anchor: RelConfig,
}

impl World {
    pub fn new(
        peg: PegGeometry,
        hole: HoleGeometry,
        compliance: ComplianceConfig,
        hand: Hand,
        arm: ArmModel,
        peg_start: Pose,
    ) -> Result<Self, WorldError> {
        compliance.validate()?;
        let mf = peg.frame().map_err(|e| WorldError::InvalidConfig(e.to_string()))?;
        let w = compliance.compliance(peg.bottom_offset().max(1.0));
        let hole_pose = hole.pose;
        let mut world = Self {
            pi1: mf.pi1,
            pi2: mf.pi2,
            w,
            hole_nominal: hole_pose,
            grip: None,
            state: WorldState {
                peg_pose: peg_start,
                hole_pose,
                grasp: None,
                clock: 0.0,
                contact_report: Vec::new(),
                jammed: false,
                blocked: false,
                inserted_depth: 0.0,
            },
            rel: RelConfig { u: [0.0; 2], z: 0.0, theta: [0.0; 2] },
            anchor: RelConfig { u: [0.0; 2], z: 0.0, theta: [0.0; 2] },
            peg,
            hole,
            compliance,
            hand,
            arm,
        };
        world.rel = world.relative(&peg_start);
        world.anchor = world.rel;
        world.state.inserted_depth = world.depth_of(&world.rel);
        Ok(world)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn is_grasped(&self) -> bool {
        self.grip.is_some()
    }

    pub fn hand_state(&self) -> Option<&HandState> {
        self.grip.as_ref().map(|g| &g.hand)
    }

    pub fn advance_clock(&mut self, dt: f64) {
        self.state.clock += dt;
    }

    pub fn inserted(&self) -> bool {
        check_inserted(&self.state, &self.hole)
    }

    pub fn contact_geometry(&self, e1: &Point2) -> ContactGeometry {
        let e2 = Point2::new(-e1.y, e1.x);
        let section = |peg_axis: &Point2, hole_axis: &Point2| {
            let (lo, hi) = self.peg.extents(peg_axis);
            let (wl, wh) = self.hole.walls(hole_axis);
            Section { peg_lo: lo, peg_hi: hi, wall_lo: wl, wall_hi: wh }
        };
        ContactGeometry {
            sections: [section(&self.pi1, e1), section(&self.pi2, &e2)],
            below: self.peg.bottom_offset(),
            above: self.peg.grasp_height,
            depth: self.hole.depth,
        }
    }

    fn section_axes(&self, rel_rot: &Rotation3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let f = TiltFrame::new(rel_rot, &self.pi1);
        (f.e1, f.e2)
    }

    fn relative(&self, peg_world: &Pose) -> RelConfig {
        let rel = self.hole_nominal.inverse().compose(peg_world);
        let f = TiltFrame::new(&rel.rotation, &self.pi1);
        RelConfig {
            u: [rel.translation.dot(&f.e1), rel.translation.dot(&f.e2)],
            z: rel.translation.z,
            theta: f.theta,
        }
    }

    /// Pose with configuration `cfg` and the yaw of `reference`.
    fn pose_of(&self, cfg: &RelConfig, reference: &Pose) -> Pose {
        let rel = self.hole_nominal.inverse().compose(reference);
        let TiltFrame { e1, e2, yaw, .. } = TiltFrame::new(&rel.rotation, &self.pi1);
        let a1 = (-e1 * cfg.theta[0].tan() - e2 * cfg.theta[1].tan() + Vector3::z()).normalize();
        let tilt = Rotation3::rotation_between(&Vector3::z(), &a1).unwrap_or_else(Rotation3::identity);
        let t = e1 * cfg.u[0] + e2 * cfg.u[1] + Vector3::z() * cfg.z;
        self.hole_nominal.compose(&Pose::new(tilt * yaw, t))
    }

    fn depth_of(&self, cfg: &RelConfig) -> f64 {
        let tilt_cos = 1.0 / (1.0 + cfg.theta[0].tan().powi(2) + cfg.theta[1].tan().powi(2)).sqrt();
        let bottom = cfg.z - self.peg.bottom_offset() * tilt_cos;
        let g = self.contact_geometry(&Point2::x());
        let inside = (0..2).all(|i| cfg.u[i] > g.sections[i].wall_lo && cfg.u[i] < g.sections[i].wall_hi);
        if inside {
            (-bottom).clamp(0.0, self.hole.depth)
        } else {
            0.0
        }
    }

    fn nominal_peg(&self, arm: &Pose, grip: &Grip) -> Pose {
        arm.compose(&grip.hand.frame).compose(&grip.peg_in_frame)
    }

    /// Closes the hand on the peg. `plan.object_to_hand` is the hand pose in
    /// the peg's manipulation frame (x along the first principal axis).
    /// The hand centres the peg as it closes, so the arm only needs to be
    /// within `capture` of the planned pose; `tilt` is a residual in-hand
    /// tilt about `tilt_axis` (peg frame).
    pub fn grasp(&mut self, plan: &GraspPlan, capture: f64, tilt: f64, tilt_axis: Vector3<f64>) -> Result<(), WorldError> {
        if self.grip.is_some() {
            return Err(WorldError::GraspInfeasible("already holding the object".into()));
        }
        let mrot = Rotation3::from_axis_angle(&Vector3::z_axis(), self.pi1.y.atan2(self.pi1.x));
        let hand_in_peg = Pose::from_rotation(mrot).compose(&plan.object_to_hand);
        let ideal = self.state.peg_pose.compose(&hand_in_peg);
        let off = self.arm.actual().translation - ideal.translation;
        if off.norm() > capture {
            return Err(WorldError::GraspInfeasible(format!("hand is {:.1} mm from the grasp pose", off.norm())));
        }
        let yaw = (self.arm.actual().rotation * ideal.rotation.inverse()).angle();
        if yaw > 0.5 {
            return Err(WorldError::GraspInfeasible(format!("hand is rotated {:.1} deg from the grasp pose", yaw.to_degrees())));
        }
        let mut peg_in_hand = hand_in_peg.inverse();
        if tilt != 0.0 {
            let axis = Unit::new_normalize(tilt_axis);
            peg_in_hand = peg_in_hand.compose(&Pose::from_rotation(Rotation3::from_axis_angle(&axis, tilt)));
        }
        let grip = Grip {
            peg_in_frame: plan.state.frame.inverse().compose(&peg_in_hand),
            hand: plan.state.clone(),
        };
        let peg = self.nominal_peg(self.arm.actual(), &grip);
        self.state.grasp = Some(grip.hand.contacts);
        self.grip = Some(grip);
        self.state.peg_pose = peg;
        self.rel = self.relative(&peg);
        self.anchor = self.rel;
        self.state.inserted_depth = self.depth_of(&self.rel);
        Ok(())
    }

    /// Commands the arm to an absolute end-effector pose.
    pub fn move_arm(&mut self, cmd: &Pose) -> Result<Motion, WorldError> {
        let old_cmd = *self.arm.commanded();
        let old_act = *self.arm.actual();
        let new_act = self.arm.execute_to(cmd)?;
        let Some(grip) = self.grip.clone() else {
            return Ok(Motion { blocked: false, fraction: 1.0, contacts: 0 });
        };
        let nominal = self.nominal_peg(&new_act, &grip);
        let m = self.settle(&nominal)?;
        if m.blocked {
            let f = m.fraction;
            self.arm.set(lerp_pose(&old_cmd, cmd, f), lerp_pose(&old_act, &new_act, f));
        }
        Ok(m)
    }

    /// Integrates the hand actuators for one period.
    pub fn actuate_hand(&mut self, a_dot: &[f64; 3], dt: f64) -> Result<Motion, WorldError> {
        let grip = self.grip.clone().ok_or(WorldError::NotGrasped)?;
        let (next, _) = self.hand.step(&grip.hand, a_dot, dt)?;
        let moved = Grip { peg_in_frame: grip.peg_in_frame, hand: next };
        let nominal = self.nominal_peg(self.arm.actual(), &moved);
        let before = (self.rel, self.anchor, self.state.clone());
        let m = self.settle(&nominal)?;
        if m.blocked {
            // The fingers stall against the hole: keep the previous hand state.
            (self.rel, self.anchor, self.state) = before;
            self.state.blocked = true;
            return Ok(m);
        }
        self.state.grasp = Some(moved.hand.contacts);
        self.grip = Some(moved);
        Ok(m)
    }

    /// Moves the spring anchor to `nominal` and resolves contacts.
    fn settle(&mut self, nominal: &Pose) -> Result<Motion, WorldError> {
        let target = self.relative(nominal);
        let geom = self.contact_geometry(&Point2::x());
        let z_before = self.rel.z;
        let res = resolve(&geom, &self.rel, &self.anchor, &target, &self.w, self.compliance.mu)?;
        let hole_share = self.compliance.hole_share();
        let d = res.config.to_vec() - res.anchor.to_vec();
        // Split the deflection between the peg side and the hole mount.
        let mut peg_cfg = res.config.to_vec();
        if hole_share > 0.0 {
            peg_cfg = res.anchor.to_vec() + d * (1.0 - hole_share);
            peg_cfg[contact::Z] = res.config.z;
            let ref_pose = self.hole_nominal.inverse().compose(nominal);
            let (e1, e2) = self.section_axes(&ref_pose.rotation);
            let shift = -(e1 * d[0] + e2 * d[1]) * hole_share;
            let r1 = Rotation3::from_axis_angle(&Unit::new_normalize(-e2), -d[3] * hole_share);
            let r2 = Rotation3::from_axis_angle(&Unit::new_normalize(e1), -d[4] * hole_share);
            self.state.hole_pose = self.hole_nominal.compose(&Pose::new(r1 * r2, shift));
        } else {
            self.state.hole_pose = self.hole_nominal;
        }
        let peg_rel = RelConfig::from_vec(&peg_cfg);
        let reference = if res.blocked { self.pose_of(&res.anchor, nominal) } else { *nominal };
        self.state.peg_pose = self.pose_of(&peg_rel, &reference);
        self.rel = res.config;
        self.anchor = res.anchor;
        self.state.inserted_depth = self.depth_of(&res.config);
        let descending = target.z < res.config.z - 1e-6;
        let stalled = res.blocked || (descending && z_before - res.config.z < 1e-4);
        let mut jammed = false;
        if stalled {
            for s in 0..2 {
                let on = |side: Side| res.contacts.iter().any(|c| c.section == s && c.side == side);
                let walls: Vec<&Contact> =
                    res.contacts.iter().filter(|c| c.section == s && matches!(c.side, Side::Low | Side::High)).collect();
                if on(Side::Low) && on(Side::High) && walls.iter().all(|c| c.sticking) {
                    jammed = true;
                }
            }
        }
        self.state.jammed = jammed;
        self.state.blocked = res.blocked;
        let n = res.contacts.len();
        self.state.contact_report = res.contacts;
        Ok(Motion { blocked: res.blocked, fraction: res.fraction, contacts: n })
    }

    pub fn disturb(&mut self, kind: DisturbanceKind, magnitude: Vector3<f64>) {
        if magnitude == Vector3::zeros() {
            return;
        }
        match kind {
            DisturbanceKind::MoveHole => {
                self.hole_nominal.translation += magnitude;
                self.state.hole_pose.translation += magnitude;
            }
            DisturbanceKind::PushObject => match &mut self.grip {
                Some(g) => {
                    let in_frame = (self.arm.actual().compose(&g.hand.frame)).rotation.inverse() * magnitude;
                    g.peg_in_frame.translation += in_frame;
                    let p = self.nominal_peg(self.arm.actual(), &self.grip.clone().unwrap());
                    self.state.peg_pose = p;
                }
                None => self.state.peg_pose.translation += magnitude,
            },
            DisturbanceKind::PushArm => {
                self.arm.bias += magnitude;
                let (c, a) = (*self.arm.commanded(), *self.arm.actual());
                self.arm.set(c, Pose::new(a.rotation, a.translation + magnitude));
                if let Some(g) = &self.grip {
                    self.state.peg_pose = self.nominal_peg(self.arm.actual(), g);
                }
            }
        }
        self.rel = self.relative(&self.state.peg_pose);
        self.anchor = match &self.grip {
            Some(g) => self.relative(&self.nominal_peg(self.arm.actual(), g)),
            None => self.rel,
        };
        self.state.inserted_depth = self.depth_of(&self.rel);
    }

    /// Trace line for the current tick.
    pub fn trace_record(&self, tag: &str) -> TraceRecord {
        TraceRecord {
            t: self.state.clock,
            tag: tag.to_string(),
            peg_pose: self.state.peg_pose,
            hole_pose: self.state.hole_pose,
            depth: self.state.inserted_depth,
            jammed: self.state.jammed,
        }
    }
}

fn lerp_pose(a: &Pose, b: &Pose, f: f64) -> Pose {
    let q = a.quaternion().slerp(&b.quaternion(), f);
    Pose::new(q.to_rotation_matrix(), a.translation + (b.translation - a.translation) * f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{circle, FaceCloud};
    use crate::hand::Hand;

    fn setup(preset: CompliancePreset) -> World {
        let peg = PegGeometry::new(FaceCloud::new(circle(15.0, 360)).unwrap(), 80.0, 40.0).unwrap();
        let hole = HoleGeometry::for_peg(&peg, 0.25, 20.0, Pose::from_translation(Vector3::new(300.0, 0.0, 0.0))).unwrap();
        let start = Pose::from_translation(Vector3::new(0.0, 0.0, 40.0));
        let arm = ArmModel::new(Vector3::zeros(), 0.0, Pose::identity(), 1);
        World::new(peg, hole, preset.config(), Hand::default(), arm, start).unwrap()
    }

    #[test]
    fn presets_round_trip_names() {
        for p in CompliancePreset::ALL {
            assert_eq!(CompliancePreset::parse(p.name()), Some(p));
        }
        let all = CompliancePreset::AllRigid.config();
        assert_eq!(all.compliance(40.0), [0.0; 5]);
        assert!(!all.any_compliant());
        let hole = CompliancePreset::RigidHandRigidArmCompliantHole.config();
        assert_eq!(hole.hole_share(), 1.0);
        assert_eq!(hole.compliance(40.0)[2], 0.0);
    }

    #[test]
    fn arm_bias_and_noise() {
        let mut arm = ArmModel::new(Vector3::new(10.0, 0.0, 0.0), 0.0, Pose::identity(), 3);
        for k in 0..5 {
            let cmd = Pose::from_translation(Vector3::new(k as f64, 2.0, 3.0));
            let act = arm.execute_to(&cmd).unwrap();
            assert_eq!(act.translation - cmd.translation, Vector3::new(10.0, 0.0, 0.0));
        }
        let mut exact = ArmModel::new(Vector3::zeros(), 0.0, Pose::identity(), 3);
        let cmd = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(exact.execute_to(&cmd).unwrap(), cmd);
        assert!(matches!(
            exact.execute_to(&Pose::from_translation(Vector3::new(5000.0, 0.0, 0.0))),
            Err(WorldError::WorkspaceExceeded(_))
        ));
        let mut noisy = ArmModel::new(Vector3::zeros(), 0.5, Pose::identity(), 3);
        for _ in 0..100 {
            let a = noisy.execute_to(&cmd).unwrap();
            assert!((a.translation - cmd.translation).amax() <= 0.5);
        }
    }

    #[test]
    fn sampled_biases_stay_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert!(sample_bias(&mut rng, MAX_ARM_BIAS).norm() <= MAX_ARM_BIAS);
        }
    }

    #[test]
    fn inserted_threshold() {
        let w = setup(CompliancePreset::Compliant);
        let mut s = w.state().clone();
        assert!(!check_inserted(&s, &w.hole));
        let coaxial = |depth: f64| Pose::from_translation(Vector3::new(300.0, 0.0, 40.0 - depth));
        s.peg_pose = coaxial(20.0);
        s.inserted_depth = 20.0;
        assert!(check_inserted(&s, &w.hole));
        s.inserted_depth = 18.0;
        assert!(!check_inserted(&s, &w.hole));
    }

    #[test]
    fn relative_config_roundtrip() {
        let w = setup(CompliancePreset::Compliant);
        let r = Rotation3::from_euler_angles(0.05, -0.08, 0.7);
        let p = Pose::new(r, Vector3::new(303.0, -2.0, 55.0));
        let c = w.relative(&p);
        let back = w.pose_of(&c, &p);
        assert!(back.max_abs_diff(&p) < 1e-12);
        let mut c2 = c;
        c2.theta[0] += 0.01;
        c2.u[1] += 0.5;
        let moved = w.relative(&w.pose_of(&c2, &p));
        let err = (moved.to_vec() - c2.to_vec()).amax();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn disturb_moves_hole_and_zero_is_noop() {
        let mut w = setup(CompliancePreset::Compliant);
        let before = w.state().clone();
        w.disturb(DisturbanceKind::MoveHole, Vector3::zeros());
        assert_eq!(w.state(), &before);
        w.disturb(DisturbanceKind::MoveHole, Vector3::new(30.0, 0.0, 0.0));
        assert_eq!(w.state().hole_pose.translation.x, 330.0);
    }
}
