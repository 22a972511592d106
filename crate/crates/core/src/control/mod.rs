//! Closed-loop insertion controller and its ablation modes.
//!
//! The controller talks to the plant only through [`Plant`]: tracker
//! observations in, arm and hand commands out.

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{InsertionParams, ManipulationFrame, PegGeometry, Point2};
use crate::hand::{GraspPlan, Hand, InverseHandModel};
use crate::posemath::{Observation, Pose, TargetId};
use crate::world::TiltFrame;

pub const TICK_BUDGET: usize = 5000;
/// Consecutive lateral sign flips reported as an oscillation.
pub const N_OSC: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Full,
    /// No in-hand rotation.
    Naive,
    /// Plan once from the first observations and never look again.
    OpenLoop,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 3] = [ControllerMode::Full, ControllerMode::Naive, ControllerMode::OpenLoop];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerMode::Full => "full",
            ControllerMode::Naive => "naive",
            ControllerMode::OpenLoop => "open_loop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralParams {
    /// Largest tilt of the spiral (rad).
    pub amplitude: f64,
    /// Radius change per revolution (rad).
    pub pitch: f64,
    /// Commanded arm descent per tick (mm).
    pub descent_rate: f64,
    pub max_ticks: usize,
    pub ticks_per_rev: usize,
}

impl Default for SpiralParams {
    fn default() -> Self {
        Self {
            amplitude: 3f64.to_radians(),
            pitch: 0.5f64.to_radians(),
            descent_rate: 0.2,
            max_ticks: 600,
            ticks_per_rev: 20,
        }
    }
}

impl SpiralParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = self.amplitude >= 0.0
            && self.pitch > 0.0
            && self.descent_rate > 0.0
            && self.max_ticks > 0
            && self.ticks_per_rev > 0
            && self.amplitude.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ControlError::Config("spiral parameters must be positive".into()))
        }
    }

    /// Radius at tick `k`: grows by `pitch` per revolution up to the
    /// amplitude, shrinks back to zero, and repeats.
    pub fn radius(&self, k: usize) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let revs = k as f64 / self.ticks_per_rev as f64;
        let half = self.amplitude / self.pitch;
        let phase = revs % (2.0 * half);
        self.pitch * phase.min(2.0 * half - phase)
    }

    /// Target (theta1, theta2) at tick `k`.
    pub fn target(&self, k: usize) -> [f64; 2] {
        let r = self.radius(k);
        let phi = std::f64::consts::TAU * k as f64 / self.ticks_per_rev as f64;
        [r * phi.cos(), r * phi.sin()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    None,
    Jam,
    Timeout,
    Grasp,
    Workspace,
}

impl FailureCause {
    pub fn name(&self) -> &'static str {
        match self {
            FailureCause::None => "none",
            FailureCause::Jam => "jam",
            FailureCause::Timeout => "timeout",
            FailureCause::Grasp => "grasp",
            FailureCause::Workspace => "workspace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("tick budget of {ticks} exhausted")]
    TimeoutExceeded { ticks: usize },
    #[error("peg jammed")]
    Jammed,
    #[error("grasp infeasible: {0}")]
    GraspInfeasible(String),
    #[error("arm workspace exceeded: {0}")]
    Workspace(String),
    #[error("in-hand workspace exceeded: {0}")]
    WihmWorkspaceExceeded(String),
    #[error("contact solver failed: {0}")]
    Solver(String),
    #[error("tracker: {0}")]
    Tracker(String),
    #[error("controller configuration: {0}")]
    Config(String),
}

impl ControlError {
    pub fn cause(&self) -> FailureCause {
        match self {
            ControlError::TimeoutExceeded { .. } | ControlError::Tracker(_) | ControlError::Config(_) => FailureCause::Timeout,
            ControlError::Jammed | ControlError::Solver(_) => FailureCause::Jam,
            ControlError::GraspInfeasible(_) => FailureCause::Grasp,
            ControlError::Workspace(_) | ControlError::WihmWorkspaceExceeded(_) => FailureCause::Workspace,
        }
    }
}

/// Outcome of one trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub servo_ticks: usize,
    pub total_ticks: usize,
    pub hand_actions: usize,
    pub failure_cause: FailureCause,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Plan,
    Approach,
    Grasp,
    Lift,
    RotateBeta0,
    MoveAbove,
    Translate,
    RotateBetaF,
    Spiral,
    Descend,
}

impl Phase {
    pub fn tag(&self) -> &'static str {
        match self {
            Phase::Plan => "plan",
            Phase::Approach => "approach",
            Phase::Grasp => "grasp",
            Phase::Lift => "lift",
            Phase::RotateBeta0 => "rotate_beta0",
            Phase::MoveAbove => "move_above",
            Phase::Translate => "translate",
            Phase::RotateBetaF => "rotate_beta_f",
            Phase::Spiral => "spiral",
            Phase::Descend => "descend",
        }
    }
}

/// Everything the controller may touch.
pub trait Plant {
    /// One-shot track initialization.
    fn initialize(&mut self, target: TargetId) -> Observation;
    /// Observation at the current tick.
    fn observe(&mut self, target: TargetId) -> Result<Observation, ControlError>;
    /// The arm controller's current set point.
    fn arm_command(&self) -> Pose;
    fn move_arm(&mut self, cmd: &Pose) -> Result<(), ControlError>;
    fn actuate_hand(&mut self, a_dot: &[f64; 3]) -> Result<(), ControlError>;
    fn close_hand(&mut self, plan: &GraspPlan) -> Result<(), ControlError>;
    /// Closes the current control tick.
    fn end_tick(&mut self, phase: Phase) -> Result<(), ControlError>;
    fn event(&mut self, _msg: &str) {}
}

/// What tilts the peg: the fingers, or the wrist when the hand is rigid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Actuation {
    Hand,
    Wrist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    pub spiral: SpiralParams,
    /// Tilt rate limit (rad/s).
    pub max_rate: f64,
    /// Proportional tilt gain (1/s).
    pub gain: f64,
    /// Start height of the translation servo above the compliant depth (mm).
    pub approach_clearance: f64,
    /// Largest arm translation per tick during transport (mm).
    pub transport_step: f64,
    /// Largest commanded press below the observed peg height (mm).
    pub press_limit: f64,
    /// Height of the naive controller's bottom face over the rim when the
    /// straight descent starts (mm).
    pub naive_standoff: f64,
    /// Observations averaged, one per tick, before planning a transport.
    pub looks: usize,
    pub dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            mode: ControllerMode::Full,
            spiral: SpiralParams::default(),
            max_rate: 0.3,
            gain: 3.0,
            approach_clearance: 30.0,
            transport_step: 20.0,
            press_limit: 3.0,
            naive_standoff: 1.0,
            looks: 10,
            dt: 1.0 / 30.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Ticks spent in the rotation and translation servo loops.
    pub servo_ticks: usize,
    /// Rotation servo iterations.
    pub hand_actions: usize,
    pub oscillations: usize,
}

/// Result of one translation servo step decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ServoStep {
    Done,
    Descend(Vector3<f64>),
    Align(Vector3<f64>),
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One decision of the arm translation servo for the edge-to-hole error
/// `e` (x, y lateral, z height).
pub fn translation_step(e: &Vector3<f64>, delta_c: f64, gamma: f64, sigma: f64) -> ServoStep {
    if e.z <= delta_c {
        ServoStep::Done
    } else if e.x.abs() <= gamma && e.y.abs() <= gamma {
        ServoStep::Descend(Vector3::new(0.0, 0.0, -sigma))
    } else {
        ServoStep::Align(Vector3::new(-sgn(e.x) * sigma, -sgn(e.y) * sigma, 0.0))
    }
}

/// Grasp contacts in manipulation-frame coordinates (x along the first
/// principal axis, origin at the face centroid): one on the +x extreme and
/// a pair split by `split` on the -x side.
pub fn grasp_contacts(peg: &PegGeometry, mf: &ManipulationFrame, split: f64) -> Result<[Vector3<f64>; 3], ControlError> {
    let to_m = |p: &Point2| Point2::new(p.dot(&mf.pi1), p.dot(&mf.pi2));
    let hull: Vec<Point2> = peg.face.hull().iter().map(to_m).collect();
    let (lo, hi) = peg.extents(&mf.pi1);
    let left = |y: f64| -> Option<f64> {
        let n = hull.len();
        let mut best: Option<f64> = None;
        for i in 0..n {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            if (a.y - y) * (b.y - y) <= 0.0 && a.y != b.y {
                let x = a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x);
                best = Some(best.map_or(x, |m: f64| m.min(x)));
            }
        }
        best
    };
    let (y_lo, y_hi) = peg.extents(&mf.pi2);
    let w = split.min(0.45 * (y_hi - y_lo));
    let x0 = left(-w).ok_or_else(|| ControlError::GraspInfeasible("face too narrow for the finger pair".into()))?;
    let x1 = left(w).ok_or_else(|| ControlError::GraspInfeasible("face too narrow for the finger pair".into()))?;
    let xl = x0.max(x1).max(lo);
    // Single finger on the +pi1 extreme, centred on the pair.
    Ok([Vector3::new(hi, 0.0, 0.0), Vector3::new(xl, -w, 0.0), Vector3::new(xl, w, 0.0)])
}

/// Tilt of an observed peg relative to an observed hole.
pub fn observed_tilt(x: &Pose, h: &Pose, pi1: &Point2) -> TiltFrame {
    TiltFrame::new(&(h.rotation.inverse() * x.rotation), pi1)
}

/// Rotation of `pose` about the world point `pivot`.
fn rotate_about(pose: &Pose, rot: &Rotation3<f64>, pivot: &Vector3<f64>) -> Pose {
    Pose::new(rot * pose.rotation, pivot + rot * (pose.translation - pivot))
}

fn yaw_rotation(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle)
}

fn small_rotation(omega: &Vector3<f64>, dt: f64) -> Rotation3<f64> {
    let v = omega * dt;
    match Unit::try_new(v, 1e-15) {
        Some(axis) => Rotation3::from_axis_angle(&axis, v.norm()),
        None => Rotation3::identity(),
    }
}

pub struct Controller<'a> {
    peg: &'a PegGeometry,
    hole_depth: f64,
    params: InsertionParams,
    cfg: ControllerConfig,
    hand: &'a Hand,
    model: &'a InverseHandModel,
    actuation: Actuation,
    mf: ManipulationFrame,
    edge: Pose,
    /// Hand pose in the peg body frame once grasped.
    hand_in_peg: Option<Pose>,
    pub counters: Counters,
}

impl<'a> Controller<'a> {
    pub fn new(
        peg: &'a PegGeometry,
        hole_depth: f64,
        params: InsertionParams,
        cfg: ControllerConfig,
        hand: &'a Hand,
        model: &'a InverseHandModel,
        actuation: Actuation,
    ) -> Result<Self, ControlError> {
        cfg.spiral.validate()?;
        params.validate().map_err(|e| ControlError::Config(e.to_string()))?;
        let mf = peg.frame().map_err(|e| ControlError::Config(e.to_string()))?;
        let edge = peg.edge_transform().map_err(|e| ControlError::Config(e.to_string()))?;
        Ok(Self {
            peg,
            hole_depth,
            params,
            cfg,
            hand,
            model,
            actuation,
            mf,
            edge,
            hand_in_peg: None,
            counters: Counters::default(),
        })
    }

    fn observe_pair(&self, plant: &mut impl Plant) -> Result<(Pose, Pose), ControlError> {
        Ok((plant.observe(TargetId::PEG)?.pose, plant.observe(TargetId::HOLE)?.pose))
    }

    /// Averages `looks` observation pairs taken on consecutive ticks while
    /// holding still.
    fn look(&self, plant: &mut impl Plant, phase: Phase) -> Result<(Pose, Pose), ControlError> {
        let (mut xs, mut hs) = (Vec::new(), Vec::new());
        for i in 0..self.cfg.looks.max(1) {
            if i > 0 {
                plant.end_tick(phase)?;
            }
            let (x, h) = self.observe_pair(plant)?;
            xs.push(x);
            hs.push(h);
        }
        let mean = |ps: &[Pose]| Pose::mean(ps).expect("at least one look");
        Ok((mean(&xs), mean(&hs)))
    }

    /// Depth of the peg bottom below the rim, from poses.
    fn depth_of(&self, x: &Pose, h: &Pose) -> f64 {
        let bottom = x.transform_point(&Vector3::new(0.0, 0.0, -self.peg.bottom_offset()));
        -h.inverse().transform_point(&bottom).z
    }

    fn looks_inserted(&self, x: &Pose, h: &Pose) -> bool {
        let tilt = (h.rotation.inverse() * x.rotation * Vector3::z()).z.clamp(-1.0, 1.0).acos();
        self.depth_of(x, h) >= 0.95 * self.hole_depth && tilt <= 2f64.to_radians()
    }

    /// Runs the insertion sequence until the controller believes it is done.
    pub fn run(&mut self, plant: &mut impl Plant) -> Result<(), ControlError> {
        let x0 = plant.initialize(TargetId::PEG).pose;
        let h0 = plant.initialize(TargetId::HOLE).pose;
        if self.looks_inserted(&x0, &h0) {
            plant.event("already inserted");
            return Ok(());
        }
        let plan = self.plan_grasp()?;
        self.grasp(plant, &x0, &plan)?;
        match self.cfg.mode {
            ControllerMode::Full => self.run_full(plant),
            ControllerMode::Naive => self.run_naive(plant),
            ControllerMode::OpenLoop => self.run_open_loop(plant, &h0),
        }
    }

    pub fn plan_grasp(&self) -> Result<GraspPlan, ControlError> {
        let contacts = grasp_contacts(self.peg, &self.mf, 6.0)?;
        self.hand.plan_grasp(&contacts).map_err(|e| ControlError::GraspInfeasible(e.to_string()))
    }

    /// Moves the arm set point to `target` in bounded steps, one per tick.
    fn transport(&mut self, plant: &mut impl Plant, target: &Pose, phase: Phase) -> Result<(), ControlError> {
        let start = plant.arm_command();
        let dist = (target.translation - start.translation).norm();
        let ang = start.angle_to(target);
        let n = ((dist / self.cfg.transport_step).max(ang / 0.1).ceil() as usize).max(1);
        let (q0, q1) = (start.quaternion(), target.quaternion());
        for i in 1..=n {
            let f = i as f64 / n as f64;
            let q = q0.slerp(&q1, f);
            let t = start.translation + (target.translation - start.translation) * f;
            plant.move_arm(&Pose::new(q.to_rotation_matrix(), t))?;
            plant.end_tick(phase)?;
        }
        Ok(())
    }

    fn grasp(&mut self, plant: &mut impl Plant, x0: &Pose, plan: &GraspPlan) -> Result<(), ControlError> {
        // The peg stands on the support surface: keep only the observed yaw.
        let m = x0.rotation.matrix();
        let upright = Pose::new(yaw_rotation(m[(1, 0)].atan2(m[(0, 0)])), x0.translation);
        let mrot = Rotation3::from_axis_angle(&Vector3::z_axis(), self.mf.pi1.y.atan2(self.mf.pi1.x));
        let hand_in_peg = Pose::from_rotation(mrot).compose(&plan.object_to_hand);
        let target = upright.compose(&hand_in_peg);
        let above = Pose::new(target.rotation, target.translation + Vector3::new(0.0, 0.0, 60.0));
        plant.event("phase approach");
        self.transport(plant, &above, Phase::Approach)?;
        self.transport(plant, &target, Phase::Approach)?;
        plant.close_hand(plan)?;
        plant.end_tick(Phase::Grasp)?;
        self.hand_in_peg = Some(hand_in_peg);
        plant.event("phase lift");
        let lifted = Pose::new(target.rotation, target.translation + Vector3::new(0.0, 0.0, 80.0));
        self.transport(plant, &lifted, Phase::Lift)
    }

    /// Command that changes the observed tilt towards `goal` for one tick.
    fn tilt_command(&self, plant: &mut impl Plant, x: &Pose, h: &Pose, goal: [f64; 2]) -> Result<(), ControlError> {
        let f = observed_tilt(x, h, &self.mf.pi1);
        let mut rate = [0.0; 2];
        for i in 0..2 {
            rate[i] = self.cfg.gain * (goal[i] - f.theta[i]);
        }
        let norm = rate[0].hypot(rate[1]);
        if norm > self.cfg.max_rate {
            rate = rate.map(|r| r * self.cfg.max_rate / norm);
        }
        let omega = h.rotation * (-f.e2 * rate[0] + f.e1 * rate[1]);
        self.apply_rotation(plant, x, &omega, None)
    }

    /// Rotates the peg at world rate `omega`, optionally together with an
    /// arm translation in the same tick.
    fn apply_rotation(&self, plant: &mut impl Plant, x: &Pose, omega: &Vector3<f64>, shift: Option<Vector3<f64>>) -> Result<(), ControlError> {
        let cmd = plant.arm_command();
        match self.actuation {
            Actuation::Hand => {
                let w = cmd.rotation.inverse() * omega;
                let a_dot = self.model.predict(&[w.x, w.y]);
                plant.actuate_hand(&a_dot)?;
                if let Some(d) = shift {
                    plant.move_arm(&Pose::new(cmd.rotation, cmd.translation + d))?;
                }
            }
            Actuation::Wrist => {
                let r = small_rotation(omega, self.cfg.dt);
                let mut next = rotate_about(&cmd, &r, &x.translation);
                if let Some(d) = shift {
                    next.translation += d;
                }
                plant.move_arm(&next)?;
            }
        }
        Ok(())
    }

    /// In-hand rotation servo towards beta0 (`to_beta0`) or inside beta_f.
    fn rotation_servo(&mut self, plant: &mut impl Plant, to_beta0: bool) -> Result<usize, ControlError> {
        let phase = if to_beta0 { Phase::RotateBeta0 } else { Phase::RotateBetaF };
        plant.event(&format!("phase {}", phase.tag()));
        let mut iterations = 0;
        loop {
            let (x, h) = self.observe_pair(plant)?;
            let t = observed_tilt(&x, &h, &self.mf.pi1).theta;
            let (done, goal) = if to_beta0 {
                (t[0] >= self.params.beta0, [self.params.beta0 + 0.02, 0.0])
            } else {
                (t[0].abs() < self.params.beta_f && t[1].abs() < self.params.beta_f, [0.0, 0.0])
            };
            if done {
                return Ok(iterations);
            }
            self.tilt_command(plant, &x, &h, goal)?;
            iterations += 1;
            self.counters.hand_actions += 1;
            self.counters.servo_ticks += 1;
            plant.end_tick(phase)?;
        }
    }

    /// Arm translation servo on the frame `offset` (peg body) until it is
    /// within `delta_c` of the hole height.
    fn translation_servo(&mut self, plant: &mut impl Plant, offset: &Pose, delta_c: f64) -> Result<usize, ControlError> {
        plant.event("phase translate");
        let mut iterations = 0;
        let mut last = [0.0; 2];
        let mut flips = [0usize; 2];
        loop {
            let (x, h) = self.observe_pair(plant)?;
            let m = x.compose(offset);
            let e = m.translation - h.translation;
            let step = match translation_step(&e, delta_c, self.params.gamma, self.params.sigma) {
                ServoStep::Done => return Ok(iterations),
                ServoStep::Descend(d) => {
                    flips = [0; 2];
                    d
                }
                ServoStep::Align(d) => {
                    for i in 0..2 {
                        if d[i] != 0.0 && last[i] != 0.0 && d[i] != last[i] {
                            flips[i] += 1;
                            if flips[i] == N_OSC {
                                self.counters.oscillations += 1;
                                plant.event("oscillation detected");
                            }
                        } else {
                            flips[i] = 0;
                        }
                        last[i] = d[i];
                    }
                    d
                }
            };
            let cmd = plant.arm_command();
            plant.move_arm(&Pose::new(cmd.rotation, cmd.translation + step))?;
            iterations += 1;
            self.counters.servo_ticks += 1;
            plant.end_tick(Phase::Translate)?;
        }
    }

    /// Transports the peg so that the frame `offset` sits `height` above the
    /// observed hole, with the peg yaw matched to the hole.
    fn move_above(&mut self, plant: &mut impl Plant, offset: &Pose, height: f64) -> Result<(), ControlError> {
        plant.event("phase move_above");
        let (x, h) = self.look(plant, Phase::MoveAbove)?;
        let f = observed_tilt(&x, &h, &self.mf.pi1);
        let cmd = plant.arm_command();
        let rot = yaw_rotation(-f.yaw_angle());
        let rotated = rotate_about(&cmd, &rot, &x.translation);
        let m = rotate_about(&x, &rot, &x.translation).compose(offset).translation;
        let goal = h.translation + h.rotation * Vector3::new(0.0, 0.0, height);
        let target = Pose::new(rotated.rotation, rotated.translation + (goal - m));
        self.transport(plant, &target, Phase::MoveAbove)
    }

    fn spiral(&mut self, plant: &mut impl Plant, tilt: bool, phase: Phase) -> Result<(), ControlError> {
        plant.event(&format!("phase {}", phase.tag()));
        let sp = self.cfg.spiral.clone();
        let mut lead = None;
        for k in 0..sp.max_ticks {
            let (x, h) = self.observe_pair(plant)?;
            if self.depth_of(&x, &h) >= 0.95 * self.hole_depth + 0.25 {
                return Ok(());
            }
            let cmd = plant.arm_command();
            let lead = *lead.get_or_insert(cmd.translation.z - x.translation.z);
            let floor = x.translation.z + lead - self.cfg.press_limit;
            let z = (cmd.translation.z - sp.descent_rate).max(floor.min(cmd.translation.z));
            let shift = Vector3::new(0.0, 0.0, z - cmd.translation.z);
            if tilt {
                let f = observed_tilt(&x, &h, &self.mf.pi1);
                let goal = sp.target(k);
                let mut rate = [0.0; 2];
                for i in 0..2 {
                    rate[i] = self.cfg.gain * (goal[i] - f.theta[i]);
                }
                let norm = rate[0].hypot(rate[1]);
                if norm > self.cfg.max_rate {
                    rate = rate.map(|r| r * self.cfg.max_rate / norm);
                }
                let omega = h.rotation * (-f.e2 * rate[0] + f.e1 * rate[1]);
                self.apply_rotation(plant, &x, &omega, Some(shift))?;
            } else {
                plant.move_arm(&Pose::new(cmd.rotation, cmd.translation + shift))?;
            }
            plant.end_tick(phase)?;
        }
        Err(ControlError::TimeoutExceeded { ticks: sp.max_ticks })
    }

    fn run_full(&mut self, plant: &mut impl Plant) -> Result<(), ControlError> {
        self.rotation_servo(plant, true)?;
        let edge = self.edge;
        self.move_above(plant, &edge, self.params.delta_c + self.cfg.approach_clearance)?;
        self.translation_servo(plant, &edge, self.params.delta_c)?;
        self.rotation_servo(plant, false)?;
        self.spiral(plant, true, Phase::Spiral)
    }

    fn run_naive(&mut self, plant: &mut impl Plant) -> Result<(), ControlError> {
        let grasp_point = Pose::identity();
        let standoff = self.peg.bottom_offset() + self.cfg.naive_standoff;
        self.move_above(plant, &grasp_point, standoff + self.cfg.approach_clearance)?;
        self.translation_servo(plant, &grasp_point, standoff)?;
        self.spiral(plant, false, Phase::Descend)
    }

    /// Rotates the believed peg `x` from tilt `from` to `to` at the rate
    /// limit without looking.
    fn open_loop_tilt(&self, plant: &mut impl Plant, x: &mut Pose, h: &Pose, from: f64, to: f64, phase: Phase) -> Result<(), ControlError> {
        let dt = self.cfg.dt;
        let n = (((to - from).abs() / (self.cfg.max_rate * dt)).ceil() as usize).max(1);
        let f = observed_tilt(x, h, &self.mf.pi1);
        let omega = h.rotation * (-f.e2 * ((to - from) / (n as f64 * dt)));
        let r = small_rotation(&omega, dt);
        for _ in 0..n {
            self.apply_rotation(plant, x, &omega, None)?;
            *x = rotate_about(x, &r, &x.translation);
            plant.end_tick(phase)?;
        }
        Ok(())
    }

    /// Executes the whole sequence from the initial observations with
    /// precomputed step counts.
    fn run_open_loop(&mut self, plant: &mut impl Plant, h0: &Pose) -> Result<(), ControlError> {
        let hand_in_peg = self.hand_in_peg.ok_or_else(|| ControlError::Config("not grasped".into()))?;
        // Believed peg pose: the arm goes where it is told and the peg
        // follows the hand rigidly.
        let mut x = plant.arm_command().compose(&hand_in_peg.inverse());
        self.open_loop_tilt(plant, &mut x, h0, 0.0, self.params.beta0, Phase::RotateBeta0)?;
        let f = observed_tilt(&x, h0, &self.mf.pi1);
        let rot = yaw_rotation(-f.yaw_angle());
        let cmd = plant.arm_command();
        let rotated = rotate_about(&cmd, &rot, &x.translation);
        let m = rotate_about(&x, &rot, &x.translation).compose(&self.edge).translation;
        let goal = h0.translation + h0.rotation * Vector3::new(0.0, 0.0, self.params.delta_c);
        let target = Pose::new(rotated.rotation, rotated.translation + (goal - m));
        let above = Pose::new(target.rotation, target.translation + Vector3::new(0.0, 0.0, self.cfg.approach_clearance));
        self.transport(plant, &above, Phase::MoveAbove)?;
        self.transport(plant, &target, Phase::Descend)?;
        let mut x = rotate_about(&x, &rot, &x.translation);
        x.translation += target.translation - rotated.translation;
        self.open_loop_tilt(plant, &mut x, h0, self.params.beta0, 0.0, Phase::RotateBetaF)?;
        // Push straight down by the planned insertion depth.
        let n = ((self.hole_depth + self.cfg.press_limit) / self.cfg.spiral.descent_rate).ceil() as usize;
        for _ in 0..n {
            let cmd = plant.arm_command();
            plant.move_arm(&Pose::new(cmd.rotation, cmd.translation - Vector3::new(0.0, 0.0, self.cfg.spiral.descent_rate)))?;
            plant.end_tick(Phase::Descend)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{circle, FaceCloud, HoleGeometry, InsertionOptions};
    use crate::hand::Layer;
    use nalgebra::{DMatrix, DVector};

    fn peg(radius: f64) -> PegGeometry {
        PegGeometry::new(FaceCloud::new(circle(radius, 360)).unwrap(), 80.0, 40.0).unwrap()
    }

    fn zero_model() -> InverseHandModel {
        InverseHandModel {
            layers: vec![Layer { w: DMatrix::zeros(3, 2), b: DVector::zeros(3) }],
            input_scale: [1.0, 1.0],
            seed: 0,
            dataset_hash: 0,
            train_loss: 0.0,
            val_loss: 0.0,
            loss_curve: Vec::new(),
        }
    }

    /// Kinematic plant: exact observations, the grasped peg follows the arm
    /// rigidly, nothing collides.
    struct FakePlant {
        arm: Pose,
        peg: Pose,
        peg_in_arm: Option<Pose>,
        hole: Pose,
        ticks: usize,
        observes: usize,
        hand_calls: usize,
        log: Vec<String>,
    }

    impl FakePlant {
        fn new(peg: &PegGeometry) -> Self {
            Self {
                arm: Pose::new(Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI), Vector3::new(-100.0, 0.0, 250.0)),
                peg: Pose::new(yaw_rotation(0.3), Vector3::new(-180.0, 20.0, peg.bottom_offset())),
                peg_in_arm: None,
                hole: Pose::identity(),
                ticks: 0,
                observes: 0,
                hand_calls: 0,
                log: Vec::new(),
            }
        }
    }

    impl Plant for FakePlant {
        fn initialize(&mut self, target: TargetId) -> Observation {
            let pose = if target == TargetId::HOLE { self.hole } else { self.peg };
            Observation { pose, stamp: 0.0, target_id: target }
        }
        fn observe(&mut self, target: TargetId) -> Result<Observation, ControlError> {
            self.observes += 1;
            Ok(self.initialize(target))
        }
        fn arm_command(&self) -> Pose {
            self.arm
        }
        fn move_arm(&mut self, cmd: &Pose) -> Result<(), ControlError> {
            self.arm = *cmd;
            if let Some(o) = self.peg_in_arm {
                self.peg = cmd.compose(&o);
            }
            self.log.push(format!("{:?}", cmd.translation));
            Ok(())
        }
        fn actuate_hand(&mut self, a_dot: &[f64; 3]) -> Result<(), ControlError> {
            self.hand_calls += 1;
            self.log.push(format!("hand {a_dot:?}"));
            Ok(())
        }
        fn close_hand(&mut self, _plan: &GraspPlan) -> Result<(), ControlError> {
            self.peg_in_arm = Some(self.arm.inverse().compose(&self.peg));
            Ok(())
        }
        fn end_tick(&mut self, _phase: Phase) -> Result<(), ControlError> {
            self.ticks += 1;
            if self.ticks >= TICK_BUDGET {
                return Err(ControlError::TimeoutExceeded { ticks: self.ticks });
            }
            Ok(())
        }
    }

    fn params(p: &PegGeometry) -> InsertionParams {
        let hole = HoleGeometry::for_peg(p, 0.25, 20.0, Pose::identity()).unwrap();
        InsertionParams::derive(p, &hole, &InsertionOptions::default()).unwrap()
    }

    fn run(mode: ControllerMode, actuation: Actuation) -> (Result<(), ControlError>, FakePlant, Counters) {
        let p = peg(15.0);
        let hand = Hand::default();
        let model = zero_model();
        let cfg = ControllerConfig { mode, ..ControllerConfig::default() };
        let mut ctl = Controller::new(&p, 20.0, params(&p), cfg, &hand, &model, actuation).unwrap();
        let mut plant = FakePlant::new(&p);
        let r = ctl.run(&mut plant);
        (r, plant, ctl.counters)
    }

    #[test]
    fn translation_step_branches() {
        let s = translation_step(&Vector3::new(0.2, 0.1, 10.0), 2.0, 0.5, 1.0);
        assert_eq!(s, ServoStep::Descend(Vector3::new(0.0, 0.0, -1.0)));
        let s = translation_step(&Vector3::new(3.0, -0.1, 10.0), 2.0, 0.5, 1.0);
        assert_eq!(s, ServoStep::Align(Vector3::new(-1.0, 1.0, 0.0)));
        assert_eq!(translation_step(&Vector3::new(5.0, 5.0, 2.0), 2.0, 0.5, 1.0), ServoStep::Done);
        // A zero error component commands no motion on that axis.
        let s = translation_step(&Vector3::new(0.0, 4.0, 10.0), 2.0, 0.5, 1.0);
        assert_eq!(s, ServoStep::Align(Vector3::new(0.0, -1.0, 0.0)));
    }

    #[test]
    fn spiral_radius_rises_and_falls() {
        let sp = SpiralParams::default();
        assert_eq!(sp.radius(0), 0.0);
        assert!((sp.radius(sp.ticks_per_rev) - sp.pitch).abs() < 1e-12);
        let half = (sp.amplitude / sp.pitch).round() as usize * sp.ticks_per_rev;
        assert!((sp.radius(half) - sp.amplitude).abs() < 1e-12);
        assert!(sp.radius(2 * half).abs() < 1e-12);
        for k in 0..5 * half {
            let r = sp.radius(k);
            assert!((0.0..=sp.amplitude + 1e-12).contains(&r));
            let t = sp.target(k);
            assert!((t[0].hypot(t[1]) - r).abs() < 1e-12);
        }
        let flat = SpiralParams { amplitude: 0.0, ..sp };
        assert_eq!(flat.target(17), [0.0, 0.0]);
    }

    #[test]
    fn spiral_validation() {
        assert!(SpiralParams::default().validate().is_ok());
        assert!(SpiralParams { pitch: 0.0, ..SpiralParams::default() }.validate().is_err());
        assert!(SpiralParams { max_ticks: 0, ..SpiralParams::default() }.validate().is_err());
    }

    #[test]
    fn grasp_contacts_on_a_circle() {
        let p = peg(15.0);
        let mf = p.frame().unwrap();
        let c = grasp_contacts(&p, &mf, 6.0).unwrap();
        assert!((c[0].x - 15.0).abs() < 1e-2 && c[0].y.abs() < 1e-12);
        for k in [1, 2] {
            assert!((c[k].x.hypot(c[k].y) - 15.0).abs() < 0.05, "{:?}", c[k]);
            assert!(c[k].x < 0.0);
        }
        assert!((c[1].y + c[2].y).abs() < 1e-12 && (c[1].x - c[2].x).abs() < 1e-12);
    }

    #[test]
    fn wide_peg_grasp_is_infeasible() {
        let p = peg(80.0);
        let hand = Hand::default();
        let model = zero_model();
        let params = InsertionParams { beta0: 0.3, beta_f: 0.05, delta: 10.0, delta_c: 5.0, gamma: 0.5, sigma: 1.0 };
        let ctl = Controller::new(&p, 20.0, params, ControllerConfig::default(), &hand, &model, Actuation::Hand).unwrap();
        assert!(matches!(ctl.plan_grasp(), Err(ControlError::GraspInfeasible(_))));
    }

    #[test]
    fn naive_issues_no_hand_actions() {
        let (r, plant, counters) = run(ControllerMode::Naive, Actuation::Hand);
        r.unwrap();
        assert_eq!(counters.hand_actions, 0);
        assert_eq!(plant.hand_calls, 0);
        assert!(counters.servo_ticks > 0);
    }

    #[test]
    fn open_loop_never_observes() {
        let (_, plant, counters) = run(ControllerMode::OpenLoop, Actuation::Hand);
        assert_eq!(plant.observes, 0);
        assert_eq!(counters.servo_ticks, 0);
    }

    #[test]
    fn full_mode_with_wrist_reaches_depth() {
        let (r, plant, counters) = run(ControllerMode::Full, Actuation::Wrist);
        r.unwrap();
        assert!(counters.hand_actions > 0);
        let depth = -plant.peg.transform_point(&Vector3::new(0.0, 0.0, -40.0)).z;
        assert!(depth >= 0.95 * 20.0, "{depth}");
    }

    #[test]
    fn same_observations_same_commands() {
        let (_, a, ca) = run(ControllerMode::Full, Actuation::Wrist);
        let (_, b, cb) = run(ControllerMode::Full, Actuation::Wrist);
        assert_eq!(a.log, b.log);
        assert_eq!(ca, cb);
    }

    #[test]
    fn failure_causes() {
        assert_eq!(ControlError::Jammed.cause(), FailureCause::Jam);
        assert_eq!(ControlError::TimeoutExceeded { ticks: 1 }.cause(), FailureCause::Timeout);
        assert_eq!(ControlError::GraspInfeasible(String::new()).cause(), FailureCause::Grasp);
        assert_eq!(ControlError::Workspace(String::new()).cause(), FailureCause::Workspace);
        for m in ControllerMode::ALL {
            assert_eq!(ControllerMode::parse(m.name()), Some(m));
        }
    }
}
