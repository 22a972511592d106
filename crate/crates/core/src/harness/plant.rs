use nalgebra::Vector3;

use crate::control::{ControlError, Phase, Plant};
use crate::hand::GraspPlan;
use crate::posemath::{Observation, Pose, TargetId, Tracker};
use crate::world::{DisturbanceKind, World, WorldError};

/// A scheduled perturbation. With a phase set, `tick` counts ticks spent in
/// that phase; otherwise it counts from the start of the trial.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub tick: usize,
    pub kind: String,
    pub magnitude: [f64; 3],
    #[serde(default)]
    pub phase: Option<String>,
}

/// Consecutive jammed ticks after which a trial is abandoned.
pub const JAM_PATIENCE: usize = 60;

/// World plus tracker behind the controller's [`Plant`] interface.
pub struct SimPlant {
    pub world: World,
    pub tracker: Tracker,
    pub dt: f64,
    pub ticks: usize,
    pub budget: usize,
    pub grasp_capture: f64,
    /// In-hand tilt (rad) and its axis in the peg frame.
    pub grasp_tilt: (f64, Vector3<f64>),
    disturbances: Vec<(Disturbance, DisturbanceKind, bool)>,
    phase: Option<Phase>,
    phase_ticks: usize,
    jam_ticks: usize,
    trace: Option<String>,
}

fn world_error(e: WorldError) -> ControlError {
    match e {
        WorldError::SolverFailure { .. } => ControlError::Solver(e.to_string()),
        WorldError::WorkspaceExceeded(_) => ControlError::Workspace(e.to_string()),
        WorldError::GraspInfeasible(m) => ControlError::GraspInfeasible(m),
        WorldError::Hand(h) => ControlError::WihmWorkspaceExceeded(h.to_string()),
        WorldError::NotGrasped | WorldError::InvalidConfig(_) => ControlError::Config(e.to_string()),
    }
}

impl SimPlant {
    pub fn new(world: World, tracker: Tracker, disturbances: &[Disturbance]) -> Result<Self, String> {
        let mut ds = Vec::new();
        for d in disturbances {
            let kind = DisturbanceKind::parse(&d.kind).ok_or_else(|| format!("unknown disturbance kind {:?}", d.kind))?;
            ds.push((d.clone(), kind, false));
        }
        Ok(Self {
            dt: tracker.config().period(),
            world,
            tracker,
            ticks: 0,
            budget: crate::control::TICK_BUDGET,
            grasp_capture: 45.0,
            grasp_tilt: (0.0, Vector3::x()),
            disturbances: ds,
            phase: None,
            phase_ticks: 0,
            jam_ticks: 0,
            trace: None,
        })
    }

    pub fn record_trace(&mut self) {
        let mut t = String::new();
        t.push_str(&format!("# hole_depth {}\n", self.world.hole.depth));
        t.push_str("# t state_tag peg_pose hole_pose depth jammed\n");
        self.trace = Some(t);
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.take()
    }

    fn true_pose(&self, target: TargetId) -> Pose {
        if target == TargetId::HOLE {
            self.world.state().hole_pose
        } else {
            self.world.state().peg_pose
        }
    }

    fn apply_disturbances(&mut self) {
        let (ticks, phase_ticks, phase) = (self.ticks, self.phase_ticks, self.phase);
        let mut due = Vec::new();
        for (d, kind, done) in &mut self.disturbances {
            if *done {
                continue;
            }
            let hit = match &d.phase {
                Some(p) => phase.map(|ph| ph.tag()) == Some(p.as_str()) && phase_ticks == d.tick,
                None => ticks == d.tick,
            };
            if hit {
                *done = true;
                due.push((*kind, Vector3::from(d.magnitude)));
            }
        }
        for (kind, m) in due {
            self.world.disturb(kind, m);
            if let Some(t) = &mut self.trace {
                t.push_str(&format!("# {} disturb {} {} {} {}\n", ticks, kind.name(), m.x, m.y, m.z));
            }
        }
    }
}

impl Plant for SimPlant {
    fn initialize(&mut self, target: TargetId) -> Observation {
        let p = self.true_pose(target);
        self.tracker.initialize(&p, target)
    }

    fn observe(&mut self, target: TargetId) -> Result<Observation, ControlError> {
        let p = self.true_pose(target);
        self.tracker
            .observe(&p, self.world.state().clock, target)
            .map_err(|e| ControlError::Tracker(e.to_string()))
    }

    fn arm_command(&self) -> Pose {
        *self.world.arm.commanded()
    }

    fn move_arm(&mut self, cmd: &Pose) -> Result<(), ControlError> {
        self.world.move_arm(cmd).map(|_| ()).map_err(world_error)
    }

    fn actuate_hand(&mut self, a_dot: &[f64; 3]) -> Result<(), ControlError> {
        self.world.actuate_hand(a_dot, self.dt).map(|_| ()).map_err(world_error)
    }

    fn close_hand(&mut self, plan: &GraspPlan) -> Result<(), ControlError> {
        let (tilt, axis) = self.grasp_tilt;
        self.world.grasp(plan, self.grasp_capture, tilt, axis).map_err(world_error)
    }

    fn end_tick(&mut self, phase: Phase) -> Result<(), ControlError> {
        if self.phase != Some(phase) {
            self.phase = Some(phase);
            self.phase_ticks = 0;
        }
        if let Some(t) = &mut self.trace {
            t.push_str(&self.world.trace_record(phase.tag()).to_string());
            t.push('\n');
        }
        self.world.advance_clock(self.dt);
        self.ticks += 1;
        self.phase_ticks += 1;
        self.apply_disturbances();
        if self.world.state().jammed {
            self.jam_ticks += 1;
            if self.jam_ticks >= JAM_PATIENCE {
                return Err(ControlError::Jammed);
            }
        } else {
            self.jam_ticks = 0;
        }
        if self.ticks >= self.budget {
            return Err(ControlError::TimeoutExceeded { ticks: self.ticks });
        }
        Ok(())
    }

    fn event(&mut self, msg: &str) {
        if let Some(t) = &mut self.trace {
            t.push_str(&format!("# {} {}\n", self.ticks, msg));
        }
    }
}
