//! Experiment runner: configs, object library, seeded trials, reporting.

mod config;
mod plant;
mod report;

pub use config::{
    ConfigError, ControllerSection, ExperimentConfig, ExperimentSection, ModelSection, NoiseLevel, OutputFormat, OutputSection,
    WorldSection,
};
pub use plant::{Disturbance, SimPlant, JAM_PATIENCE};
pub use report::{read_trials, report, summarize, summarize_rows, trial_rows, write_trials, ReportError, SummaryRow, SummaryTable, TrialRow, CSV_HEADER};

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::{Actuation, Controller, ControllerConfig, FailureCause, TrialResult};
use crate::geometry::{circle, resample_polygon, FaceCloud, HoleGeometry, InsertionParams, PegGeometry, Point2};
use crate::hand::{fit_inverse_model, generate_dataset, DatasetOptions, FitOptions, Hand, InverseHandModel};
use crate::posemath::{Pose, Tracker, TrackerConfig};
use crate::world::{sample_bias, ArmConfig, ArmModel, World};

pub const PEG_HEIGHT: f64 = 80.0;
pub const GRASP_HEIGHT: f64 = 40.0;

fn union_hull(parts: &[Vec<Point2>]) -> Vec<Point2> {
    let all: Vec<Point2> = parts.iter().flatten().copied().collect();
    crate::geometry::convex_hull(&all)
}

/// Named peg faces.
pub fn builtin_faces() -> Vec<(&'static str, FaceCloud)> {
    let n = 360;
    let pear = {
        let big = circle(13.0, n);
        let small: Vec<Point2> = circle(8.0, n).into_iter().map(|p| p + Point2::new(12.0, 0.0)).collect();
        resample_polygon(&union_hull(&[big, small]), n)
    };
    let tri = {
        let s = 30.0;
        let r = s / 3f64.sqrt();
        let v: Vec<Point2> = (0..3)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::TAU / 3.0;
                Point2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        resample_polygon(&v, n)
    };
    let rect = {
        let v = [Point2::new(-16.0, -10.0), Point2::new(16.0, -10.0), Point2::new(16.0, 10.0), Point2::new(-16.0, 10.0)];
        resample_polygon(&v, n)
    };
    let face = |pts: Vec<Point2>| FaceCloud::new(pts).expect("builtin faces are valid");
    vec![
        ("small_circle", face(circle(11.0, n))),
        ("large_circle", face(circle(15.0, n))),
        ("pear", face(pear)),
        ("triangle", face(tri)),
        ("rectangle", face(rect)),
    ]
}

/// The object library: peg geometry for each named face.
pub fn builtin_objects() -> Vec<(&'static str, PegGeometry)> {
    builtin_faces()
        .into_iter()
        .map(|(name, f)| (name, PegGeometry::new(f, PEG_HEIGHT, GRASP_HEIGHT).expect("builtin pegs are valid")))
        .collect()
}

/// A builtin name or a face-cloud file.
pub fn resolve_object(name: &str) -> Result<PegGeometry, ConfigError> {
    if let Some((_, p)) = builtin_objects().into_iter().find(|(n, _)| *n == name) {
        return Ok(p);
    }
    let path = Path::new(name);
    if path.exists() {
        let face = FaceCloud::load(path).map_err(|e| ConfigError::field("experiment.object", e.to_string()))?;
        return PegGeometry::new(face, PEG_HEIGHT, GRASP_HEIGHT).map_err(|e| ConfigError::field("experiment.object", e.to_string()));
    }
    Err(ConfigError::UnknownObject(name.to_string()))
}

type ModelKey = (usize, usize, u64, usize);

fn model_cache() -> &'static Mutex<HashMap<ModelKey, Arc<InverseHandModel>>> {
    static CACHE: OnceLock<Mutex<HashMap<ModelKey, Arc<InverseHandModel>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Loads the configured model file, or generates and fits one. Fitted
/// models are cached per process.
pub fn load_or_fit_model(hand: &Hand, m: &ModelSection) -> Result<Arc<InverseHandModel>, ConfigError> {
    if let Some(path) = &m.path {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::field("model.path", e.to_string()))?;
        return InverseHandModel::parse(&text)
            .map(Arc::new)
            .map_err(|e| ConfigError::field("model.path", e.to_string()));
    }
    let key = (m.transitions, m.triangles, m.seed, m.epochs);
    let mut cache = model_cache().lock().expect("model cache poisoned");
    if let Some(model) = cache.get(&key) {
        return Ok(model.clone());
    }
    let data = generate_dataset(
        hand,
        &DatasetOptions {
            n_triangles: m.triangles,
            n_transitions: m.transitions,
            seed: m.seed,
            ..DatasetOptions::default()
        },
    )
    .map_err(|e| ConfigError::field("model", e.to_string()))?;
    let fit = fit_inverse_model(
        &data,
        &FitOptions {
            epochs: m.epochs,
            seed: m.seed,
            ..FitOptions::default()
        },
    )
    .map_err(|e| ConfigError::field("model", e.to_string()))?;
    let model = Arc::new(fit);
    cache.insert(key, model.clone());
    Ok(model)
}

/// Everything shared by the trials of one experiment.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub peg: PegGeometry,
    pub hole: HoleGeometry,
    pub params: InsertionParams,
    pub hand: Hand,
    pub model: Arc<InverseHandModel>,
}

/// Start pose of the end effector: pointing down, clear of the table.
pub fn home_pose() -> Pose {
    Pose::new(
        Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
        Vector3::new(-100.0, 0.0, 250.0),
    )
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let peg = resolve_object(&cfg.experiment.object)?;
        let hole = HoleGeometry::for_peg(&peg, cfg.world.clearance, cfg.world.hole_depth, Pose::identity())
            .map_err(|e| ConfigError::field("world.clearance", e.to_string()))?;
        let params = InsertionParams::derive(&peg, &hole, &cfg.controller.insertion_options())
            .map_err(|e| ConfigError::field("controller", e.to_string()))?;
        let hand = Hand::default();
        let model = load_or_fit_model(&hand, &cfg.model)?;
        Ok(Self { cfg, peg, hole, params, hand, model })
    }

    /// Runs trial `i` with seed `seed + i`; returns the result and, when
    /// asked, the trace text.
    pub fn run_trial(&self, i: usize, trace: bool) -> (TrialResult, Option<String>) {
        let seed = self.cfg.experiment.seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &self.cfg.world;
        let compliance = self.cfg.compliance();
        let arm_cfg = if compliance.arm_compliant {
            ArmConfig { bias_radius: w.arm_bias_radius, noise: w.arm_noise }
        } else {
            ArmConfig::rigid()
        };
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let start = Pose::new(
            Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            Vector3::new(rng.gen_range(-260.0..-140.0), rng.gen_range(-80.0..80.0), self.peg.bottom_offset()),
        );
        let bias = sample_bias(&mut rng, arm_cfg.bias_radius);
        let tilt_az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let arm = ArmModel::new(bias, arm_cfg.noise, home_pose(), seed);
        let world = World::new(self.peg.clone(), self.hole.clone(), compliance.clone(), self.hand.clone(), arm, start);
        let (t, r) = self.cfg.experiment.noise.bounds();
        let fail = |cause| {
            (
                TrialResult { success: false, servo_ticks: 0, total_ticks: 0, hand_actions: 0, failure_cause: cause, seed },
                None,
            )
        };
        let (Ok(world), Ok(tracker)) = (world, Tracker::new(TrackerConfig::with_noise(t, r, seed))) else {
            return fail(FailureCause::Workspace);
        };
        let Ok(mut plant) = SimPlant::new(world, tracker, &self.cfg.disturbances) else {
            return fail(FailureCause::Workspace);
        };
        plant.grasp_capture = w.grasp_capture;
        plant.grasp_tilt = (w.grasp_tilt_deg.to_radians(), Vector3::new(tilt_az.cos(), tilt_az.sin(), 0.0));
        if trace {
            plant.record_trace();
        }
        let actuation = if compliance.hand_compliant { Actuation::Hand } else { Actuation::Wrist };
        let ctl_cfg: ControllerConfig = self.cfg.controller.controller_config(self.cfg.experiment.mode);
        let mut ctl = match Controller::new(&self.peg, self.hole.depth, self.params.clone(), ctl_cfg, &self.hand, &self.model, actuation) {
            Ok(c) => c,
            Err(e) => return fail(e.cause()),
        };
        let outcome = ctl.run(&mut plant);
        let inserted = plant.world.inserted();
        let success = outcome.is_ok() && inserted;
        let failure_cause = match (&outcome, success) {
            (_, true) => FailureCause::None,
            (Err(e), false) => e.cause(),
            (Ok(()), false) if plant.world.state().jammed => FailureCause::Jam,
            (Ok(()), false) => FailureCause::Timeout,
        };
        if let Err(e) = &outcome {
            log::debug!("trial {i} (seed {seed}): {e}");
        }
        let result = TrialResult {
            success,
            servo_ticks: ctl.counters.servo_ticks,
            total_ticks: plant.ticks,
            hand_actions: ctl.counters.hand_actions,
            failure_cause,
            seed,
        };
        (result, plant.take_trace())
    }

    pub fn run(&self) -> Vec<TrialResult> {
        (0..self.cfg.experiment.trials).into_par_iter().map(|i| self.run_trial(i, false).0).collect()
    }

    /// Like [`Experiment::run`], keeping every trial's trace.
    pub fn run_traced(&self) -> Vec<(TrialResult, String)> {
        (0..self.cfg.experiment.trials)
            .into_par_iter()
            .map(|i| {
                let (r, t) = self.run_trial(i, true);
                (r, t.unwrap_or_default())
            })
            .collect()
    }
}

/// Runs every trial of `cfg` in parallel; results are in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialResult>, ConfigError> {
    Ok(Experiment::new(cfg.clone())?.run())
}
