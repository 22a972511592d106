use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use super::{Pose, PoseError};

/// Identifies a tracked object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetId(pub u32);

impl TargetId {
    pub const PEG: TargetId = TargetId(0);
    pub const HOLE: TargetId = TargetId(1);
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    pub rate: f64,
    /// Per-axis translation noise bound (mm).
    pub trans_noise: f64,
    /// Per-Euler-axis rotation noise bound (degrees).
    pub rot_noise: f64,
    pub seed: u64,
    pub init_noise_scale: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            rate: 30.0,
            trans_noise: 0.0,
            rot_noise: 0.0,
            seed: 0,
            init_noise_scale: 2.0,
        }
    }
}

impl TrackerConfig {
    pub fn with_noise(trans_noise: f64, rot_noise: f64, seed: u64) -> Self {
        Self {
            trans_noise,
            rot_noise,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(PoseError::InvalidConfig("rate must be positive".into()));
        }
        if !(self.trans_noise >= 0.0 && self.rot_noise >= 0.0 && self.init_noise_scale >= 0.0) {
            return Err(PoseError::InvalidConfig("noise bounds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub pose: Pose,
    pub stamp: f64,
    pub target_id: TargetId,
}

/// Stream reserved for one-shot initialization draws.
const INIT_STREAM_OFFSET: u64 = 1 << 32;

/// Draws the noise for one observation. The generator is positioned by the
/// clock tick, so the result depends only on (seed, clock, target).
fn perturb(pose: &Pose, cfg: &TrackerConfig, scale: f64, clock: f64, stream: u64) -> Pose {
    let t_bound = cfg.trans_noise * scale;
    let r_bound = cfg.rot_noise.to_radians() * scale;
    if t_bound == 0.0 && r_bound == 0.0 {
        return *pose;
    }
    let tick = (clock * cfg.rate).round().max(0.0) as u128;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    // 6 f64 draws use 12 words; 16 per tick leaves slack.
    rng.set_word_pos(tick * 16);
    let mut u = |b: f64| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 };
    let dt = Vector3::new(u(t_bound), u(t_bound), u(t_bound));
    let (roll, pitch, yaw) = (u(r_bound), u(r_bound), u(r_bound));
    let dr = Rotation3::from_euler_angles(roll, pitch, yaw);
    Pose::new(dr * pose.rotation, pose.translation + dt)
}

/// Stateless noisy observation.
pub fn observe(true_pose: &Pose, cfg: &TrackerConfig, clock: f64, target: TargetId) -> Observation {
    Observation {
        pose: perturb(true_pose, cfg, 1.0, clock, target.0 as u64),
        stamp: clock,
        target_id: target,
    }
}

/// One-shot initialization with noise bounds scaled by `init_noise_scale`.
pub fn initialize_track(true_pose: &Pose, cfg: &TrackerConfig, target: TargetId) -> Observation {
    Observation {
        pose: perturb(
            true_pose,
            cfg,
            cfg.init_noise_scale,
            0.0,
            INIT_STREAM_OFFSET + target.0 as u64,
        ),
        stamp: 0.0,
        target_id: target,
    }
}

/// Per-trial tracker that enforces monotone stamps and counts queries.
#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    last: HashMap<TargetId, f64>,
    queries: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, PoseError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            last: HashMap::new(),
            queries: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn initialize(&mut self, true_pose: &Pose, target: TargetId) -> Observation {
        self.queries += 1;
        self.last.entry(target).or_insert(0.0);
        initialize_track(true_pose, &self.cfg, target)
    }

    pub fn observe(&mut self, true_pose: &Pose, clock: f64, target: TargetId) -> Result<Observation, PoseError> {
        if let Some(&prev) = self.last.get(&target) {
            if clock < prev {
                return Err(PoseError::ClockRegression { target: target.0, clock, last: prev });
            }
        }
        self.last.insert(target, clock);
        self.queries += 1;
        Ok(observe(true_pose, &self.cfg, clock, target))
    }
}
