//! Rigid transforms, their tangent space, and the simulated pose tracker.

mod se3;
mod tracker;

pub use se3::{hat, rotation_log, vee, Pose, PoseChain, Twist, NEAR_PI_TOL};
pub use tracker::{initialize_track, observe, Observation, TargetId, Tracker, TrackerConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("rotation angle {angle} is within the branch tolerance of pi")]
    NearPiRotation { angle: f64 },
    #[error("observation clock {clock} precedes last stamp {last} for target {target}")]
    ClockRegression { target: u32, clock: f64, last: f64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("pose parse error: {0}")]
    Parse(String),
}
