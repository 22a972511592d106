//! Quasistatic simulator for vision-driven compliant peg-in-hole insertion
//! with an underactuated hand.

pub mod control;
pub mod geometry;
pub mod hand;
pub mod harness;
pub mod posemath;
pub mod world;

pub use control::{ControllerMode, FailureCause, TrialResult};
pub use geometry::{FaceCloud, HoleGeometry, InsertionParams, PegGeometry, Point2};
pub use harness::{ConfigError, ExperimentConfig, NoiseLevel, OutputFormat};
pub use posemath::{Pose, Twist};
pub use world::CompliancePreset;
