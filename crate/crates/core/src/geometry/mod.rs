//! Peg and hole geometry, the PCA edge frame, and the closed-form insertion
//! formulas.

mod face;
mod insertion;
mod pca;

pub use face::{circle, convex_hull, polygon_area, resample_polygon, FaceCloud, Point2};
pub use insertion::{beta0, beta_f_max, compliant_depth, insertion_height};
pub use pca::{manipulation_frame, principal_axes, ManipulationFrame, PrincipalAxes};

use crate::posemath::Pose;
use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("face cloud needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("face cloud has non-finite coordinates")]
    NonFinite,
    #[error("face cloud is degenerate (collinear points)")]
    DegenerateCloud,
    #[error("invalid dimension: {0}")]
    InvalidDimension(&'static str),
    #[error("peg width {d_o} exceeds hole width {d_h}")]
    PegExceedsHole { d_o: f64, d_h: f64 },
    #[error("face parse error: {0}")]
    Parse(String),
}

/// Extruded peg. The body frame sits on the face centroid at the grasp
/// height with z along the peg axis pointing at the top face.
#[derive(Clone, Debug, PartialEq)]
pub struct PegGeometry {
    /// Face with its point centroid at the origin.
    pub face: FaceCloud,
    pub height: f64,
    /// Distance from the top face down to the grasp plane.
    pub grasp_height: f64,
}

impl PegGeometry {
    pub fn new(face: FaceCloud, height: f64, grasp_height: f64) -> Result<Self, GeometryError> {
        if !(height > 0.0) {
            return Err(GeometryError::InvalidDimension("peg height must be positive"));
        }
        if !(grasp_height > 0.0 && grasp_height <= height) {
            return Err(GeometryError::InvalidDimension("grasp height must be in (0, height]"));
        }
        Ok(Self {
            face: face.centered(),
            height,
            grasp_height,
        })
    }

    pub fn frame(&self) -> Result<ManipulationFrame, GeometryError> {
        manipulation_frame(&self.face)
    }

    /// Distance from the grasp plane down to the bottom face.
    pub fn bottom_offset(&self) -> f64 {
        self.height - self.grasp_height
    }

    /// Body frame to the edge frame on the top face.
    pub fn edge_transform(&self) -> Result<Pose, GeometryError> {
        let mf = self.frame()?;
        Ok(Pose::from_translation(Vector3::new(0.0, 0.0, self.grasp_height)).compose(&mf.t))
    }

    /// (min, max) of the face projected on `u`.
    pub fn extents(&self, u: &Point2) -> (f64, f64) {
        self.face.projection_range(u)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoleGeometry {
    pub face: FaceCloud,
    pub clearance: f64,
    /// Frame at the rim centre, z out of the hole.
    pub pose: Pose,
    pub depth: f64,
    peg_face: FaceCloud,
}

impl HoleGeometry {
    pub fn for_peg(peg: &PegGeometry, clearance: f64, depth: f64, pose: Pose) -> Result<Self, GeometryError> {
        if !(depth > 0.0) {
            return Err(GeometryError::InvalidDimension("hole depth must be positive"));
        }
        let face = peg.face.dilated(clearance, 1f64.to_radians())?;
        Ok(Self {
            face,
            clearance,
            pose,
            depth,
            peg_face: peg.face.clone(),
        })
    }

    /// Hole width along unit direction `u`; exactly the peg width plus twice
    /// the clearance.
    pub fn width_along(&self, u: &Point2) -> f64 {
        self.peg_face.extent_along(u) + 2.0 * self.clearance
    }

    /// (min, max) wall positions along `u` in the hole frame.
    pub fn walls(&self, u: &Point2) -> (f64, f64) {
        let (lo, hi) = self.peg_face.projection_range(u);
        (lo - self.clearance, hi + self.clearance)
    }
}

/// Inputs of the insertion sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct InsertionParams {
    pub beta0: f64,
    pub beta_f: f64,
    pub delta: f64,
    pub delta_c: f64,
    pub gamma: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InsertionOptions {
    pub overshoot: f64,
    /// beta_f as a fraction of beta_f_max.
    pub beta_f_fraction: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub beta0_override: Option<f64>,
}

impl Default for InsertionOptions {
    fn default() -> Self {
        Self {
            overshoot: 2.0,
            beta_f_fraction: 0.8,
            gamma: 0.5,
            sigma: 1.0,
            beta0_override: None,
        }
    }
}

impl InsertionParams {
    pub fn derive(peg: &PegGeometry, hole: &HoleGeometry, opts: &InsertionOptions) -> Result<Self, GeometryError> {
        let mf = peg.frame()?;
        let h = peg.grasp_height;
        let b0 = match opts.beta0_override {
            Some(b) => b,
            None => beta0(mf.d_o, h)?,
        };
        let bf = opts.beta_f_fraction * beta_f_max(mf.d_o, hole.width_along(&mf.pi1))?;
        let delta = insertion_height(h, mf.d_o, b0, bf);
        let p = Self {
            beta0: b0,
            beta_f: bf,
            delta,
            delta_c: compliant_depth(delta, opts.overshoot)?,
            gamma: opts.gamma,
            sigma: opts.sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        use std::f64::consts::FRAC_PI_2;
        if !(self.beta0 > 0.0 && self.beta0 < FRAC_PI_2) {
            return Err(GeometryError::InvalidDimension("beta0 must lie in (0, pi/2)"));
        }
        if !(self.beta_f > 0.0) {
            return Err(GeometryError::InvalidDimension("beta_f must be positive"));
        }
        if !(self.delta_c <= self.delta) {
            return Err(GeometryError::InvalidDimension("delta_c must not exceed delta"));
        }
        if !(self.gamma > 0.0 && self.sigma > 0.0) {
            return Err(GeometryError::InvalidDimension("gamma and sigma must be positive"));
        }
        Ok(())
    }
}
