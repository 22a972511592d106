use nalgebra::{Rotation3, Vector3};

use super::{FaceCloud, GeometryError, Point2};
use crate::posemath::Pose;

/// Relative tolerance for eigenvalue and projection ties.
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalAxes {
    pub pi1: Point2,
    pub pi2: Point2,
    pub centroid: Point2,
    /// Covariance eigenvalues, largest first.
    pub eigenvalues: (f64, f64),
}

/// Edge-attached control frame of a peg face.
#[derive(Clone, Debug, PartialEq)]
pub struct ManipulationFrame {
    /// Object-centroid frame to the edge frame. In-plane only; the offset
    /// along the peg axis is added by [`super::PegGeometry`].
    pub t: Pose,
    pub pi1: Point2,
    pub pi2: Point2,
    pub m: Point2,
    pub d_o: f64,
    pub centroid: Point2,
}

fn scale_of(face: &FaceCloud) -> f64 {
    face.points().iter().map(|p| p.amax()).fold(0.0, f64::max).max(1.0)
}

pub fn principal_axes(face: &FaceCloud) -> Result<PrincipalAxes, GeometryError> {
    let c = face.centroid();
    let n = face.len() as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in face.points() {
        let d = p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    sxx /= n;
    sxy /= n;
    syy /= n;
    let mean = 0.5 * (sxx + syy);
    let r = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let (l1, l2) = (mean + r, mean - r);
    if !(l1 > 0.0) || l2 <= 1e-12 * l1 {
        return Err(GeometryError::DegenerateCloud);
    }
    let mut pi1 = if r <= TIE_TOL * mean {
        // Isotropic: every direction is principal.
        Point2::new(1.0, 0.0)
    } else if sxx >= syy {
        Point2::new(l1 - syy, sxy).normalize()
    } else {
        Point2::new(sxy, l1 - sxx).normalize()
    };
    let (lo, hi) = face
        .points()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = pi1.dot(&(p - c));
            (lo.min(s), hi.max(s))
        });
    let tol = TIE_TOL * scale_of(face);
    let flip = if (hi - (-lo)).abs() <= tol {
        pi1.x < -tol || (pi1.x.abs() <= tol && pi1.y < 0.0)
    } else {
        hi < -lo
    };
    if flip {
        pi1 = -pi1;
    }
    let pi2 = Point2::new(-pi1.y, pi1.x);
    Ok(PrincipalAxes {
        pi1,
        pi2,
        centroid: c,
        eigenvalues: (l1, l2),
    })
}

pub fn manipulation_frame(face: &FaceCloud) -> Result<ManipulationFrame, GeometryError> {
    let ax = principal_axes(face)?;
    let tol = TIE_TOL * scale_of(face);
    let c = ax.centroid;
    let mut best = face.points()[0];
    let mut best_s = ax.pi1.dot(&(best - c));
    for p in &face.points()[1..] {
        let s = ax.pi1.dot(&(p - c));
        let better = if (s - best_s).abs() <= tol {
            p.y < best.y || (p.y == best.y && p.x < best.x)
        } else {
            s > best_s
        };
        if better {
            best = *p;
            best_s = s;
        }
    }
    let (lo, hi) = face.projection_range(&ax.pi1);
    let d_o = hi - lo;
    // Origin on the principal axis at the outermost extent.
    let origin = ax.pi1 * ax.pi1.dot(&(best - c));
    let rot = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::new(
        ax.pi1.x, ax.pi2.x, 0.0, //
        ax.pi1.y, ax.pi2.y, 0.0, //
        0.0, 0.0, 1.0,
    ));
    Ok(ManipulationFrame {
        t: Pose::new(rot, Vector3::new(origin.x, origin.y, 0.0)),
        pi1: ax.pi1,
        pi2: ax.pi2,
        m: best,
        d_o,
        centroid: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::face::circle;

    fn rect() -> FaceCloud {
        FaceCloud::from_xy(&[(-2.0, -1.0), (2.0, -1.0), (2.0, 1.0), (-2.0, 1.0)]).unwrap()
    }

    #[test]
    fn rectangle_axes() {
        let ax = principal_axes(&rect()).unwrap();
        assert_eq!(ax.pi1, Point2::new(1.0, 0.0));
        assert_eq!(ax.centroid, Point2::zeros());
        let mf = manipulation_frame(&rect()).unwrap();
        assert_eq!(mf.m, Point2::new(2.0, -1.0));
        assert_eq!(mf.d_o, 4.0);
        assert_eq!(mf.t.translation, Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn circle_tie_break() {
        let f = FaceCloud::new(circle(10.0, 360)).unwrap();
        let ax = principal_axes(&f).unwrap();
        assert!((ax.pi1 - Point2::new(1.0, 0.0)).norm() < 1e-12);
        let mf = manipulation_frame(&FaceCloud::new(circle(15.0, 360)).unwrap()).unwrap();
        assert!((mf.d_o - 30.0).abs() < 0.05);
    }

    #[test]
    fn near_collinear_matches_closed_form() {
        let eps = 1e-3;
        let f = FaceCloud::from_xy(&[(0.0, 0.0), (4.0, 1.0 + eps), (8.0, 2.0)]).unwrap();
        let ax = principal_axes(&f).unwrap();
        // Closed-form eigenvector of the 2x2 covariance.
        let c = f.centroid();
        let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
        for p in f.points() {
            let q = p - c;
            a += q.x * q.x / 3.0;
            b += q.x * q.y / 3.0;
            d += q.y * q.y / 3.0;
        }
        let l = 0.5 * (a + d) + (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let v = Point2::new(b, l - a).normalize();
        assert!((ax.pi1 - v).norm() < 1e-12 || (ax.pi1 + v).norm() < 1e-12);
        assert!((ax.pi1.x.abs() - 0.970).abs() < 1e-3 && (ax.pi1.y.abs() - 0.243).abs() < 1e-3);
    }

    #[test]
    fn collinear_is_degenerate() {
        assert!(FaceCloud::from_xy(&[(0.0, 0.0), (4.0, 1.0), (8.0, 2.0)]).is_err());
    }

    #[test]
    fn triangle_extreme_vertex() {
        let h = 3f64.sqrt() / 2.0;
        let f = FaceCloud::from_xy(&[(0.0, 0.0), (1.0, 0.0), (0.5, h)]).unwrap();
        let mf = manipulation_frame(&f).unwrap();
        let proj: Vec<f64> = f.points().iter().map(|p| mf.pi1.dot(p)).collect();
        let max = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = proj.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(mf.d_o, max - min);
        assert!(mf.pi1.dot(&mf.m) >= max - 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cloud() -> impl Strategy<Value = FaceCloud> {
            prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..60)
                .prop_filter_map("degenerate", |xy| FaceCloud::from_xy(&xy).ok())
        }

        proptest! {
            #[test]
            fn d_o_equals_pairwise_projection(f in cloud()) {
                let mf = manipulation_frame(&f).unwrap();
                let mut best = f64::NEG_INFINITY;
                for a in f.points() {
                    for b in f.points() {
                        best = best.max(mf.pi1.dot(a) - mf.pi1.dot(b));
                    }
                }
                prop_assert_eq!(mf.d_o, best);
            }

            #[test]
            fn frame_invariants(f in cloud()) {
                let mf = manipulation_frame(&f).unwrap();
                prop_assert!((mf.pi1.norm() - 1.0).abs() < 1e-12);
                prop_assert!(mf.pi1.dot(&mf.pi2).abs() < 1e-12);
                prop_assert!(f.points().contains(&mf.m));
                let sm = mf.pi1.dot(&(mf.m - mf.centroid));
                for p in f.points() {
                    prop_assert!(sm >= mf.pi1.dot(&(p - mf.centroid)) - 1e-9);
                }
            }

            #[test]
            fn rotation_equivariance(f in cloud(), angle in -3.0f64..3.0) {
                let a = manipulation_frame(&f).unwrap();
                let g = f.rotated(angle);
                let b = manipulation_frame(&g).unwrap();
                prop_assert!((a.d_o - b.d_o).abs() < 1e-9);
                // The axis is only defined up to the sign convention.
                let r = nalgebra::Rotation2::new(angle);
                let rp = r * a.pi1;
                let ev = principal_axes(&f).unwrap().eigenvalues;
                prop_assume!((ev.0 - ev.1) > 1e-6 * ev.0);
                let s = if rp.dot(&b.pi1) > 0.0 { 1.0 } else { -1.0 };
                prop_assert!((rp * s - b.pi1).norm() < 1e-6);
                if s > 0.0 {
                    let ext = |mf: &ManipulationFrame| mf.pi1.dot(&(mf.m - mf.centroid));
                    prop_assert!((ext(&a) - ext(&b)).abs() < 1e-9);
                    let to = r * a.t.translation.xy();
                    prop_assert!((to - b.t.translation.xy()).norm() < 1e-6);
                }
            }
        }
    }
}
