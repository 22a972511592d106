use super::GeometryError;

/// Initial tilt that brings the top edge over the grasp point.
pub fn beta0(d_o: f64, h: f64) -> Result<f64, GeometryError> {
    if !(d_o > 0.0) || !(h > 0.0) {
        return Err(GeometryError::InvalidDimension("d_o and h must be positive"));
    }
    Ok((d_o / (2.0 * h)).atan())
}

/// Largest tilt at which a peg of width `d_o` fits a hole of width `d_h`.
pub fn beta_f_max(d_o: f64, d_h: f64) -> Result<f64, GeometryError> {
    if !(d_o > 0.0) || !(d_h > 0.0) {
        return Err(GeometryError::InvalidDimension("widths must be positive"));
    }
    if d_o > d_h {
        return Err(GeometryError::PegExceedsHole { d_o, d_h });
    }
    Ok((d_o / d_h).acos())
}

/// Height of the edge frame over the rim such that rotating from `beta0` to
/// `beta_f` about the grasp point puts the lowest corner on the rim.
pub fn insertion_height(h: f64, d_o: f64, beta0: f64, beta_f: f64) -> f64 {
    h * (beta0.cos() + beta_f.cos()) + 0.5 * d_o * (beta0.sin() + beta_f.sin())
}

pub fn compliant_depth(delta: f64, overshoot: f64) -> Result<f64, GeometryError> {
    if !(overshoot >= 0.0) {
        return Err(GeometryError::InvalidDimension("overshoot must be non-negative"));
    }
    let dc = delta - overshoot;
    if !(dc > 0.0) {
        return Err(GeometryError::InvalidDimension("compliant depth must be positive"));
    }
    Ok(dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn beta0_examples() {
        assert!((beta0(30.0, 40.0).unwrap() - 0.358_770_670_270_572_2).abs() < 1e-15);
        assert!((beta0(30.0, 40.0).unwrap().to_degrees() - 20.556).abs() < 1e-3);
        assert!(beta0(1e-9, 40.0).unwrap() < 1e-10);
        assert_eq!(beta0(80.0, 40.0).unwrap(), FRAC_PI_4);
        assert!(beta0(0.0, 40.0).is_err());
        assert!(beta0(30.0, -1.0).is_err());
    }

    #[test]
    fn beta_f_max_examples() {
        assert_eq!(beta_f_max(30.0, 30.0).unwrap(), 0.0);
        let b = beta_f_max(30.0, 30.5).unwrap();
        assert!((b - 0.1813).abs() < 1e-4, "{b}");
        assert!((b.to_degrees() - 10.39).abs() < 0.01);
        assert!(matches!(beta_f_max(30.0, 29.0), Err(GeometryError::PegExceedsHole { .. })));
    }

    #[test]
    fn insertion_height_examples() {
        let b0 = 20.556f64.to_radians();
        let bf = 10.39f64.to_radians();
        let d = insertion_height(40.0, 30.0, b0, bf);
        // 40(cos b0 + cos bf) + 15(sin b0 + sin bf)
        let expect = 40.0 * (0.936_329 + 0.983_603) + 15.0 * (0.351_123 + 0.180_346);
        assert!((d - expect).abs() < 1e-3, "{d}");
        assert!((d - 84.77).abs() < 0.01);
        assert_eq!(insertion_height(40.0, 30.0, 0.0, 0.0), 80.0);
        assert_eq!(insertion_height(40.0, 0.0, b0, bf), 40.0 * (b0.cos() + bf.cos()));
    }

    #[test]
    fn compliant_depth_examples() {
        assert!((compliant_depth(84.77, 2.0).unwrap() - 82.77).abs() < 1e-12);
        assert_eq!(compliant_depth(84.77, 0.0).unwrap(), 84.77);
        assert!(compliant_depth(84.77, 90.0).is_err());
        assert!(compliant_depth(84.77, -1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn height_symmetric(h in 1.0f64..100.0, d in 0.0f64..60.0, a in 0.0f64..1.5, b in 0.0f64..1.5) {
                let x = insertion_height(h, d, a, b);
                let y = insertion_height(h, d, b, a);
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }

            #[test]
            fn beta_f_max_monotone(d_o in 1.0f64..50.0, gap in 0.0f64..5.0, bump in 0.01f64..1.0) {
                let d_h = d_o + gap;
                let base = beta_f_max(d_o, d_h).unwrap();
                prop_assert!(beta_f_max(d_o, d_h + bump).unwrap() > base);
                let smaller = (d_o - bump).max(0.5);
                prop_assert!(beta_f_max(smaller, d_h).unwrap() >= base);
            }

            #[test]
            fn beta0_in_open_quarter(d in 1e-3f64..200.0, h in 1e-3f64..200.0) {
                let b = beta0(d, h).unwrap();
                prop_assert!(b > 0.0 && b < std::f64::consts::FRAC_PI_2);
            }
        }
    }
}
