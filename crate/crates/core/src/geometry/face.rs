use nalgebra::Vector2;
use std::fmt::Write as _;
use std::path::Path;

use super::GeometryError;

pub type Point2 = Vector2<f64>;

/// Planar point cloud of a peg face, in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceCloud {
    points: Vec<Point2>,
}

fn cross(o: &Point2, a: &Point2, b: &Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (Andrew's monotone chain), no collinear
/// vertices.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

impl FaceCloud {
    pub fn new(points: Vec<Point2>) -> Result<Self, GeometryError> {
        if points.len() < 3 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        let hull = convex_hull(&points);
        let scale = points.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1e-300);
        if hull.len() < 3 || polygon_area(&hull) <= 1e-14 * scale * scale {
            return Err(GeometryError::DegenerateCloud);
        }
        Ok(Self { points })
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self, GeometryError> {
        Self::new(xy.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point2 {
        let sum: Point2 = self.points.iter().sum();
        sum / self.points.len() as f64
    }

    pub fn hull(&self) -> Vec<Point2> {
        convex_hull(&self.points)
    }

    pub fn hull_area(&self) -> f64 {
        polygon_area(&self.hull())
    }

    /// Min and max of `u . f` over the cloud.
    pub fn projection_range(&self, u: &Point2) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = u.dot(p);
            (lo.min(s), hi.max(s))
        })
    }

    /// Width of the cloud measured along `u` (unit).
    pub fn extent_along(&self, u: &Point2) -> f64 {
        let (lo, hi) = self.projection_range(u);
        hi - lo
    }

    pub fn translated(&self, d: &Point2) -> FaceCloud {
        FaceCloud {
            points: self.points.iter().map(|p| p + d).collect(),
        }
    }

    pub fn rotated(&self, angle: f64) -> FaceCloud {
        let r = nalgebra::Rotation2::new(angle);
        FaceCloud {
            points: self.points.iter().map(|p| r * p).collect(),
        }
    }

    /// Same cloud with its point centroid moved to the origin.
    pub fn centered(&self) -> FaceCloud {
        self.translated(&-self.centroid())
    }

    /// Boundary samples of the Minkowski sum of the convex hull with a disk of
    /// radius `r`. Arcs at hull vertices are sampled at most `max_step` apart.
    pub fn dilated(&self, r: f64, max_step: f64) -> Result<FaceCloud, GeometryError> {
        if !(r > 0.0) {
            return Err(GeometryError::InvalidDimension("clearance must be positive"));
        }
        let hull = self.hull();
        let n = hull.len();
        let normal = |i: usize| {
            let e = hull[(i + 1) % n] - hull[i];
            Point2::new(e.y, -e.x).normalize()
        };
        let mut out = Vec::new();
        for i in 0..n {
            let n_in = normal((i + n - 1) % n);
            let n_out = normal(i);
            let a0 = n_in.y.atan2(n_in.x);
            let mut sweep = n_out.y.atan2(n_out.x) - a0;
            if sweep < 0.0 {
                sweep += std::f64::consts::TAU;
            }
            let steps = (sweep / max_step).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let a = a0 + sweep * k as f64 / steps as f64;
                out.push(hull[i] + Point2::new(a.cos(), a.sin()) * r);
            }
        }
        FaceCloud::new(out)
    }

    pub fn parse(text: &str) -> Result<FaceCloud, GeometryError> {
        let mut pts = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = || -> Result<f64, GeometryError> {
                it.next()
                    .ok_or_else(|| GeometryError::Parse(format!("line {}: expected \"x y\"", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| GeometryError::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let (x, y) = (next()?, next()?);
            if it.next().is_some() {
                return Err(GeometryError::Parse(format!("line {}: trailing fields", lineno + 1)));
            }
            pts.push(Point2::new(x, y));
        }
        FaceCloud::new(pts)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# x y (mm)\n");
        for p in &self.points {
            let _ = writeln!(s, "{} {}", p.x, p.y);
        }
        s
    }

    pub fn load(path: &Path) -> Result<FaceCloud, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

/// Samples of a circle, starting on the +x axis.
pub fn circle(radius: f64, n: usize) -> Vec<Point2> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Point2::new(radius * a.cos(), radius * a.sin())
        })
        .collect()
}

/// Resamples a closed polygon with `n` points evenly spaced by arc length.
/// Vertices are always kept.
pub fn resample_polygon(vertices: &[Point2], n: usize) -> Vec<Point2> {
    let m = vertices.len();
    let lens: Vec<f64> = (0..m).map(|i| (vertices[(i + 1) % m] - vertices[i]).norm()).collect();
    let total: f64 = lens.iter().sum();
    let mut out = Vec::with_capacity(n + m);
    for i in 0..m {
        let k = ((lens[i] / total) * n as f64).round().max(1.0) as usize;
        for j in 0..k {
            let t = j as f64 / k as f64;
            out.push(vertices[i] + (vertices[(i + 1) % m] - vertices[i]) * t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_clouds() {
        assert!(matches!(FaceCloud::from_xy(&[(0.0, 0.0), (1.0, 1.0)]), Err(GeometryError::TooFewPoints(2))));
        assert!(matches!(
            FaceCloud::from_xy(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]),
            Err(GeometryError::DegenerateCloud)
        ));
        assert!(matches!(
            FaceCloud::from_xy(&[(0.0, 0.0), (1.0, f64::NAN), (2.0, 0.0)]),
            Err(GeometryError::NonFinite)
        ));
    }

    #[test]
    fn hull_of_square_with_interior() {
        let f = FaceCloud::from_xy(&[(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (1.0, 1.0), (1.0, 0.0)]).unwrap();
        assert_eq!(f.hull().len(), 4);
        assert!((f.hull_area() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let f = FaceCloud::new(circle(15.0, 181)).unwrap();
        let g = FaceCloud::parse(&f.to_text()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn parse_skips_comments_and_blanks() {
        let f = FaceCloud::parse("# header\n0 0\n\n1 0 # tail\n0 1\n").unwrap();
        assert_eq!(f.len(), 3);
        assert!(FaceCloud::parse("0 0\n1\n0 1\n").is_err());
    }

    #[test]
    fn dilation_adds_clearance_in_every_direction() {
        let f = FaceCloud::from_xy(&[(-18.0, -10.0), (18.0, -10.0), (18.0, 10.0), (-18.0, 10.0)]).unwrap();
        let g = f.dilated(0.25, 1f64.to_radians()).unwrap();
        for k in 0..360 {
            let a = (k as f64).to_radians();
            let u = Point2::new(a.cos(), a.sin());
            let d = g.extent_along(&u) - f.extent_along(&u);
            assert!((d - 0.5).abs() < 1e-4, "{k}: {d}");
        }
    }
}
