//! Peg-hole contact in two orthogonal vertical sections through the hole
//! axis. Each section sees the peg as a rectangle pivoting about the grasp
//! point and the hole as two quarter-plane blocks over a floor.

use nalgebra::{SVector, Vector2};

use super::WorldError;

pub type Vec5 = SVector<f64, 5>;

/// Index of the height coordinate in a [`RelConfig`] vector.
pub const Z: usize = 2;

/// Gauss-Seidel sweeps allowed per substep.
pub const MAX_ITERATIONS: usize = 200;

const GAP_TOL: f64 = 1e-9;
/// Resting contacts reported when a rigid motion is blocked (mm).
const TOUCH_TOL: f64 = 1e-3;
/// Residual overlap tolerated when the sweeps run out (mm).
const ACCEPT_TOL: f64 = 1e-2;
/// Wall position standing in for "no opening" (mm).
const SOLID: f64 = 1e6;

/// One vertical cut through the hole axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    /// Peg extent along the section axis, relative to the grasp point.
    pub peg_lo: f64,
    pub peg_hi: f64,
    /// Hole wall positions along the same axis in the hole frame.
    pub wall_lo: f64,
    pub wall_hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactGeometry {
    pub sections: [Section; 2],
    /// Distance from the grasp point down to the bottom face.
    pub below: f64,
    /// Distance from the grasp point up to the top face.
    pub above: f64,
    pub depth: f64,
}

/// Peg grasp point relative to the hole frame: offsets along the two section
/// axes, height over the rim, and tilt within each section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelConfig {
    pub u: [f64; 2],
    pub z: f64,
    pub theta: [f64; 2],
}

impl RelConfig {
    pub fn to_vec(&self) -> Vec5 {
        Vec5::new(self.u[0], self.u[1], self.z, self.theta[0], self.theta[1])
    }

    pub fn from_vec(v: &Vec5) -> Self {
        Self {
            u: [v[0], v[1]],
            z: v[2],
            theta: [v[3], v[4]],
        }
    }

    /// Section coordinates (lateral, height) of a peg body point given in
    /// section-local body coordinates.
    pub fn point(&self, section: usize, body: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta[section].sin_cos();
        Vector2::new(self.u[section] + body.x * c - body.y * s, self.z + body.x * s + body.y * c)
    }

    /// Inverse of [`RelConfig::point`].
    pub fn to_body(&self, section: usize, p: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta[section].sin_cos();
        let d = p - Vector2::new(self.u[section], self.z);
        Vector2::new(d.x * c + d.y * s, -d.x * s + d.y * c)
    }
}

/// Series compliance per coordinate (mm/N, rad/(N mm)); zero is rigid.
pub type Compliance = [f64; 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Contact pushes the peg towards +axis (the low wall).
    Low,
    /// Contact pushes the peg towards -axis (the high wall).
    High,
    /// Peg resting on the rim surface around the hole.
    Top,
    Floor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Feature {
    /// Peg bottom corner (0 = low, 1 = high) against the hole blocks.
    PegCorner(usize),
    /// Rim corner (0 = low wall, 1 = high wall) against the peg.
    RimCorner(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Face {
    BlockTop(usize),
    BlockSide(usize),
    Floor,
    PegSide(usize),
    PegBottom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Contact {
    pub section: usize,
    /// Contact location in section coordinates.
    pub point: Vector2<f64>,
    /// Direction the contact pushes the peg.
    pub normal: Vector2<f64>,
    pub side: Side,
    /// Normal force (N).
    pub force: f64,
    /// Friction force magnitude (N).
    pub friction: f64,
    pub sticking: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resolution {
    pub config: RelConfig,
    pub contacts: Vec<Contact>,
    /// A rigid coordinate would have to move: the command was cut short.
    pub blocked: bool,
    /// Fraction of the command that was executed.
    pub fraction: f64,
    /// Command actually executed (the spring anchor).
    pub anchor: RelConfig,
    pub iterations: usize,
}

impl Resolution {
    pub fn spring_energy(&self, w: &Compliance) -> f64 {
        spring_energy(&self.config, &self.anchor, w)
    }

    /// Minimum signed clearance over the reported contacts.
    pub fn min_gap(&self, geom: &ContactGeometry) -> f64 {
        min_clearance(geom, &self.config)
    }
}

pub fn spring_energy(p: &RelConfig, anchor: &RelConfig, w: &Compliance) -> f64 {
    let d = p.to_vec() - anchor.to_vec();
    (0..5).filter(|&i| w[i] > 0.0).map(|i| 0.5 * d[i] * d[i] / w[i]).sum()
}

fn perp(r: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-r.y, r.x)
}

impl ContactGeometry {
    fn peg_corner(&self, section: usize, k: usize) -> Vector2<f64> {
        let s = &self.sections[section];
        Vector2::new(if k == 0 { s.peg_lo } else { s.peg_hi }, -self.below)
    }

    fn rim_corner(&self, section: usize, k: usize) -> Vector2<f64> {
        let s = &self.sections[section];
        Vector2::new(if k == 0 { s.wall_lo } else { s.wall_hi }, 0.0)
    }

    /// Geometry seen from `cfg`: a section whose opening the peg cannot
    /// reach, because its footprint misses the opening in the other
    /// section, sees a solid rim.
    pub fn effective(&self, cfg: &RelConfig) -> ContactGeometry {
        let mut g = *self;
        for s in 0..2 {
            let o = 1 - s;
            let a = cfg.point(o, self.peg_corner(o, 0)).x;
            let b = cfg.point(o, self.peg_corner(o, 1)).x;
            let sec = &self.sections[o];
            if a.max(b) <= sec.wall_lo || a.min(b) >= sec.wall_hi {
                g.sections[s].wall_lo = SOLID;
                g.sections[s].wall_hi = SOLID;
            }
        }
        g
    }

    /// Whether `face` still extends under the feature. Faces are finite;
    /// a feature that slides off the end of one releases it.
    fn spans(&self, cfg: &RelConfig, section: usize, f: Feature, face: Face) -> bool {
        let s = &self.sections[section];
        match f {
            Feature::PegCorner(k) => {
                let p = cfg.point(section, self.peg_corner(section, k));
                match face {
                    Face::BlockTop(0) => p.x <= s.wall_lo + GAP_TOL,
                    Face::BlockTop(_) => p.x >= s.wall_hi - GAP_TOL,
                    Face::BlockSide(_) => p.y <= GAP_TOL,
                    Face::Floor => p.x >= s.wall_lo - GAP_TOL && p.x <= s.wall_hi + GAP_TOL,
                    _ => unreachable!(),
                }
            }
            Feature::RimCorner(k) => {
                let b = cfg.to_body(section, self.rim_corner(section, k));
                match face {
                    Face::PegSide(_) => b.y >= -self.below - GAP_TOL,
                    Face::PegBottom => b.x >= s.peg_lo - GAP_TOL && b.x <= s.peg_hi + GAP_TOL,
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Lowest point of the peg bottom over rim block `k`: the peg corner, or
    /// the bottom face where it passes over the rim corner. Returns the
    /// clearance, contact point and push direction.
    fn rim_support(&self, cfg: &RelConfig, section: usize, k: usize) -> (f64, Vector2<f64>, Vector2<f64>) {
        let s = &self.sections[section];
        let p = cfg.point(section, self.peg_corner(section, k));
        let corner = (p.y, p, Vector2::y());
        let rim = self.rim_corner(section, k);
        let b = cfg.to_body(section, rim);
        if b.x > s.peg_lo && b.x < s.peg_hi {
            let g = -self.below - b.y;
            if g < corner.0 {
                let (sn, cs) = cfg.theta[section].sin_cos();
                return (g, rim, Vector2::new(-sn, cs));
            }
        }
        corner
    }

    /// Signed clearance of a feature against a face; negative is penetration.
    fn gap(&self, cfg: &RelConfig, section: usize, f: Feature, face: Face) -> f64 {
        let s = &self.sections[section];
        match f {
            Feature::PegCorner(k) => {
                let p = cfg.point(section, self.peg_corner(section, k));
                match face {
                    Face::BlockTop(_) => self.rim_support(cfg, section, k).0,
                    Face::BlockSide(0) => p.x - s.wall_lo,
                    Face::BlockSide(_) => s.wall_hi - p.x,
                    Face::Floor => p.y + self.depth,
                    _ => unreachable!(),
                }
            }
            Feature::RimCorner(k) => {
                let b = cfg.to_body(section, self.rim_corner(section, k));
                match face {
                    Face::PegSide(0) => s.peg_lo - b.x,
                    Face::PegSide(_) => b.x - s.peg_hi,
                    Face::PegBottom => -self.below - b.y,
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Whether a feature is strictly inside an obstacle.
    fn inside(&self, cfg: &RelConfig, section: usize, f: Feature) -> bool {
        let s = &self.sections[section];
        match f {
            Feature::PegCorner(k) => {
                let p = cfg.point(section, self.peg_corner(section, k));
                let beyond = if k == 0 { p.x < s.wall_lo - GAP_TOL } else { p.x > s.wall_hi + GAP_TOL };
                let in_block = beyond && self.rim_support(cfg, section, k).0 < -GAP_TOL;
                let in_wall = p.y < -GAP_TOL && (p.x < s.wall_lo - GAP_TOL || p.x > s.wall_hi + GAP_TOL);
                in_block || in_wall || p.y < -self.depth - GAP_TOL
            }
            Feature::RimCorner(k) => {
                let b = cfg.to_body(section, self.rim_corner(section, k));
                b.x > s.peg_lo + GAP_TOL && b.x < s.peg_hi - GAP_TOL && b.y > -self.below + GAP_TOL && b.y < self.above
            }
        }
    }

    /// Face a non-penetrating feature rests against, if within `tol`.
    fn touching(&self, cfg: &RelConfig, section: usize, f: Feature, tol: f64) -> Option<Face> {
        let s = &self.sections[section];
        let faces: Vec<Face> = match f {
            Feature::PegCorner(k) => {
                let p = cfg.point(section, self.peg_corner(section, k));
                if p.x < s.wall_lo || p.x > s.wall_hi {
                    vec![Face::BlockTop(usize::from(p.x > s.wall_hi))]
                } else if p.y < 0.0 {
                    vec![Face::BlockSide(0), Face::BlockSide(1), Face::Floor]
                } else {
                    vec![]
                }
            }
            Feature::RimCorner(k) => {
                let b = cfg.to_body(section, self.rim_corner(section, k));
                if b.y > -self.below && b.y < self.above {
                    vec![Face::PegSide(k)]
                } else {
                    vec![]
                }
            }
        };
        faces.into_iter().find(|&face| self.gap(cfg, section, f, face).abs() <= tol)
    }

    /// Face the feature crossed on its way from `from` to `to`.
    fn entry_face(&self, from: &RelConfig, to: &RelConfig, section: usize, f: Feature) -> Face {
        let candidates: Vec<Face> = match f {
            Feature::PegCorner(k) => {
                let s = &self.sections[section];
                let p = to.point(section, self.peg_corner(section, k));
                if p.x < s.wall_lo {
                    vec![Face::BlockTop(0), Face::BlockSide(0)]
                } else if p.x > s.wall_hi {
                    vec![Face::BlockTop(1), Face::BlockSide(1)]
                } else {
                    vec![Face::Floor]
                }
            }
            Feature::RimCorner(k) => vec![Face::PegSide(k), Face::PegBottom],
        };
        // Among faces the feature started outside of, the one crossed last.
        let mut best: Option<(f64, Face)> = None;
        for &face in &candidates {
            let g0 = self.gap(from, section, f, face);
            let g1 = self.gap(to, section, f, face);
            // Resting contacts may start with an accepted leftover overlap.
            if g0 >= -ACCEPT_TOL && g1 < g0 {
                let t = g0.max(0.0) / (g0.max(0.0) - g1);
                if best.map_or(true, |(bt, _)| t > bt) {
                    best = Some((t, face));
                }
            }
        }
        if let Some((_, face)) = best {
            return face;
        }
        // Started inside: the face it was closest to leaving through.
        candidates
            .into_iter()
            .map(|face| (self.gap(from, section, f, face), face))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|x| x.1)
            .unwrap()
    }

    /// Contact location and push direction for a feature and face.
    fn frame_of(&self, cfg: &RelConfig, section: usize, f: Feature, face: Face) -> (Vector2<f64>, Vector2<f64>, Side) {
        match f {
            Feature::PegCorner(k) => {
                let p = cfg.point(section, self.peg_corner(section, k));
                match face {
                    Face::BlockTop(_) => {
                        let (_, point, normal) = self.rim_support(cfg, section, k);
                        (point, normal, Side::Top)
                    }
                    Face::BlockSide(0) => (p, Vector2::x(), Side::Low),
                    Face::BlockSide(_) => (p, -Vector2::x(), Side::High),
                    Face::Floor => (p, Vector2::y(), Side::Floor),
                    _ => unreachable!(),
                }
            }
            Feature::RimCorner(k) => {
                let c = self.rim_corner(section, k);
                let (s, co) = cfg.theta[section].sin_cos();
                let e = Vector2::new(co, s);
                let a = Vector2::new(-s, co);
                let side = if k == 0 { Side::Low } else { Side::High };
                match face {
                    Face::PegSide(0) => (c, e, side),
                    Face::PegSide(_) => (c, -e, side),
                    Face::PegBottom => (c, a, Side::Top),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Row of d(displacement along `n` at `point`)/d(config).
    fn jacobian(&self, cfg: &RelConfig, section: usize, point: Vector2<f64>, n: Vector2<f64>) -> Vec5 {
        let r = point - Vector2::new(cfg.u[section], cfg.z);
        let mut j = Vec5::zeros();
        j[section] = n.x;
        j[Z] = n.y;
        j[3 + section] = n.dot(&perp(r));
        j
    }
}

/// Smallest signed clearance over every feature (positive when free).
pub fn min_clearance(geom: &ContactGeometry, cfg: &RelConfig) -> f64 {
    let mut m = f64::INFINITY;
    for section in 0..2 {
        for k in 0..2 {
            for f in [Feature::PegCorner(k), Feature::RimCorner(k)] {
                if geom.inside(cfg, section, f) {
                    let faces: &[Face] = match f {
                        Feature::PegCorner(_) => &[Face::BlockTop(0), Face::BlockSide(0), Face::BlockTop(1), Face::BlockSide(1), Face::Floor],
                        Feature::RimCorner(_) => &[Face::PegSide(0), Face::PegSide(1), Face::PegBottom],
                    };
                    let depth = faces
                        .iter()
                        .map(|&face| geom.gap(cfg, section, f, face))
                        .filter(|g| *g < 0.0)
                        .fold(f64::NEG_INFINITY, f64::max);
                    m = m.min(if depth.is_finite() { depth } else { -GAP_TOL });
                }
            }
        }
    }
    m
}

struct Active {
    section: usize,
    feature: Feature,
    face: Face,
    lambda: f64,
    friction: f64,
    sticking: bool,
}

/// Substep length: about 0.1 mm of motion at the peg bottom.
fn substeps(geom: &ContactGeometry, d: &Vec5) -> usize {
    let lever = geom.below.max(1.0);
    let m = d[0].abs().max(d[1].abs()).max(d[2].abs()).max(d[3].abs() * lever).max(d[4].abs() * lever);
    ((m / 0.1).ceil() as usize).clamp(1, 400)
}

/// Moves the spring anchor from `anchor0` to `anchor1` in substeps, starting
/// from the non-penetrating configuration `start`. Each substep relaxes the
/// springs fully, projects out of penetration in the compliance metric, then
/// applies Coulomb friction at the contacts. If a contact can only be
/// cleared by a rigid coordinate the motion stops at the last feasible
/// substep.
pub fn resolve(
    geom: &ContactGeometry,
    start: &RelConfig,
    anchor0: &RelConfig,
    anchor1: &RelConfig,
    w: &Compliance,
    mu: f64,
) -> Result<Resolution, WorldError> {
    let a0 = anchor0.to_vec();
    let a1 = anchor1.to_vec();
    // A stretched spring is re-walked coarsely; the anchor motion sets the
    // resolution.
    let n = substeps(geom, &(a1 - a0)).max(substeps(geom, &(a1 - start.to_vec())).min(8));
    let wm = Vec5::from_column_slice(w);
    let mut p = *start;
    let mut contacts = Vec::new();
    let mut iterations = 0;
    let mut anchor = *anchor0;
    for k in 1..=n {
        let target = RelConfig::from_vec(&(a0 + (a1 - a0) * (k as f64 / n as f64)));
        let geom = &geom.effective(&p);
        match substep(geom, &p, &target, &wm, mu)? {
            Some((q, c, it)) => {
                p = q;
                contacts = c;
                iterations += it;
                anchor = target;
            }
            None => {
                return Ok(Resolution {
                    config: p,
                    contacts: blocked_contacts(geom, &p, &target, &wm, contacts),
                    blocked: true,
                    fraction: (k - 1) as f64 / n as f64,
                    anchor,
                    iterations,
                })
            }
        }
    }
    Ok(Resolution {
        config: p,
        contacts,
        blocked: false,
        fraction: 1.0,
        anchor,
        iterations,
    })
}

/// Contacts that stopped a blocked motion, reported as sticking.
fn blocked_contacts(geom: &ContactGeometry, p: &RelConfig, target: &RelConfig, w: &Vec5, mut prev: Vec<Contact>) -> Vec<Contact> {
    let mut out = Vec::new();
    for section in 0..2 {
        for k in 0..2 {
            for f in [Feature::PegCorner(k), Feature::RimCorner(k)] {
                if geom.inside(target, section, f) {
                    let face = geom.entry_face(p, target, section, f);
                    if face == Face::PegBottom {
                        continue;
                    }
                    let (point, normal, side) = geom.frame_of(p, section, f, face);
                    let j = geom.jacobian(p, section, point, normal);
                    let stiff = j.component_mul(w).dot(&j);
                    out.push(Contact {
                        section,
                        point,
                        normal,
                        side,
                        force: if stiff > 0.0 { -geom.gap(target, section, f, face) / stiff } else { f64::INFINITY },
                        friction: 0.0,
                        sticking: true,
                    });
                }
            }
        }
    }
    for section in 0..2 {
        for k in 0..2 {
            for f in [Feature::PegCorner(k), Feature::RimCorner(k)] {
                if geom.inside(target, section, f) {
                    continue;
                }
                if let Some(face) = geom.touching(p, section, f, TOUCH_TOL) {
                    let (point, normal, side) = geom.frame_of(p, section, f, face);
                    out.push(Contact { section, point, normal, side, force: 0.0, friction: 0.0, sticking: true });
                }
            }
        }
    }
    if out.is_empty() {
        prev.iter_mut().for_each(|c| c.sticking = true);
        return prev;
    }
    out
}

type Substep = Option<(RelConfig, Vec<Contact>, usize)>;

fn substep(geom: &ContactGeometry, from: &RelConfig, target: &RelConfig, w: &Vec5, mu: f64) -> Result<Substep, WorldError> {
    let mut active: Vec<Active> = Vec::new();
    let mut p = target.to_vec();
    let mut it = 0;
    if !project(geom, from, &mut p, w, &mut active, &mut it)? {
        return Ok(None);
    }
    // Coulomb friction on the displacement accumulated over the substep.
    if mu > 0.0 {
        for a in active.iter_mut() {
            if a.lambda <= 0.0 {
                continue;
            }
            let cfg = RelConfig::from_vec(&p);
            let (point, normal, _) = geom.frame_of(&cfg, a.section, a.feature, a.face);
            let t = perp(normal);
            let jt = geom.jacobian(&cfg, a.section, point, t);
            let stiff = jt.component_mul(w).dot(&jt);
            if stiff <= 0.0 {
                continue;
            }
            // Tangential slip of the contact point relative to where it began.
            let slip = match a.feature {
                Feature::PegCorner(k) if !(matches!(a.face, Face::BlockTop(_)) && point == geom.rim_corner(a.section, k)) => {
                    let c0 = from.point(a.section, geom.peg_corner(a.section, k));
                    let c1 = cfg.point(a.section, geom.peg_corner(a.section, k));
                    t.dot(&(c1 - c0))
                }
                Feature::PegCorner(k) | Feature::RimCorner(k) => {
                    let rim = geom.rim_corner(a.section, k);
                    let b0 = from.to_body(a.section, rim);
                    let b1 = cfg.to_body(a.section, rim);
                    // Peg material under the rim moved opposite to the rim's body drift.
                    let d = cfg.point(a.section, b0) - cfg.point(a.section, b1);
                    t.dot(&d)
                }
            };
            let need = slip / stiff;
            let limit = mu * a.lambda;
            let (applied, sticking) = if need.abs() <= limit { (need, true) } else { (limit * need.signum(), false) };
            p -= w.component_mul(&jt) * applied;
            a.friction = applied.abs();
            a.sticking = sticking;
        }
        // Friction may have pushed features back into contact.
        if !project(geom, from, &mut p, w, &mut active, &mut it)? {
            return Ok(None);
        }
    }
    let cfg = RelConfig::from_vec(&p);
    let contacts = active
        .iter()
        .filter(|a| a.lambda > 0.0)
        .map(|a| {
            let (point, normal, side) = geom.frame_of(&cfg, a.section, a.feature, a.face);
            Contact {
                section: a.section,
                point,
                normal,
                side,
                force: a.lambda,
                friction: a.friction,
                sticking: a.sticking,
            }
        })
        .collect();
    Ok(Some((cfg, contacts, it)))
}

/// Gauss-Seidel projection of `p` out of every obstacle. Returns false when
/// a penetration cannot be cleared through the compliant coordinates.
fn project(
    geom: &ContactGeometry,
    from: &RelConfig,
    p: &mut Vec5,
    w: &Vec5,
    active: &mut Vec<Active>,
    it: &mut usize,
) -> Result<bool, WorldError> {
    let mut worst: f64 = 0.0;
    for _ in 0..MAX_ITERATIONS {
        *it += 1;
        worst = 0.0;
        for section in 0..2 {
            for k in 0..2 {
                for f in [Feature::PegCorner(k), Feature::RimCorner(k)] {
                    let mut idx = active.iter().position(|a| a.section == section && a.feature == f);
                    if let Some(i) = idx {
                        let cfg = RelConfig::from_vec(p);
                        if !geom.spans(&cfg, section, f, active[i].face) {
                            // Slid off the end of its face: drop the
                            // constraint and treat it as a fresh feature.
                            active.remove(i);
                            idx = None;
                        }
                    }
                    let cfg = RelConfig::from_vec(p);
                    let face = match idx {
                        Some(i) => active[i].face,
                        None => {
                            if !geom.inside(&cfg, section, f) {
                                continue;
                            }
                            match geom.entry_face(from, &cfg, section, f) {
                                // Through the bottom: the rim support of the
                                // matching peg corner holds it.
                                Face::PegBottom => continue,
                                face => face,
                            }
                        }
                    };
                    let g = geom.gap(&cfg, section, f, face);
                    if g >= -GAP_TOL && idx.is_none() {
                        continue;
                    }
                    let (point, normal, _) = geom.frame_of(&cfg, section, f, face);
                    let j = geom.jacobian(&cfg, section, point, normal);
                    let stiff = j.component_mul(w).dot(&j);
                    let i = match idx {
                        Some(i) => i,
                        None => {
                            active.push(Active { section, feature: f, face, lambda: 0.0, friction: 0.0, sticking: true });
                            active.len() - 1
                        }
                    };
                    if g < -GAP_TOL && stiff <= 1e-15 {
                        return Ok(false);
                    }
                    if stiff <= 1e-15 {
                        continue;
                    }
                    // Contacts only push; a separating contact releases its force.
                    let dl = (-g / stiff).max(-active[i].lambda);
                    if dl != 0.0 {
                        *p += w.component_mul(&j) * dl;
                        active[i].lambda += dl;
                    }
                    if g < 0.0 {
                        worst = worst.max(-g);
                    }
                }
            }
        }
        if worst <= GAP_TOL {
            return Ok(true);
        }
    }
    // Corner-on-corner pairs can cycle without settling; a small leftover
    // overlap is accepted.
    if worst <= ACCEPT_TOL {
        return Ok(true);
    }
    Err(WorldError::SolverFailure { iterations: MAX_ITERATIONS })
}
