use std::fmt;

use super::WorldError;
use crate::posemath::Pose;

/// One control tick of a trial: "t state_tag peg_pose hole_pose depth jammed".
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub tag: String,
    pub peg_pose: Pose,
    pub hole_pose: Pose,
    pub depth: f64,
    pub jammed: bool,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.t,
            self.tag,
            self.peg_pose.to_line(),
            self.hole_pose.to_line(),
            self.depth,
            u8::from(self.jammed)
        )
    }
}

impl TraceRecord {
    pub fn parse(line: &str) -> Result<Self, WorldError> {
        let bad = |m: &str| WorldError::InvalidConfig(format!("trace line {line:?}: {m}"));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 18 {
            return Err(bad("expected 18 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let pose = |fs: &[&str]| Pose::parse_line(&fs.join(" ")).map_err(|e| bad(&e.to_string()));
        Ok(Self {
            t: num(f[0])?,
            tag: f[1].to_string(),
            peg_pose: pose(&f[2..9])?,
            hole_pose: pose(&f[9..16])?,
            depth: num(f[16])?,
            jammed: match f[17] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("jammed must be 0 or 1")),
            },
        })
    }
}

/// Replay digest of a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSummary {
    pub ticks: usize,
    pub duration: f64,
    /// (tag, ticks) in order of first appearance.
    pub phases: Vec<(String, usize)>,
    pub max_depth: f64,
    pub final_depth: f64,
    pub jammed_ticks: usize,
    /// Final tilt of the peg axis from the hole axis (deg).
    pub final_tilt_deg: f64,
    /// Final lateral offset of the peg from the hole axis (mm).
    pub final_offset: f64,
}

pub fn parse_trace(text: &str) -> Result<(Vec<TraceRecord>, TraceSummary), WorldError> {
    let mut recs = Vec::new();
    for line in text.lines() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let r = TraceRecord::parse(l)?;
        if let Some(prev) = recs.last() {
            let p: &TraceRecord = prev;
            if r.t < p.t {
                return Err(WorldError::InvalidConfig(format!("trace time goes backwards at t={}", r.t)));
            }
        }
        recs.push(r);
    }
    let last = recs.last().ok_or_else(|| WorldError::InvalidConfig("empty trace".into()))?;
    let mut phases: Vec<(String, usize)> = Vec::new();
    for r in &recs {
        match phases.iter_mut().find(|(t, _)| *t == r.tag) {
            Some(p) => p.1 += 1,
            None => phases.push((r.tag.clone(), 1)),
        }
    }
    let rel = last.hole_pose.inverse().compose(&last.peg_pose);
    let axis = rel.rotation * nalgebra::Vector3::z();
    let summary = TraceSummary {
        ticks: recs.len(),
        duration: last.t - recs[0].t,
        phases,
        max_depth: recs.iter().map(|r| r.depth).fold(0.0, f64::max),
        final_depth: last.depth,
        jammed_ticks: recs.iter().filter(|r| r.jammed).count(),
        final_tilt_deg: axis.z.clamp(-1.0, 1.0).acos().to_degrees(),
        final_offset: rel.translation.xy().norm(),
    };
    Ok((recs, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn line_roundtrip_and_summary() {
        let a = TraceRecord {
            t: 0.0,
            tag: "grasp".into(),
            peg_pose: Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)),
            hole_pose: Pose::identity(),
            depth: 0.0,
            jammed: false,
        };
        let b = TraceRecord { t: 1.0 / 30.0, tag: "spiral".into(), depth: 19.5, jammed: true, ..a.clone() };
        let text = format!("# hole_depth 20\n{a}\n{b}\n");
        let (recs, s) = parse_trace(&text).unwrap();
        assert_eq!(recs, vec![a, b]);
        assert_eq!(s.ticks, 2);
        assert_eq!(s.phases, vec![("grasp".to_string(), 1), ("spiral".to_string(), 1)]);
        assert_eq!(s.jammed_ticks, 1);
        assert_eq!(s.max_depth, 19.5);
        assert!(parse_trace("").is_err());
        assert!(parse_trace("0 x 1 2 3").is_err());
    }
}
