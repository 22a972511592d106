use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use super::{contact_triangle, ContactTriangle, Hand, HandError, HandState, ACTUATOR_SPEED_LIMIT};
use crate::posemath::{Pose, Twist};

pub const DATASET_HEADER: &str = "Xdot_x Xdot_y adot_0 adot_1 adot_2 t12 t23 t31";

/// One sampled hand transition.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub x_t: Pose,
    pub a_dot: [f64; 3],
    pub x_dot: Twist,
    pub triangle: ContactTriangle,
    /// Largest change of a triangle side over the step (mm).
    pub triangle_drift: f64,
    /// Index of the grasp the record came from.
    pub grasp: usize,
}

impl TransitionRecord {
    pub fn xdot_xy(&self) -> [f64; 2] {
        [self.x_dot.omega.x, self.x_dot.omega.y]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    pub n_triangles: usize,
    pub n_transitions: usize,
    pub seed: u64,
    /// Steps before the hand returns to its grasp pose.
    pub episode_len: usize,
    pub dt: f64,
    /// Sampled object widths along the grasp axis (mm).
    pub width: (f64, f64),
    /// Half spacing of the paired contacts (mm).
    pub split: (f64, f64),
    /// Sideways offset of the single contact (mm).
    pub offset: (f64, f64),
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            n_triangles: 12,
            n_transitions: 20_000,
            seed: 0,
            episode_len: 60,
            dt: 1.0 / 30.0,
            width: (16.0, 40.0),
            split: (4.0, 9.0),
            offset: (-2.0, 2.0),
        }
    }
}

impl DatasetOptions {
    /// The large-scale setting: 200k transitions over 50 grasps.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            n_triangles: 50,
            n_transitions: 200_000,
            seed,
            ..Self::default()
        }
    }
}

struct GraspOutcome {
    records: Vec<TransitionRecord>,
    attempted: usize,
    infeasible: usize,
}

fn sample_grasp(hand: &Hand, rng: &mut ChaCha8Rng, opts: &DatasetOptions) -> (Result<HandState, HandError>, [f64; 3]) {
    let d = rng.gen_range(opts.width.0..=opts.width.1);
    let w = rng.gen_range(opts.split.0..=opts.split.1);
    let e = rng.gen_range(opts.offset.0..=opts.offset.1);
    let s = d / 2.0;
    let c = [Vector3::new(s, e, 0.0), Vector3::new(-s, -w, 0.0), Vector3::new(-s, w, 0.0)];
    (hand.plan_grasp(&c).map(|p| p.state), [d, w, e])
}

fn run_grasp(hand: &Hand, k: usize, quota: usize, opts: &DatasetOptions) -> GraspOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(k as u64 + 1);
    let mut out = GraspOutcome {
        records: Vec::with_capacity(quota),
        attempted: 0,
        infeasible: 0,
    };
    if quota == 0 {
        return out;
    }
    let start = loop {
        out.attempted += 1;
        match sample_grasp(hand, &mut rng, opts) {
            (Ok(s), _) => break s,
            (Err(err), dims) => {
                out.infeasible += 1;
                log::debug!("grasp {k}: skipping infeasible sample {dims:?}: {err}");
                if out.attempted > 1000 {
                    return out;
                }
            }
        }
    };
    let mut state = start.clone();
    let mut age = 0;
    while out.records.len() < quota {
        if age >= opts.episode_len {
            state = start.clone();
            age = 0;
        }
        let a_dot = [0; 3].map(|_| rng.gen_range(-ACTUATOR_SPEED_LIMIT..=ACTUATOR_SPEED_LIMIT));
        out.attempted += 1;
        match hand.step(&state, &a_dot, opts.dt) {
            Ok((next, x_dot)) => {
                let drift = contact_triangle(&next.contacts)
                    .map(|t| t.max_abs_diff(&state.triangle))
                    .unwrap_or(f64::INFINITY);
                out.records.push(TransitionRecord {
                    x_t: state.frame,
                    a_dot,
                    x_dot,
                    triangle: state.triangle,
                    triangle_drift: drift,
                    grasp: k,
                });
                state = next;
                age += 1;
            }
            Err(err) => {
                out.infeasible += 1;
                log::debug!("grasp {k}: step rejected: {err}");
                state = start.clone();
                age = 0;
            }
        }
    }
    out
}

/// Random actuator transitions over `n_triangles` sampled grasps.
pub fn generate_dataset(hand: &Hand, opts: &DatasetOptions) -> Result<Vec<TransitionRecord>, HandError> {
    if opts.n_triangles == 0 {
        return Err(HandError::InvalidParams("need at least one triangle"));
    }
    let base = opts.n_transitions / opts.n_triangles;
    let extra = opts.n_transitions % opts.n_triangles;
    let outcomes: Vec<GraspOutcome> = (0..opts.n_triangles)
        .into_par_iter()
        .map(|k| run_grasp(hand, k, base + usize::from(k < extra), opts))
        .collect();
    let attempted: usize = outcomes.iter().map(|o| o.attempted).sum();
    let infeasible: usize = outcomes.iter().map(|o| o.infeasible).sum();
    if infeasible > 0 {
        log::info!("dataset: skipped {infeasible} infeasible samples of {attempted}");
    }
    if 2 * infeasible > attempted {
        return Err(HandError::TooManyInfeasible { infeasible, attempted });
    }
    let records: Vec<TransitionRecord> = outcomes.into_iter().flat_map(|o| o.records).collect();
    if records.len() < opts.n_transitions {
        return Err(HandError::TooManyInfeasible { infeasible, attempted });
    }
    Ok(records)
}

pub fn dataset_hash(records: &[TransitionRecord]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for r in records {
        for v in r.xdot_xy().iter().chain(&r.a_dot).chain(&r.triangle.as_array()) {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

pub fn write_dataset(records: &[TransitionRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 128);
    s.push_str(DATASET_HEADER);
    s.push('\n');
    for r in records {
        let x = r.xdot_xy();
        let t = r.triangle.as_array();
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            x[0], x[1], r.a_dot[0], r.a_dot[1], r.a_dot[2], t[0], t[1], t[2]
        );
    }
    s
}

/// Parses the dataset text format. Only the columns in the header are
/// restored; poses and drift are not part of the file.
pub fn read_dataset(text: &str) -> Result<Vec<TransitionRecord>, HandError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.split_whitespace().eq(DATASET_HEADER.split_whitespace()) => {}
        other => return Err(HandError::Format(format!("bad dataset header {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| HandError::Format(format!("row {}: {e}", i + 1)))?;
        if v.len() != 8 {
            return Err(HandError::Format(format!("row {}: expected 8 columns", i + 1)));
        }
        out.push(TransitionRecord {
            x_t: Pose::identity(),
            a_dot: [v[2], v[3], v[4]],
            x_dot: Twist::new(Vector3::new(v[0], v[1], 0.0), Vector3::zeros()),
            triangle: ContactTriangle { t12: v[5], t23: v[6], t31: v[7] },
            triangle_drift: 0.0,
            grasp: 0,
        });
    }
    Ok(out)
}
