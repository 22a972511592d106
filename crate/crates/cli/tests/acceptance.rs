//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use astro_float::{BigFloat, Consts, RoundingMode};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pegsim_core::control::{ControllerMode, TrialResult};
use pegsim_core::geometry::{beta0, beta_f_max, insertion_height, manipulation_frame};
use pegsim_core::hand::{generate_dataset, rollout_cosines, solve_equilibrium, DatasetOptions, FingerParams, Hand, SolverOptions, Q_MAX};
use pegsim_core::harness::{builtin_faces, load_or_fit_model, run_experiment, Disturbance, ModelSection};
use pegsim_core::posemath::{Pose, Twist};
use pegsim_core::world::CompliancePreset;
use pegsim_core::{ExperimentConfig, FaceCloud, NoiseLevel};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn config(trials: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.experiment.trials = trials;
    c
}

fn run(cfg: &ExperimentConfig) -> Vec<TrialResult> {
    run_experiment(cfg).expect("acceptance configs are valid")
}

fn successes(r: &[TrialResult]) -> usize {
    r.iter().filter(|t| t.success).count()
}

fn servo_mean(r: &[TrialResult]) -> f64 {
    r.iter().map(|t| t.servo_ticks as f64).sum::<f64>() / r.len() as f64
}

fn pct(r: &[TrialResult]) -> f64 {
    100.0 * successes(r) as f64 / r.len() as f64
}

fn a1() -> (Verdict, Vec<TrialResult>) {
    let t0 = Instant::now();
    let r = run(&config(50));
    let secs = t0.elapsed().as_secs_f64();
    let ok = successes(&r) >= 45 && secs < 60.0;
    (verdict(ok, format!("{}/50 inserted in {secs:.1} s", successes(&r))), r)
}

fn a2(baseline: &[TrialResult]) -> Verdict {
    let mut runs = vec![baseline.to_vec()];
    for n in [NoiseLevel::N5, NoiseLevel::N10] {
        let mut c = config(50);
        c.experiment.noise = n;
        runs.push(run(&c));
    }
    let s: Vec<usize> = runs.iter().map(|r| successes(r)).collect();
    let m: Vec<f64> = runs.iter().map(|r| servo_mean(r)).collect();
    let ok = s[0] >= s[1] && s[1] >= s[2] && s[2] as f64 <= 0.25 * 50.0 && m[0] < m[1] && m[1] < m[2];
    verdict(ok, format!("success {:?}/50, servo ticks {:.0} < {:.0} < {:.0}", s, m[0], m[1], m[2]))
}

fn a3(baseline: &[TrialResult]) -> Verdict {
    let mut c = config(50);
    c.experiment.mode = ControllerMode::OpenLoop;
    let open = run(&c);
    c.experiment.mode = ControllerMode::Naive;
    let naive = run(&c);
    let ok = successes(&open) == 0 && pct(baseline) - pct(&naive) >= 30.0;
    verdict(
        ok,
        format!("open_loop {}/50, naive {}/50, full {}/50", successes(&open), successes(&naive), successes(baseline)),
    )
}

fn a4() -> Verdict {
    let mut rates = Vec::new();
    for p in CompliancePreset::ALL {
        let mut c = config(50);
        c.experiment.compliance = p;
        c.world.grasp_tilt_deg = 1.5;
        rates.push((p, successes(&run(&c))));
    }
    let rigid = rates.iter().find(|(p, _)| *p == CompliancePreset::AllRigid).unwrap().1;
    let ok = rates.iter().filter(|(p, _)| *p != CompliancePreset::AllRigid).all(|(_, s)| *s > rigid);
    let detail = rates.iter().map(|(p, s)| format!("{} {s}/50", p.name())).collect::<Vec<_>>().join(", ");
    verdict(ok, detail)
}

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("BigFloat renders as a decimal")
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn a5() -> Verdict {
    let mut cc = Consts::new().expect("constant cache");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let d_o = rng.gen_range(1.0..100.0);
        let h = rng.gen_range(5.0..150.0);
        let d_h = d_o + rng.gen_range(0.1..10.0);
        let b0 = beta0(d_o, h).unwrap();
        let want = big(d_o).div(&big(2.0 * h), PREC, RM).atan(PREC, RM, &mut cc);
        worst = worst.max(rel(b0, to_f64(&want)));
        let bf = beta_f_max(d_o, d_h).unwrap();
        let want = big(d_o).div(&big(d_h), PREC, RM).acos(PREC, RM, &mut cc);
        worst = worst.max(rel(bf, to_f64(&want)));
        let bf = 0.8 * bf;
        let (x0, xf) = (big(b0), big(bf));
        let cos_sum = x0.cos(PREC, RM, &mut cc).add(&xf.cos(PREC, RM, &mut cc), PREC, RM);
        let sin_sum = x0.sin(PREC, RM, &mut cc).add(&xf.sin(PREC, RM, &mut cc), PREC, RM);
        let want = big(h)
            .mul(&cos_sum, PREC, RM)
            .add(&big(0.5 * d_o).mul(&sin_sum, PREC, RM), PREC, RM);
        worst = worst.max(rel(insertion_height(h, d_o, b0, bf), to_f64(&want)));
    }
    // Brute-force d_o: largest pairwise difference of projections on pi1.
    let mut exact = true;
    let mut faces: Vec<FaceCloud> = builtin_faces().into_iter().map(|(_, f)| f).collect();
    for _ in 0..20 {
        let n = rng.gen_range(3..60);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(-30.0..30.0), rng.gen_range(-10.0..10.0))).collect();
        if let Ok(f) = FaceCloud::from_xy(&pts) {
            faces.push(f);
        }
    }
    for f in &faces {
        let mf = manipulation_frame(f).unwrap();
        let s: Vec<f64> = f.points().iter().map(|p| mf.pi1.dot(p)).collect();
        let mut best = f64::NEG_INFINITY;
        for a in &s {
            for b in &s {
                best = best.max(a - b);
            }
        }
        exact &= best == mf.d_o;
    }
    let ok = worst <= 1e-12 && exact;
    verdict(ok, format!("worst relative error {worst:.2e}; d_o exact on {} faces: {exact}", faces.len()))
}

fn a6() -> Verdict {
    let mut c = config(25);
    c.disturbances = vec![Disturbance {
        tick: 10,
        kind: "move_hole".into(),
        magnitude: [30.0, 0.0, 0.0],
        phase: Some("translate".into()),
    }];
    let r = run(&c);
    verdict(successes(&r) >= 20, format!("{}/25 inserted after a 30 mm hole move", successes(&r)))
}

fn a7() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut kkt: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let f = FingerParams {
            k_p: rng.gen_range(0.2..5.0),
            k_d: rng.gen_range(0.2..5.0),
            r_a: rng.gen_range(2.0..8.0),
            r_p: rng.gen_range(2.0..8.0),
            r_d: rng.gen_range(2.0..8.0),
            ..FingerParams::default()
        };
        let a = rng.gen_range(0.0..1.5);
        // Stationarity of the spring energy under the tendon constraint.
        let lam = f.r_a * a / (f.r_p * f.r_p / f.k_p + f.r_d * f.r_d / f.k_d);
        let want = [lam * f.r_p / f.k_p, lam * f.r_d / f.k_d];
        if want.iter().any(|&q| q > Q_MAX) {
            continue;
        }
        let eq = solve_equilibrium(&[f], &[[0.0, 0.0]], &[a], None, &SolverOptions::default()).unwrap();
        kkt = kkt.max((eq.q[0][0] - want[0]).abs()).max((eq.q[0][1] - want[1]).abs());
        n += 1;
    }
    let hand = Hand::default();
    let m = ModelSection::default();
    let opts = DatasetOptions { n_triangles: m.triangles, n_transitions: m.transitions, seed: m.seed, ..DatasetOptions::default() };
    let data = generate_dataset(&hand, &opts).unwrap();
    let drift = data.iter().map(|r| r.triangle_drift).fold(0.0, f64::max);
    let model = load_or_fit_model(&hand, &m).unwrap();
    let held_out = DatasetOptions { seed: opts.seed + 1_000, ..opts };
    let mut cos = rollout_cosines(&hand, &model, &held_out, 400);
    cos.sort_by(f64::total_cmp);
    let median = cos[cos.len() / 2];
    let secs = t0.elapsed().as_secs_f64();
    let ok = kkt <= 1e-6 && drift <= 1e-3 && median >= 0.8 && secs < 600.0;
    verdict(
        ok,
        format!(
            "KKT error {kkt:.1e}, max drift {drift:.1e} mm over {} records, median cosine {median:.3}, {secs:.0} s",
            data.len()
        ),
    )
}

fn twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist {
    let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let omega = dir.normalize() * rng.gen_range(0.0..max_angle);
    let v = Vector3::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
    Twist::new(omega, v)
}

fn a8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut roundtrip: f64 = 0.0;
    for _ in 0..100_000 {
        let xi = twist(&mut rng, 3.0);
        let back = Pose::exp(&xi).log().unwrap();
        roundtrip = roundtrip.max(back.max_abs_diff(&xi));
    }
    let mut assoc: f64 = 0.0;
    for _ in 0..10_000 {
        let [a, b, c] = [0; 3].map(|_| Pose::exp(&twist(&mut rng, 3.1)));
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        assoc = assoc.max(left.max_abs_diff(&right));
    }
    verdict(roundtrip <= 1e-9 && assoc <= 1e-9, format!("exp/log roundtrip {roundtrip:.1e}, associativity {assoc:.1e}"))
}

fn a9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("det.toml");
    std::fs::write(&cfg, "[experiment]\nname = \"det\"\ntrials = 6\nseed = 42\n").unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_pegsim"))
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return verdict(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(std::fs::read(out.join("summary.csv")).unwrap());
    }
    verdict(outputs[0] == outputs[1], format!("two runs, {} bytes each", outputs[0].len()))
}

fn main() -> ExitCode {
    let (v1, baseline) = a1();
    let checks: Vec<(&str, &str, Box<dyn FnOnce() -> Verdict>)> = vec![
        ("A2", "noise trend", Box::new(|| a2(&baseline))),
        ("A3", "control ablation", Box::new(|| a3(&baseline))),
        ("A4", "compliance ablation", Box::new(a4)),
        ("A5", "formula oracles", Box::new(a5)),
        ("A6", "disturbance recovery", Box::new(a6)),
        ("A7", "hand model", Box::new(a7)),
        ("A8", "Lie math", Box::new(a8)),
        ("A9", "determinism", Box::new(a9)),
    ];
    let mut failed = 0;
    let mut report = |id: &str, name: &str, v: Verdict| {
        println!("{id} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    report("A1", "closed-loop baseline", v1);
    for (id, name, check) in checks {
        report(id, name, check());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
