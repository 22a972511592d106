use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

use super::{HandError, TransitionRecord};

/// Actuator speeds are clamped to this magnitude.
pub const ACTUATOR_SPEED_LIMIT: f64 = 0.5;

const FORMAT_TAG: &str = "pegsim-inverse-hand-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// MLP from the in-plane object angular rate (x, y) to actuator speeds.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseHandModel {
    pub layers: Vec<Layer>,
    pub input_scale: [f64; 2],
    pub seed: u64,
    pub dataset_hash: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Training loss after each epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 60,
            batch: 128,
            learning_rate: 1e-3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

struct Grads {
    w: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl InverseHandModel {
    fn init(hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let dims = [2, hidden, hidden, 3];
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(d[1], d[0], |_, _| rng.gen_range(-bound..bound)),
                    b: DVector::zeros(d[1]),
                }
            })
            .collect();
        Self {
            layers,
            input_scale: [1.0, 1.0],
            seed: 0,
            dataset_hash: 0,
            train_loss: f64::NAN,
            val_loss: f64::NAN,
            loss_curve: Vec::new(),
        }
    }

    fn normalize(&self, xdot: &[f64; 2]) -> [f64; 2] {
        [xdot[0] / self.input_scale[0], xdot[1] / self.input_scale[1]]
    }

    /// Raw network output in normalized units, one column per sample.
    fn forward(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * acts.last().unwrap();
            for mut c in z.column_iter_mut() {
                c += &l.b;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
                acts.push(z);
            } else {
                return (acts, z);
            }
        }
        unreachable!("model has no layers")
    }

    /// Mean squared error and its gradient over a batch.
    fn loss_and_grads(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, Grads) {
        let (acts, y) = self.forward(x);
        let n = (t.len()) as f64;
        let diff = &y - t;
        let loss = diff.norm_squared() / n;
        let mut delta = diff * (2.0 / n);
        let mut gw = Vec::with_capacity(self.layers.len());
        let mut gb = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a = &acts[i];
            gw.push(&delta * a.transpose());
            gb.push(delta.column_sum());
            if i > 0 {
                let mut back = self.layers[i].w.transpose() * &delta;
                back.zip_apply(a, |d, h| *d *= 1.0 - h * h);
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, Grads { w: gw, b: gb })
    }

    /// Actuator speeds for a desired in-plane angular rate, clamped.
    pub fn predict(&self, xdot_xy: &[f64; 2]) -> [f64; 3] {
        let n = self.normalize(xdot_xy);
        let (_, y) = self.forward(&DMatrix::from_column_slice(2, 1, &n));
        [0, 1, 2].map(|k| (y[k] * ACTUATOR_SPEED_LIMIT).clamp(-ACTUATOR_SPEED_LIMIT, ACTUATOR_SPEED_LIMIT))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_TAG} v{FORMAT_VERSION}");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "dataset_hash {}", self.dataset_hash);
        let _ = writeln!(s, "train_loss {}", self.train_loss);
        let _ = writeln!(s, "val_loss {}", self.val_loss);
        let _ = writeln!(s, "input_scale {} {}", self.input_scale[0], self.input_scale[1]);
        let _ = writeln!(s, "output_scale {ACTUATOR_SPEED_LIMIT}");
        let _ = write!(s, "loss_curve {}", self.loss_curve.len());
        for v in &self.loss_curve {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
        let _ = writeln!(s, "layers {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(s, "layer {} {}", l.w.nrows(), l.w.ncols());
            for r in 0..l.w.nrows() {
                let row: Vec<String> = l.w.row(r).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{} {}", row.join(" "), l.b[r]);
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, HandError> {
        let bad = |m: &str| HandError::Format(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| bad("empty model file"))?;
        let expected = format!("{FORMAT_TAG} v{FORMAT_VERSION}");
        if head.trim() != expected {
            return Err(bad(&format!("unsupported model header {head:?}")));
        }
        fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<String>, HandError> {
            let line = lines.next().ok_or_else(|| HandError::Format(format!("missing {key}")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(HandError::Format(format!("expected {key}, got {line:?}")));
            }
            Ok(it.map(str::to_string).collect())
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T, HandError> {
            s.parse().map_err(|_| HandError::Format(format!("bad number {s:?}")))
        }
        fn one<T: std::str::FromStr>(v: &[String]) -> Result<T, HandError> {
            match v {
                [x] => num(x),
                _ => Err(HandError::Format("expected one value".into())),
            }
        }
        let seed = one(&field(&mut lines, "seed")?)?;
        let dataset_hash = one(&field(&mut lines, "dataset_hash")?)?;
        let train_loss = one(&field(&mut lines, "train_loss")?)?;
        let val_loss = one(&field(&mut lines, "val_loss")?)?;
        let sc = field(&mut lines, "input_scale")?;
        if sc.len() != 2 {
            return Err(bad("input_scale needs two values"));
        }
        let input_scale = [num(&sc[0])?, num(&sc[1])?];
        let out: f64 = one(&field(&mut lines, "output_scale")?)?;
        if out != ACTUATOR_SPEED_LIMIT {
            return Err(bad("output scale does not match the actuator limit"));
        }
        let lc = field(&mut lines, "loss_curve")?;
        let n: usize = num(lc.first().ok_or_else(|| bad("empty loss_curve"))?)?;
        let loss_curve = lc[1..].iter().map(|v| num(v)).collect::<Result<Vec<f64>, _>>()?;
        if loss_curve.len() != n {
            return Err(bad("loss_curve length mismatch"));
        }
        let n_layers: usize = one(&field(&mut lines, "layers")?)?;
        let mut layers = Vec::with_capacity(n_layers);
        let mut prev_out = 2;
        for _ in 0..n_layers {
            let d = field(&mut lines, "layer")?;
            if d.len() != 2 {
                return Err(bad("layer needs two dimensions"));
            }
            let (rows, cols): (usize, usize) = (num(&d[0])?, num(&d[1])?);
            if cols != prev_out {
                return Err(bad("layer dimensions do not chain"));
            }
            let mut w = DMatrix::zeros(rows, cols);
            let mut b = DVector::zeros(rows);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| bad("truncated layer"))?;
                let v = line.split_whitespace().map(num).collect::<Result<Vec<f64>, _>>()?;
                if v.len() != cols + 1 {
                    return Err(bad("layer row has the wrong width"));
                }
                for c in 0..cols {
                    w[(r, c)] = v[c];
                }
                b[r] = v[cols];
            }
            layers.push(Layer { w, b });
            prev_out = rows;
        }
        if prev_out != 3 || layers.is_empty() {
            return Err(bad("model must end in three outputs"));
        }
        Ok(Self {
            layers,
            input_scale,
            seed,
            dataset_hash,
            train_loss,
            val_loss,
            loss_curve,
        })
    }
}

struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &InverseHandModel) -> Self {
        let zw = || model.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect();
        let zb = || model.layers.iter().map(|l| DVector::zeros(l.b.len())).collect();
        Self { m_w: zw(), v_w: zw(), m_b: zb(), v_b: zb(), t: 0 }
    }

    fn step(&mut self, model: &mut InverseHandModel, g: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let upd = |p: &mut [f64], gr: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * gr[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * gr[i] * gr[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        };
        for (k, l) in model.layers.iter_mut().enumerate() {
            upd(l.w.as_mut_slice(), g.w[k].as_slice(), self.m_w[k].as_mut_slice(), self.v_w[k].as_mut_slice());
            upd(l.b.as_mut_slice(), g.b[k].as_slice(), self.m_b[k].as_mut_slice(), self.v_b[k].as_mut_slice());
        }
    }
}

fn batch(model: &InverseHandModel, data: &[&TransitionRecord]) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = DMatrix::from_fn(2, data.len(), |r, c| model.normalize(&data[c].xdot_xy())[r]);
    let t = DMatrix::from_fn(3, data.len(), |r, c| data[c].a_dot[r] / ACTUATOR_SPEED_LIMIT);
    (x, t)
}

fn mean_loss(model: &InverseHandModel, data: &[&TransitionRecord]) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for chunk in data.chunks(4096) {
        let (x, t) = batch(model, chunk);
        let (_, y) = model.forward(&x);
        total += (y - t).norm_squared();
    }
    total / (3 * data.len()) as f64
}

/// Mini-batch Adam on the MSE between predicted and applied actuator speeds.
/// The last `val_fraction` of records is held out.
pub fn fit_inverse_model(records: &[TransitionRecord], opts: &FitOptions) -> Result<InverseHandModel, HandError> {
    if opts.hidden == 0 || opts.batch == 0 || !(0.0..1.0).contains(&opts.val_fraction) || !(opts.learning_rate > 0.0) {
        return Err(HandError::InvalidParams("bad training options"));
    }
    let n_val = (records.len() as f64 * opts.val_fraction).round() as usize;
    let n_train = records.len() - n_val;
    if n_train < 2 {
        return Err(HandError::InvalidParams("not enough training records"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = InverseHandModel::init(opts.hidden, &mut rng);
    model.seed = opts.seed;
    model.dataset_hash = super::dataset_hash(records);

    let train: Vec<&TransitionRecord> = records[..n_train].iter().collect();
    let val: Vec<&TransitionRecord> = records[n_train..].iter().collect();
    for k in 0..2 {
        let var = train.iter().map(|r| r.xdot_xy()[k].powi(2)).sum::<f64>() / n_train as f64;
        model.input_scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(opts.batch) {
            let b: Vec<&TransitionRecord> = idx.iter().map(|&i| train[i]).collect();
            let (x, t) = batch(&model, &b);
            let (loss, g) = model.loss_and_grads(&x, &t);
            if !loss.is_finite() || loss > 1e6 {
                return Err(HandError::DivergedTraining(loss));
            }
            adam.step(&mut model, &g, opts.learning_rate);
        }
        let loss = mean_loss(&model, &train);
        if !loss.is_finite() || loss > 1e6 {
            return Err(HandError::DivergedTraining(loss));
        }
        log::debug!("epoch {epoch}: train loss {loss:.5}");
        model.loss_curve.push(loss);
    }
    model.train_loss = mean_loss(&model, &train);
    model.val_loss = mean_loss(&model, &val);
    Ok(model)
}

/// Forward-rollout check of the inverse model on fresh grasps: at random
/// reachable states, a random actuation defines a requested in-plane rate;
/// the model's actuation for that request is rolled out and the cosine
/// between requested and realized rates is returned per probe.
pub fn rollout_cosines(hand: &super::Hand, model: &InverseHandModel, opts: &super::DatasetOptions, probes: usize) -> Vec<f64> {
    use nalgebra::{Vector2, Vector3};
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(u64::MAX);
    let mut out = Vec::with_capacity(probes);
    let mut attempts = 0;
    while out.len() < probes && attempts < 20 * probes {
        attempts += 1;
        let d = rng.gen_range(opts.width.0..=opts.width.1);
        let w = rng.gen_range(opts.split.0..=opts.split.1);
        let e = rng.gen_range(opts.offset.0..=opts.offset.1);
        let c = [Vector3::new(d / 2.0, e, 0.0), Vector3::new(-d / 2.0, -w, 0.0), Vector3::new(-d / 2.0, w, 0.0)];
        let Ok(plan) = hand.plan_grasp(&c) else { continue };
        let mut s = plan.state;
        for _ in 0..rng.gen_range(0..opts.episode_len / 2) {
            let ad = [0; 3].map(|_| rng.gen_range(-ACTUATOR_SPEED_LIMIT..=ACTUATOR_SPEED_LIMIT));
            if let Ok((n, _)) = hand.step(&s, &ad, opts.dt) {
                s = n;
            }
        }
        let ad = [0; 3].map(|_| rng.gen_range(-ACTUATOR_SPEED_LIMIT..=ACTUATOR_SPEED_LIMIT));
        let Ok((_, want)) = hand.step(&s, &ad, opts.dt) else { continue };
        let req = [want.omega.x, want.omega.y];
        let Ok((_, got)) = hand.step(&s, &model.predict(&req), opts.dt) else { continue };
        let r = Vector2::from(req);
        let g = got.omega.xy();
        if r.norm() < 1e-9 {
            continue;
        }
        out.push(r.dot(&g) / (r.norm() * g.norm()).max(1e-12));
    }
    out
}
