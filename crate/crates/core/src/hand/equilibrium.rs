//! Energy equilibrium of the hand under tendon and contact-triangle
//! constraints, by an augmented Lagrangian with projected Gauss-Newton inner
//! steps.

use nalgebra::{DMatrix, DVector};

use super::finger::{FingerParams, Q_MAX, Q_MIN};
use super::{ContactTriangle, HandError};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Accepted constraint violation (mm).
    pub constraint_tol: f64,
    /// Accepted projected gradient of the Lagrangian.
    pub gradient_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            constraint_tol: 1e-3,
            gradient_tol: 1e-6,
            max_outer: 500,
            max_inner: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium {
    pub q: Vec<[f64; 2]>,
    pub energy: f64,
    pub max_violation: f64,
    pub projected_gradient: f64,
    pub outer_iterations: usize,
    pub multipliers: Vec<f64>,
}

/// Violation the solver keeps iterating towards once the accepted tolerance
/// is met, so downstream differences are not dominated by solver noise.
const TIGHT_VIOLATION: f64 = 1e-10;
const RHO_INIT: f64 = 10.0;
const RHO_MAX: f64 = 1e12;

struct Problem<'a> {
    fingers: &'a [FingerParams],
    a: &'a [f64],
    triangle: Option<[f64; 3]>,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

impl Problem<'_> {
    fn n(&self) -> usize {
        2 * self.fingers.len()
    }

    fn m(&self) -> usize {
        self.fingers.len() + if self.triangle.is_some() { 3 } else { 0 }
    }

    fn q(x: &DVector<f64>, i: usize) -> [f64; 2] {
        [x[2 * i], x[2 * i + 1]]
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        self.fingers.iter().enumerate().map(|(i, f)| f.energy(&Self::q(x, i))).sum()
    }

    fn energy_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n());
        for (i, f) in self.fingers.iter().enumerate() {
            let gi = f.energy_gradient(&Self::q(x, i));
            g[2 * i] = gi[0];
            g[2 * i + 1] = gi[1];
        }
        g
    }

    fn stiffness(&self) -> DVector<f64> {
        let mut k = DVector::zeros(self.n());
        for (i, f) in self.fingers.iter().enumerate() {
            k[2 * i] = f.k_p;
            k[2 * i + 1] = f.k_d;
        }
        k
    }

    fn constraints(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (n, m) = (self.n(), self.m());
        let mut c = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, n);
        for (i, f) in self.fingers.iter().enumerate() {
            let q = Self::q(x, i);
            c[i] = f.r_p * q[0] + f.r_d * q[1] - f.r_a * self.a[i];
            j[(i, 2 * i)] = f.r_p;
            j[(i, 2 * i + 1)] = f.r_d;
        }
        if let Some(t) = self.triangle {
            let tips: Vec<_> = (0..3).map(|i| self.fingers[i].tip(&Self::q(x, i))).collect();
            let jacs: Vec<_> = (0..3).map(|i| self.fingers[i].jacobian(&Self::q(x, i))).collect();
            let base = self.fingers.len();
            for (row, &(i, k)) in PAIRS.iter().enumerate() {
                let d = tips[i] - tips[k];
                let len = d.norm();
                c[base + row] = len - t[row];
                if len > 1e-12 {
                    let u = d / len;
                    let gi = jacs[i].transpose() * u;
                    let gk = jacs[k].transpose() * u;
                    j[(base + row, 2 * i)] += gi[0];
                    j[(base + row, 2 * i + 1)] += gi[1];
                    j[(base + row, 2 * k)] -= gk[0];
                    j[(base + row, 2 * k + 1)] -= gk[1];
                }
            }
        }
        (c, j)
    }

    fn merit(&self, x: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> f64 {
        let (c, _) = self.constraints(x);
        self.energy(x) + lambda.dot(&c) + 0.5 * rho * c.norm_squared()
    }
}

fn project(x: &mut DVector<f64>) {
    x.iter_mut().for_each(|v| *v = v.clamp(Q_MIN, Q_MAX));
}

/// Gradient with components that push against an active bound removed.
fn projected(x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let at_lo = x[i] <= Q_MIN + 1e-12 && g[i] > 0.0;
        let at_hi = x[i] >= Q_MAX - 1e-12 && g[i] < 0.0;
        if at_lo || at_hi {
            0.0
        } else {
            g[i]
        }
    })
}

fn inner_solve(p: &Problem, x: &mut DVector<f64>, lambda: &DVector<f64>, rho: f64, opts: &SolverOptions) {
    let k = p.stiffness();
    let tol = 0.1 * opts.gradient_tol;
    for _ in 0..opts.max_inner {
        let (c, j) = p.constraints(x);
        let g = p.energy_grad(x) + j.transpose() * (lambda + &c * rho);
        let pg = projected(x, &g);
        if pg.amax() <= tol {
            return;
        }
        let free: Vec<usize> = (0..x.len()).filter(|&i| pg[i] != 0.0 || (x[i] > Q_MIN && x[i] < Q_MAX)).collect();
        let h = DMatrix::from_diagonal(&k) + j.transpose() * &j * rho;
        let hf = DMatrix::from_fn(free.len(), free.len(), |r, s| h[(free[r], free[s])]);
        let gf = DVector::from_fn(free.len(), |r, _| g[free[r]]);
        let step = match hf.clone().cholesky() {
            Some(ch) => ch.solve(&(-&gf)),
            None => -gf.clone(),
        };
        let mut d = DVector::zeros(x.len());
        for (r, &i) in free.iter().enumerate() {
            d[i] = step[r];
        }
        let f0 = p.merit(x, lambda, rho);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = &*x + &d * alpha;
            project(&mut trial);
            let moved = &trial - &*x;
            let f1 = p.merit(&trial, lambda, rho);
            if f1 <= f0 + 1e-4 * g.dot(&moved) || moved.amax() < 1e-15 {
                *x = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

/// Solves for joint angles at actuator positions `a`, starting from `q0`.
/// With `triangle` set, the three fingertips keep those pairwise distances.
pub fn solve(
    fingers: &[FingerParams],
    q0: &[[f64; 2]],
    a: &[f64],
    triangle: Option<&ContactTriangle>,
    opts: &SolverOptions,
) -> Result<Equilibrium, HandError> {
    if fingers.len() != q0.len() || fingers.len() != a.len() {
        return Err(HandError::InvalidParams("fingers, q0 and a must have equal length"));
    }
    if triangle.is_some() && fingers.len() != 3 {
        return Err(HandError::InvalidParams("triangle constraint needs three fingers"));
    }
    let p = Problem {
        fingers,
        a,
        triangle: triangle.map(|t| [t.t12, t.t23, t.t31]),
    };
    let mut x = DVector::from_iterator(p.n(), q0.iter().flat_map(|q| q.iter().copied()));
    project(&mut x);
    let mut lambda = DVector::zeros(p.m());
    let mut rho = RHO_INIT;
    let mut prev_viol = f64::INFINITY;
    let mut stall = 0;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for outer in 1..=opts.max_outer {
        inner_solve(&p, &mut x, &lambda, rho, opts);
        let (c, j) = p.constraints(&x);
        lambda += &c * rho;
        let viol = c.amax();
        let kkt = projected(&x, &(p.energy_grad(&x) + j.transpose() * &lambda)).amax();
        last = (viol, kkt);
        let accepted = viol <= opts.constraint_tol && kkt <= opts.gradient_tol;
        if accepted && (viol <= TIGHT_VIOLATION || stall >= 3) {
            return Ok(Equilibrium {
                q: (0..fingers.len()).map(|i| Problem::q(&x, i)).collect(),
                energy: p.energy(&x),
                max_violation: viol,
                projected_gradient: kkt,
                outer_iterations: outer,
                multipliers: lambda.iter().copied().collect(),
            });
        }
        if viol > 0.25 * prev_viol {
            if rho >= RHO_MAX {
                stall += 1;
                if stall > 20 && viol > opts.constraint_tol {
                    return Err(HandError::InfeasibleTriangle { violation: viol });
                }
            }
            rho = (rho * 10.0).min(RHO_MAX);
        }
        prev_viol = viol;
    }
    if last.0 > opts.constraint_tol {
        Err(HandError::InfeasibleTriangle { violation: last.0 })
    } else {
        Err(HandError::NonConvergence {
            iterations: opts.max_outer,
            violation: last.0,
            gradient: last.1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::finger::HandLayout;
    use crate::hand::{contact_triangle, ContactSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_finger() -> FingerParams {
        FingerParams {
            k_p: 1.0,
            k_d: 1.0,
            r_a: 1.0,
            r_p: 1.0,
            r_d: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn single_finger_kkt_example() {
        let f = [unit_finger()];
        let eq = solve(&f, &[[0.0, 0.0]], &[1.0], None, &SolverOptions::default()).unwrap();
        assert!((eq.q[0][0] - 0.5).abs() < 1e-9 && (eq.q[0][1] - 0.5).abs() < 1e-9);
        assert!((eq.energy - 0.25).abs() < 1e-9);
    }

    /// Closed-form stationarity: q_p = lam r_p / k_p, q_d = lam r_d / k_d with
    /// lam fixed by the tendon constraint.
    fn kkt_oracle(f: &FingerParams, a: f64) -> [f64; 2] {
        let lam = f.r_a * a / (f.r_p * f.r_p / f.k_p + f.r_d * f.r_d / f.k_d);
        [lam * f.r_p / f.k_p, lam * f.r_d / f.k_d]
    }

    #[test]
    fn single_finger_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut n = 0;
        while n < 200 {
            let f = FingerParams {
                k_p: rng.gen_range(0.2..5.0),
                k_d: rng.gen_range(0.2..5.0),
                r_a: rng.gen_range(2.0..8.0),
                r_p: rng.gen_range(2.0..8.0),
                r_d: rng.gen_range(2.0..8.0),
                ..Default::default()
            };
            let a = rng.gen_range(0.0..1.5);
            let want = kkt_oracle(&f, a);
            if want.iter().any(|&q| q > Q_MAX) {
                continue;
            }
            let eq = solve(&[f], &[[0.0, 0.0]], &[a], None, &SolverOptions::default()).unwrap();
            assert!((eq.q[0][0] - want[0]).abs() < 1e-6 && (eq.q[0][1] - want[1]).abs() < 1e-6);
            n += 1;
        }
    }

    #[test]
    fn stiff_distal_limit() {
        let f = FingerParams { k_d: 1e6, ..unit_finger() };
        let eq = solve(&[f], &[[0.0, 0.0]], &[1.0], None, &SolverOptions::default()).unwrap();
        assert!(eq.q[0][1].abs() < 1e-5);
        assert!((eq.q[0][0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn fixed_point_at_equilibrium() {
        let f = [FingerParams::default()];
        let first = solve(&f, &[[0.0, 0.0]], &[0.6], None, &SolverOptions::default()).unwrap();
        let again = solve(&f, &first.q, &[0.6], None, &SolverOptions::default()).unwrap();
        assert!((again.q[0][0] - first.q[0][0]).abs() < 1e-9);
        assert!((again.q[0][1] - first.q[0][1]).abs() < 1e-9);
    }

    #[test]
    fn joint_limit_is_respected() {
        // Asks for more tendon travel than the proximal limit allows alone.
        let f = [FingerParams { k_d: 1e3, ..unit_finger() }];
        let eq = solve(&f, &[[0.0, 0.0]], &[2.0], None, &SolverOptions::default()).unwrap();
        assert!(eq.q[0][0] <= Q_MAX + 1e-12);
        assert!((eq.q[0][0] + eq.q[0][1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn local_minimum_along_constraint() {
        let f = FingerParams::default();
        let eq = solve(&[f.clone()], &[[0.0, 0.0]], &[0.8], None, &SolverOptions::default()).unwrap();
        let q = eq.q[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            // Feasible perturbation keeps r_p dq_p + r_d dq_d = 0.
            let dp: f64 = rng.gen_range(-0.2..0.2);
            let p = [q[0] + dp, q[1] - dp * f.r_p / f.r_d];
            if p.iter().any(|v| !(Q_MIN..=Q_MAX).contains(v)) {
                continue;
            }
            assert!(f.energy(&p) >= eq.energy - 1e-12);
        }
    }

    #[test]
    fn triangle_constraint_holds() {
        let fingers = HandLayout::default().fingers();
        let q0 = [[0.3, 0.6], [0.35, 0.55], [0.3, 0.6]];
        let tips: Vec<_> = fingers.iter().zip(&q0).map(|(f, q)| f.tip(q)).collect();
        let tri = contact_triangle(&ContactSet { p: [tips[0], tips[1], tips[2]] }).unwrap();
        let a: Vec<f64> = fingers.iter().zip(&q0).map(|(f, q)| f.actuator_for(q)).collect();
        let eq = solve(&fingers, &q0, &a, Some(&tri), &SolverOptions::default()).unwrap();
        for (x, y) in eq.q.iter().zip(&q0) {
            assert!((x[0] - y[0]).abs() < 1e-8 && (x[1] - y[1]).abs() < 1e-8);
        }
        // Now pull one tendon and check the triangle is kept.
        let a2 = [a[0] + 0.02, a[1], a[2]];
        let eq2 = solve(&fingers, &eq.q, &a2, Some(&tri), &SolverOptions::default()).unwrap();
        let tips2: Vec<_> = fingers.iter().zip(&eq2.q).map(|(f, q)| f.tip(q)).collect();
        let tri2 = contact_triangle(&ContactSet { p: [tips2[0], tips2[1], tips2[2]] }).unwrap();
        assert!(tri.max_abs_diff(&tri2) <= 1e-9);
        assert!(eq2.max_violation <= 1e-3);
    }

    #[test]
    fn impossible_triangle_is_reported() {
        let fingers = HandLayout::default().fingers();
        let q0 = [[0.3, 0.6]; 3];
        let tri = ContactTriangle { t12: 500.0, t23: 500.0, t31: 500.0 };
        let a: Vec<f64> = fingers.iter().zip(&q0).map(|(f, q)| f.actuator_for(q)).collect();
        let err = solve(&fingers, &q0, &a, Some(&tri), &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, HandError::InfeasibleTriangle { .. }), "{err:?}");
    }
}
