//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use htn::path::StepPath;
use rand::Rng;

/// Regulator by its definition, recomputed from scratch at every point:
/// `g(t_k) = max_{m <= k} (1.f(t_m) - bound)+`.
pub fn skorohod_oracle(f: &StepPath, bound: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut ys = Vec::new();
    let mut gs = Vec::new();
    for k in 0..f.len() {
        let mut g = 0.0_f64;
        for m in 0..=k {
            let s: f64 = f.point(m).iter().sum();
            if s - bound > g {
                g = s - bound;
            }
        }
        let mut y = f.point(k).to_vec();
        let last = y.len() - 1;
        y[last] -= g;
        ys.push(y);
        gs.push(g);
    }
    (ys, gs)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Random step path with `steps` breakpoints after 0 in dimension `dim`.
pub fn random_path(rng: &mut impl Rng, dim: usize, steps: usize) -> StepPath {
    let mut p = StepPath::new(dim);
    let mut t = 0.0;
    let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.push(t, &x);
    for _ in 0..steps {
        t += rng.random_range(0.001..0.1);
        for v in x.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        p.push(t, &x);
    }
    p
}

/// Same breakpoints as `p`, values perturbed by at most `scale` per coordinate.
pub fn perturb(rng: &mut impl Rng, p: &StepPath, scale: f64) -> StepPath {
    let mut q = StepPath::new(p.dim());
    for (k, x) in p.points().enumerate() {
        let v: Vec<f64> = x.iter().map(|v| v + rng.random_range(-scale..scale)).collect();
        q.push(p.times()[k], &v);
    }
    q
}

/// Classical RK4 for `x' = f(x)` from 0 to `horizon`.
pub fn rk4(f: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64], dt: f64, horizon: f64) -> Vec<f64> {
    let steps = (horizon / dt).round() as usize;
    let mut x = x0.to_vec();
    let add = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&add(&x, &k1, dt / 2.0));
        let k3 = f(&add(&x, &k2, dt / 2.0));
        let k4 = f(&add(&x, &k3, dt));
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

pub const SINGLE_CLASS: &str = r#"{"schema_version":1,"classes":[{"lambda":1,"mu":1,"r":1,
    "hazard":{"family":"linear","params":{"a":1}},"ia_dist":{"kind":"exponential"}}]}"#;
