//! Limit diffusions: the one-directional Skorohod map, the FP and SLQ
//! drifts, and an Euler scheme for the reflected SDEs.
//!
//! Both limits live in a half-space `{y : 1.y <= bound}` and are pushed back
//! along `-e_N`. For FP the bound is `theta_N`, for SLQ it is `N theta_N`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::Policy;
use crate::model::{Model, ModelError};
use crate::path::StepPath;
use crate::rng::{Purpose, StreamKey};

/// Default Euler step.
pub const DEFAULT_DT: f64 = 1e-3;

/// Tolerance of the complementarity check `dL > 0 => 1.X = bound`.
pub const BOUND_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("SlqLimitUndefined: the SLQ limit needs a unique least threshold (M = N), got M = {m:?} of {n}")]
    SlqLimitUndefined { m: Option<usize>, n: usize },
    #[error("InvalidStart: 1.x0 = {sum} exceeds bound {bound}")]
    InvalidStart { sum: f64, bound: f64 },
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkorohodResult {
    /// `f - g e_N`
    pub y: StepPath,
    /// Regulator, one value per breakpoint.
    pub g: Vec<f64>,
}

/// `g(t) = sup_{u <= t} (bound - 1.f(u))^-`, `y = f - g e_N`.
pub fn skorohod_map(f: &StepPath, bound: f64) -> SkorohodResult {
    let dim = f.dim();
    let mut y = StepPath::with_capacity(dim, f.len());
    let mut g = Vec::with_capacity(f.len());
    let mut running = 0.0_f64;
    let mut buf = vec![0.0; dim];
    for (k, p) in f.points().enumerate() {
        let excess = p.iter().sum::<f64>() - bound;
        running = running.max(excess);
        buf.copy_from_slice(p);
        buf[dim - 1] -= running;
        y.push(f.times()[k], &buf);
        g.push(running);
    }
    SkorohodResult { y, g }
}

/// `b(y) = -(mu_1 y_1, ..., mu_{N-1} y_{N-1}, mu_N (y_N - (1.y)+))`
pub fn drift_fp(y: &[f64], mu: &[f64]) -> Vec<f64> {
    let n = y.len();
    let total = y.iter().sum::<f64>().max(0.0);
    (0..n)
        .map(|i| {
            if i + 1 == n {
                -mu[i] * (y[i] - total)
            } else {
                -mu[i] * y[i]
            }
        })
        .collect()
}

/// `b(y)_i = -mu_i (y_i - (1.y)+ / N)`
pub fn drift_slq(y: &[f64], mu: &[f64]) -> Vec<f64> {
    let share = y.iter().sum::<f64>().max(0.0) / y.len() as f64;
    y.iter().zip(mu).map(|(yi, m)| -m * (yi - share)).collect()
}

/// Test-mode overrides and step size for the Euler scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeSettings {
    pub dt: f64,
    pub horizon: f64,
    /// `false` sets the covariance to zero.
    pub noise: bool,
    /// Replaces the model's `lambda_hat` as the Brownian drift.
    pub lambda_hat: Option<Vec<f64>>,
    /// Forces `b = 0`.
    pub zero_drift: bool,
}

impl SdeSettings {
    pub fn new(dt: f64, horizon: f64) -> Self {
        SdeSettings {
            dt,
            horizon,
            noise: true,
            lambda_hat: None,
            zero_drift: false,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Gaussian increment with mean `lambda_hat dt` and covariance
/// `dt diag(lambda_i (C^2_i + 1))`.
pub fn bm_increment(model: &Model, dt: f64, rng: &mut impl Rng) -> Vec<f64> {
    model
        .classes()
        .iter()
        .map(|c| {
            let z: f64 = rng.sample(StandardNormal);
            c.lambda_hat * dt + (c.lambda * (c.c2_ia + 1.0) * dt).sqrt() * z
        })
        .collect()
}

/// Reflection bound of the limit for `kind`.
pub fn limit_bound(kind: Policy, model: &Model) -> Result<f64, SdeError> {
    let n = model.num_classes();
    let last = model.theta(n - 1);
    match kind {
        Policy::Fp => Ok(last),
        Policy::Slq => {
            if !model.has_unique_min_threshold() {
                return Err(SdeError::SlqLimitUndefined { m: model.m(), n });
            }
            Ok(n as f64 * last)
        }
    }
}

/// Euler stepper with one-step reflection.
pub struct SdeStepper {
    kind: Policy,
    mu: Vec<f64>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    zero_drift: bool,
    bound: f64,
    dt: f64,
    x: Vec<f64>,
    l: f64,
    rng: rand_chacha::ChaCha8Rng,
}

impl SdeStepper {
    pub fn new(
        kind: Policy,
        model: &Model,
        x0: &[f64],
        settings: &SdeSettings,
        seed: u64,
        path: u64,
    ) -> Result<Self, SdeError> {
        let dim = model.num_classes();
        if x0.len() != dim {
            return Err(SdeError::InvalidArgument(format!("x0 has {} coordinates, model has {dim}", x0.len())));
        }
        if !(settings.dt > 0.0 && settings.horizon > 0.0) {
            return Err(SdeError::InvalidArgument("dt and horizon must be positive".into()));
        }
        let bound = limit_bound(kind, model)?;
        let sum: f64 = x0.iter().sum();
        if sum > bound + BOUND_TOLERANCE {
            return Err(SdeError::InvalidStart { sum, bound });
        }
        let lambda_hat: Vec<f64> = match &settings.lambda_hat {
            Some(v) if v.len() == dim => v.clone(),
            Some(v) => {
                return Err(SdeError::InvalidArgument(format!("lambda_hat override has {} entries", v.len())))
            }
            None => model.classes().iter().map(|c| c.lambda_hat).collect(),
        };
        let dt = settings.dt;
        Ok(SdeStepper {
            kind,
            mu: model.classes().iter().map(|c| c.mu).collect(),
            mean: lambda_hat.iter().map(|m| m * dt).collect(),
            sd: model
                .classes()
                .iter()
                .map(|c| {
                    if settings.noise {
                        (c.lambda * (c.c2_ia + 1.0) * dt).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect(),
            zero_drift: settings.zero_drift,
            bound,
            dt,
            x: x0.to_vec(),
            l: 0.0,
            rng: StreamKey::new(seed, path, Purpose::Brownian, 0, 0).rng(),
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn regulator(&self) -> f64 {
        self.l
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Advances one step and returns the regulator increment.
    pub fn step(&mut self) -> f64 {
        let drift = if self.zero_drift {
            vec![0.0; self.x.len()]
        } else {
            match self.kind {
                Policy::Fp => drift_fp(&self.x, &self.mu),
                Policy::Slq => drift_slq(&self.x, &self.mu),
            }
        };
        for i in 0..self.x.len() {
            let noise = if self.sd[i] > 0.0 {
                let z: f64 = self.rng.sample(StandardNormal);
                self.sd[i] * z
            } else {
                0.0
            };
            self.x[i] += drift[i] * self.dt + self.mean[i] + noise;
        }
        let excess = self.x.iter().sum::<f64>() - self.bound;
        let dl = excess.max(0.0);
        if dl > 0.0 {
            let last = self.x.len() - 1;
            // Land exactly on the boundary.
            let others: f64 = self.x[..last].iter().sum();
            self.x[last] = self.bound - others;
        }
        self.l += dl;
        dl
    }
}

/// One simulated path of the limit.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub kind: Policy,
    pub dt: f64,
    pub bound: f64,
    pub x: StepPath,
    pub l: Vec<f64>,
    pub q: StepPath,
    pub psi: StepPath,
}

/// Full paths on the grid `k dt`, `k = 0..=T/dt`.
pub fn simulate_sde(
    kind: Policy,
    model: &Model,
    x0: &[f64],
    settings: &SdeSettings,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<SdePath>, SdeError> {
    (0..n_paths as u64)
        .map(|p| {
            let mut stepper = SdeStepper::new(kind, model, x0, settings, seed, p)?;
            let steps = settings.steps();
            let mut x = StepPath::with_capacity(x0.len(), steps + 1);
            let mut l = Vec::with_capacity(steps + 1);
            x.push(0.0, stepper.state());
            l.push(0.0);
            for k in 1..=steps {
                stepper.step();
                x.push(k as f64 * settings.dt, stepper.state());
                l.push(stepper.regulator());
            }
            let (q, psi) = limit_queues(&x, kind);
            Ok(SdePath {
                kind,
                dt: settings.dt,
                bound: stepper.bound(),
                x,
                l,
                q,
                psi,
            })
        })
        .collect()
}

/// `X(t)` samples at the grid points nearest to `times`, without storing
/// whole paths: `out[time][path][coordinate]`.
pub fn sample_marginals(
    kind: Policy,
    model: &Model,
    x0: &[f64],
    settings: &SdeSettings,
    seed: u64,
    n_paths: usize,
    times: &[f64],
) -> Result<Vec<Vec<Vec<f64>>>, SdeError> {
    let marks: Vec<usize> = times.iter().map(|t| (t / settings.dt).round() as usize).collect();
    if marks.iter().any(|&m| m > settings.steps()) {
        return Err(SdeError::InvalidArgument("sample time beyond the horizon".into()));
    }
    let last = marks.iter().copied().max().unwrap_or(0);
    let per_path: Vec<Vec<Vec<f64>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut stepper = SdeStepper::new(kind, model, x0, settings, seed, p)?;
            let mut out = vec![Vec::new(); marks.len()];
            for k in 0..=last {
                if k > 0 {
                    stepper.step();
                }
                for (slot, &m) in out.iter_mut().zip(&marks) {
                    if m == k {
                        *slot = stepper.state().to_vec();
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_, SdeError>>()?;
    Ok((0..marks.len())
        .map(|t| per_path.iter().map(|p| p[t].clone()).collect())
        .collect())
}

/// Limit queue and service profiles: FP puts the whole queue in class `N`,
/// SLQ splits it evenly. `Psi = X - Q`.
pub fn limit_queues(x: &StepPath, kind: Policy) -> (StepPath, StepPath) {
    let dim = x.dim();
    let mut q = StepPath::with_capacity(dim, x.len());
    let mut psi = StepPath::with_capacity(dim, x.len());
    let mut qv = vec![0.0; dim];
    let mut pv = vec![0.0; dim];
    for (k, p) in x.points().enumerate() {
        let total = p.iter().sum::<f64>().max(0.0);
        match kind {
            Policy::Fp => {
                qv.fill(0.0);
                qv[dim - 1] = total;
            }
            Policy::Slq => qv.fill(total / dim as f64),
        }
        for i in 0..dim {
            pv[i] = p[i] - qv[i];
        }
        q.push(x.times()[k], &qv);
        psi.push(x.times()[k], &pv);
    }
    (q, psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;

    fn reference_model() -> Model {
        Model::validate(&ModelConfig::reference()).unwrap()
    }

    fn single_class() -> Model {
        Model::from_json(
            r#"{"schema_version":1,"classes":[{"lambda":1,"mu":1,"r":1,
            "hazard":{"family":"linear","params":{"a":1}},"ia_dist":{"kind":"exponential"}}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn paths_below_the_bound_are_untouched() {
        let mut f = StepPath::new(2);
        f.push(0.0, &[0.1, -0.5]);
        f.push(1.0, &[0.2, 0.0]);
        let r = skorohod_map(&f, 0.3);
        assert_eq!(r.y, f);
        assert!(r.g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ramp_is_fully_regulated() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let f = StepPath::scalar(times.clone(), times.clone());
        let r = skorohod_map(&f, 0.0);
        assert_eq!(r.g, times);
        assert!(r.y.points().all(|p| p[0] == 0.0));
    }

    #[test]
    fn regulator_starts_at_initial_excess() {
        let mut f = StepPath::new(1);
        f.push(0.0, &[1.5]);
        f.push(1.0, &[0.0]);
        let r = skorohod_map(&f, 1.0);
        assert_eq!(r.g, vec![0.5, 0.5]);
        assert_eq!(r.y.point(1), &[-0.5]);
    }

    #[test]
    fn fp_drift_examples() {
        assert_eq!(drift_fp(&[0.0, 0.0], &[1.0, 2.0]), vec![-0.0, -0.0]);
        assert_eq!(drift_fp(&[1.0, -2.0], &[1.0, 2.0]), vec![-1.0, 4.0]);
        assert_eq!(drift_fp(&[1.0, 1.0], &[1.0, 2.0]), vec![-1.0, 2.0]);
    }

    #[test]
    fn slq_drift_examples() {
        assert_eq!(drift_slq(&[0.0, 0.0], &[1.0, 2.0]), vec![-0.0, -0.0]);
        assert_eq!(drift_slq(&[2.0, 0.0], &[1.0, 2.0]), vec![-1.0, 2.0]);
        assert_eq!(drift_slq(&[1.0, -3.0], &[1.0, 2.0]), vec![-1.0, 6.0]);
    }

    #[test]
    fn limit_queue_examples() {
        let mut x = StepPath::new(2);
        x.push(0.0, &[1.0, 2.0]);
        x.push(1.0, &[-1.0, 0.5]);
        let (q, psi) = limit_queues(&x, Policy::Fp);
        assert_eq!(q.point(0), &[0.0, 3.0]);
        assert_eq!(psi.point(0), &[1.0, -1.0]);
        assert_eq!(q.point(1), &[0.0, 0.0]);
        assert_eq!(psi.point(1), &[-1.0, 0.5]);
        let (q, psi) = limit_queues(&x, Policy::Slq);
        assert_eq!(q.point(0), &[1.5, 1.5]);
        assert_eq!(psi.point(0), &[-0.5, 0.5]);
    }

    #[test]
    fn bm_increment_moments() {
        let model = reference_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let k = 100_000;
        let dt = 0.01;
        let draws: Vec<Vec<f64>> = (0..k).map(|_| bm_increment(&model, dt, &mut rng)).collect();
        for i in 0..2 {
            let mean = draws.iter().map(|d| d[i]).sum::<f64>() / k as f64;
            let var = draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            assert!((var - 0.01).abs() <= 0.05 * 0.01, "var {var}");
            let sigma = 0.1;
            assert!(mean.abs() <= 4.0 * sigma / (k as f64).sqrt(), "mean {mean}");
        }
    }

    #[test]
    fn bm_increment_mean_follows_lambda_hat() {
        let mut cfg = ModelConfig::reference();
        cfg.classes[0].lambda_hat = 2.0;
        cfg.classes[0].ia_dist = crate::model::IaDist::Deterministic;
        let model = Model::validate(&cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let k = 20_000;
        let dt = 1e-3;
        let mean = (0..k).map(|_| bm_increment(&model, dt, &mut rng)[0]).sum::<f64>() / k as f64;
        let sigma = (0.5 * dt).sqrt();
        assert!((mean - 2.0 * dt).abs() <= 4.0 * sigma / (k as f64).sqrt());
    }

    #[test]
    fn zero_noise_fixed_point() {
        let model = reference_model();
        let mut s = SdeSettings::new(1e-3, 2.0);
        s.noise = false;
        let paths = simulate_sde(Policy::Fp, &model, &[0.0, 0.0], &s, 0, 1).unwrap();
        assert!(paths[0].x.points().all(|p| p == [0.0, 0.0]));
        assert!(paths[0].l.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn pinned_at_the_boundary_under_upward_forcing() {
        // Constant profile: X1 = lambda_hat_1 / mu_1, X2 = bound - X1. Then
        // L grows at rate lambda_hat . 1 + 1 . b(X) = 0.3 + 0.
        let model = reference_model();
        let bound = model.theta(1);
        let lh = vec![0.2, 0.1];
        let xbar = vec![0.2, bound - 0.2];
        let b = drift_fp(&xbar, &[1.0, 1.0]);
        let rate = lh.iter().sum::<f64>() + b.iter().sum::<f64>();
        assert!((rate - 0.3).abs() < 1e-12);
        let mut s = SdeSettings::new(1e-4, 3.0);
        s.noise = false;
        s.lambda_hat = Some(lh);
        let p = &simulate_sde(Policy::Fp, &model, &xbar, &s, 0, 1).unwrap()[0];
        for (k, pt) in p.x.points().enumerate() {
            assert!((pt.iter().sum::<f64>() - bound).abs() < 1e-12);
            assert!((pt[0] - 0.2).abs() < 1e-12);
            assert!((p.l[k] - rate * k as f64 * 1e-4).abs() < 1e-9);
        }
    }

    #[test]
    fn one_step_reflection_equals_whole_path_map_without_drift() {
        let model = reference_model();
        let mut s = SdeSettings::new(1e-3, 2.0);
        s.zero_drift = true;
        let x0 = [0.0, 0.0];
        let p = &simulate_sde(Policy::Fp, &model, &x0, &s, 5, 1).unwrap()[0];
        // Rebuild the free path from the same noise and reflect it at once.
        let mut stepper = SdeStepper::new(Policy::Fp, &model, &x0, &s, 5, 0).unwrap();
        stepper.bound = f64::INFINITY;
        let mut free = StepPath::new(2);
        free.push(0.0, &x0);
        for k in 1..=s.steps() {
            stepper.step();
            free.push(k as f64 * s.dt, stepper.state());
        }
        let whole = skorohod_map(&free, model.theta(1));
        assert!(whole.y.distance(&p.x) < 1e-12);
        for (a, b) in whole.g.iter().zip(&p.l) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn complementarity_and_domain() {
        let model = reference_model();
        let s = SdeSettings::new(1e-3, 3.0);
        for kind in [Policy::Fp, Policy::Slq] {
            for p in simulate_sde(kind, &model, &[0.0, 0.0], &s, 9, 5).unwrap() {
                for k in 1..p.l.len() {
                    let sum: f64 = p.x.point(k).iter().sum();
                    assert!(sum <= p.bound + BOUND_TOLERANCE);
                    let dl = p.l[k] - p.l[k - 1];
                    assert!(dl >= 0.0);
                    if dl > 0.0 {
                        assert!((sum - p.bound).abs() <= BOUND_TOLERANCE);
                    }
                }
            }
        }
    }

    #[test]
    fn slq_limit_requires_unique_least_threshold() {
        let mut cfg = ModelConfig::reference();
        cfg.classes[0].r = 0.6;
        let model = Model::validate(&cfg).unwrap();
        let s = SdeSettings::new(1e-2, 1.0);
        assert!(matches!(
            simulate_sde(Policy::Slq, &model, &[0.0, 0.0], &s, 0, 1),
            Err(SdeError::SlqLimitUndefined { .. })
        ));
        assert!(simulate_sde(Policy::Fp, &model, &[0.0, 0.0], &s, 0, 1).is_ok());
    }

    #[test]
    fn start_outside_domain_is_rejected() {
        let model = reference_model();
        let s = SdeSettings::new(1e-2, 1.0);
        assert!(matches!(
            simulate_sde(Policy::Fp, &model, &[0.2, 0.2], &s, 0, 1),
            Err(SdeError::InvalidStart { .. })
        ));
    }

    #[test]
    fn paths_are_reproducible_and_marginals_agree() {
        let model = reference_model();
        let s = SdeSettings::new(1e-2, 2.0);
        let a = simulate_sde(Policy::Slq, &model, &[0.0, 0.0], &s, 3, 4).unwrap();
        let b = simulate_sde(Policy::Slq, &model, &[0.0, 0.0], &s, 3, 4).unwrap();
        assert_eq!(a, b);
        let m = sample_marginals(Policy::Slq, &model, &[0.0, 0.0], &s, 3, 4, &[1.0, 2.0]).unwrap();
        for (pi, path) in a.iter().enumerate() {
            assert_eq!(m[0][pi], path.x.point(100));
            assert_eq!(m[1][pi], path.x.point(200));
        }
    }

    #[test]
    fn drifts_are_linear_in_mu() {
        let y = [0.4, -1.3, 0.7];
        let mu = [1.0, 0.5, 2.0];
        let scaled: Vec<f64> = mu.iter().map(|m| 3.0 * m).collect();
        for (a, b) in drift_fp(&y, &scaled).iter().zip(drift_fp(&y, &mu)) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
        for (a, b) in drift_slq(&y, &scaled).iter().zip(drift_slq(&y, &mu)) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxation_in_the_idle_region() {
        // N = 1, x < 0: b(x) = -mu x, so X(T) = x0 e^{-T}.
        let model = single_class();
        let mut s = SdeSettings::new(1e-4, 1.0);
        s.noise = false;
        let p = &simulate_sde(Policy::Fp, &model, &[-0.5], &s, 0, 1).unwrap()[0];
        let end = p.x.point(p.x.len() - 1)[0];
        assert!((end + 0.5 * (-1.0f64).exp()).abs() < 1e-4);
    }
}
