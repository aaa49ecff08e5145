//! Model configuration: class parameters, the critical-load check, join
//! thresholds and the threshold join/leave rule.
//!
//! Class indices are 0-based throughout the library API. The CLI and the CSV
//! exports print them 1-based.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `sum(rho) == 1`.
pub const LOAD_TOLERANCE: f64 = 1e-9;

/// Absolute tolerance of the bisection used to invert table hazards.
pub const INVERSE_TOLERANCE: f64 = 1e-12;

/// Thresholds closer than this are treated as equal when ordering classes
/// and locating `M` (table inverses are only accurate to 1e-12).
pub const THETA_TOLERANCE: f64 = 1e-9;

/// Only accepted value of `schema_version`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("CriticalLoadViolation: sum of rho_i = {sum} (must equal 1 within 1e-9)")]
    CriticalLoadViolation { sum: f64 },
    #[error("NonMonotoneTheta: theta_{} = {} < theta_{} = {} (SLQ needs theta non-increasing in the class index)", .lower + 1, .theta_lower, .higher + 1, .theta_higher)]
    NonMonotoneTheta {
        lower: usize,
        higher: usize,
        theta_lower: f64,
        theta_higher: f64,
    },
    #[error("InvalidHazard: class {}: {reason}", .class + 1)]
    InvalidHazard { class: usize, reason: String },
    #[error("NonPositiveParam: class {}: {name} = {value}", .class + 1)]
    NonPositiveParam {
        class: usize,
        name: &'static str,
        value: f64,
    },
    #[error("RangeError: r = {r} exceeds sup h = {sup}")]
    RangeError { r: f64, sup: f64 },
    #[error("InvalidRate: lambda^n for class {} at n = {n} is {rate}", .class + 1)]
    InvalidRate { class: usize, n: u64, rate: f64 },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

/// Waiting-cost function `h`: continuous, strictly increasing, `h(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum HazardSpec {
    /// `h(x) = a x`
    Linear { a: f64 },
    /// `h(x) = a x^p`
    Power { a: f64, p: f64 },
    /// Piecewise linear through `(x, h(x))` knots, extended beyond the last
    /// knot with the slope of the last segment.
    Table { knots: Vec<(f64, f64)> },
}

impl HazardSpec {
    fn check(&self) -> Result<(), String> {
        match self {
            HazardSpec::Linear { a } => {
                if !(*a > 0.0 && a.is_finite()) {
                    return Err(format!("linear slope must be positive, got {a}"));
                }
            }
            HazardSpec::Power { a, p } => {
                if !(*a > 0.0 && a.is_finite()) || !(*p > 0.0 && p.is_finite()) {
                    return Err(format!("power hazard needs a > 0 and p > 0, got a = {a}, p = {p}"));
                }
            }
            HazardSpec::Table { knots } => {
                if knots.len() < 2 {
                    return Err("table needs at least two knots".into());
                }
                if knots[0] != (0.0, 0.0) {
                    return Err(format!("first knot must be (0, 0), got {:?}", knots[0]));
                }
                for w in knots.windows(2) {
                    let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                    if !(x1 > x0 && y1 > y0) || !x1.is_finite() || !y1.is_finite() {
                        return Err(format!(
                            "knots must be strictly increasing in both coordinates: {:?} then {:?}",
                            w[0], w[1]
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluates `h(x)` for `x >= 0`.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            HazardSpec::Linear { a } => a * x,
            HazardSpec::Power { a, p } => a * x.powf(*p),
            HazardSpec::Table { knots } => {
                let k = knots.partition_point(|&(kx, _)| kx <= x);
                let seg = k.clamp(1, knots.len() - 1);
                let (x0, y0) = knots[seg - 1];
                let (x1, y1) = knots[seg];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Largest value the inverse is defined for (`h(x_max)` for tables).
    pub fn sup(&self) -> f64 {
        match self {
            HazardSpec::Table { knots } => knots[knots.len() - 1].1,
            _ => f64::INFINITY,
        }
    }

    /// Evaluates `h^{-1}(y)`. Table hazards are inverted by bisection.
    pub fn inverse(&self, y: f64) -> Result<f64, ModelError> {
        match self {
            HazardSpec::Linear { a } => Ok(y / a),
            HazardSpec::Power { a, p } => Ok((y / a).powf(1.0 / p)),
            HazardSpec::Table { knots } => {
                let sup = self.sup();
                if y > sup {
                    return Err(ModelError::RangeError { r: y, sup });
                }
                let (mut lo, mut hi) = (0.0_f64, knots[knots.len() - 1].0);
                while hi - lo > INVERSE_TOLERANCE {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.eval(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

/// Unit-mean inter-arrival law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "lowercase", deny_unknown_fields)]
pub enum IaDist {
    Exponential,
    Deterministic,
    /// Uniform on `[1 - a/2, 1 + a/2]`, `0 <= a < 2`.
    Uniform(f64),
}

impl IaDist {
    /// Squared coefficient of variation (the variance, since the mean is 1).
    pub fn c2(&self) -> f64 {
        match self {
            IaDist::Exponential => 1.0,
            IaDist::Deterministic => 0.0,
            IaDist::Uniform(a) => a * a / 12.0,
        }
    }
}

/// One class as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub lambda: f64,
    #[serde(default)]
    pub lambda_hat: f64,
    pub mu: f64,
    pub r: f64,
    pub hazard: HazardSpec,
    pub ia_dist: IaDist,
}

/// The JSON config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub classes: Vec<ClassConfig>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Two exponential classes with `lambda = (0.5, 0.5)`, `mu = (1, 1)`,
    /// `h(x) = x` and `r = (1.0, 0.6)`, so `theta = (0.5, 0.3)`.
    pub fn reference() -> Self {
        let class = |r: f64| ClassConfig {
            lambda: 0.5,
            lambda_hat: 0.0,
            mu: 1.0,
            r,
            hazard: HazardSpec::Linear { a: 1.0 },
            ia_dist: IaDist::Exponential,
        };
        ModelConfig {
            schema_version: SCHEMA_VERSION,
            classes: vec![class(1.0), class(0.6)],
        }
    }
}

/// A validated class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams {
    pub lambda: f64,
    pub lambda_hat: f64,
    pub mu: f64,
    pub r: f64,
    pub hazard: HazardSpec,
    pub ia_dist: IaDist,
    pub c2_ia: f64,
}

impl ClassParams {
    /// `lambda * h^{-1}(r)`.
    pub fn threshold(&self) -> Result<f64, ModelError> {
        Ok(self.lambda * self.hazard.inverse(self.r)?)
    }
}

/// Customer action on arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Join,
    Leave,
}

impl Action {
    pub fn negate(self) -> Action {
        match self {
            Action::Join => Action::Leave,
            Action::Leave => Action::Join,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Join => "join",
            Action::Leave => "leave",
        })
    }
}

/// A validated model with derived `rho`, `theta` and `M`.
///
/// Immutable once built, so it can be shared across replications freely.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    classes: Vec<ClassParams>,
    rho: Vec<f64>,
    theta: Vec<f64>,
    m: Option<usize>,
}

impl Model {
    pub fn validate(config: &ModelConfig) -> Result<Model, ModelError> {
        if config.schema_version != SCHEMA_VERSION {
            return Err(ModelError::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        if config.classes.is_empty() {
            return Err(ModelError::InvalidConfig("at least one class is required".into()));
        }
        let mut classes = Vec::with_capacity(config.classes.len());
        for (i, c) in config.classes.iter().enumerate() {
            for (name, value) in [("lambda", c.lambda), ("mu", c.mu), ("r", c.r)] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(ModelError::NonPositiveParam { class: i, name, value });
                }
            }
            if !c.lambda_hat.is_finite() {
                return Err(ModelError::InvalidConfig(format!(
                    "class {}: lambda_hat must be finite",
                    i + 1
                )));
            }
            if let IaDist::Uniform(a) = c.ia_dist {
                if !(0.0..2.0).contains(&a) {
                    return Err(ModelError::InvalidConfig(format!(
                        "class {}: uniform inter-arrival width must lie in [0, 2), got {a}",
                        i + 1
                    )));
                }
            }
            c.hazard
                .check()
                .map_err(|reason| ModelError::InvalidHazard { class: i, reason })?;
            if c.r > c.hazard.sup() {
                return Err(ModelError::InvalidHazard {
                    class: i,
                    reason: format!("r = {} exceeds the last knot value {}", c.r, c.hazard.sup()),
                });
            }
            classes.push(ClassParams {
                lambda: c.lambda,
                lambda_hat: c.lambda_hat,
                mu: c.mu,
                r: c.r,
                hazard: c.hazard.clone(),
                ia_dist: c.ia_dist,
                c2_ia: c.ia_dist.c2(),
            });
        }

        let rho: Vec<f64> = classes.iter().map(|c| c.lambda / c.mu).collect();
        let sum: f64 = rho.iter().sum();
        if (sum - 1.0).abs() > LOAD_TOLERANCE {
            return Err(ModelError::CriticalLoadViolation { sum });
        }

        let theta = classes
            .iter()
            .map(ClassParams::threshold)
            .collect::<Result<Vec<_>, _>>()?;
        for (i, &t) in theta.iter().enumerate() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ModelError::NonPositiveParam { class: i, name: "theta", value: t });
            }
        }

        let ordered = theta.windows(2).all(|w| w[0] >= w[1] - THETA_TOLERANCE);
        let m = ordered.then(|| {
            let last = theta[theta.len() - 1];
            theta
                .iter()
                .position(|&t| (t - last).abs() <= THETA_TOLERANCE)
                .expect("last class matches itself")
        });

        Ok(Model {
            config: config.clone(),
            classes,
            rho,
            theta,
            m,
        })
    }

    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        Model::validate(&ModelConfig::from_json(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        Model::validate(&ModelConfig::load(path)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassParams] {
        &self.classes
    }

    pub fn class(&self, i: usize) -> &ClassParams {
        &self.classes[i]
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.theta[i]
    }

    /// 0-based index of the first class whose threshold equals the last
    /// one. `None` when thresholds are not non-increasing.
    pub fn m(&self) -> Option<usize> {
        self.m
    }

    /// True when the least threshold is attained by the last class only.
    pub fn has_unique_min_threshold(&self) -> bool {
        self.m == Some(self.classes.len() - 1)
    }

    /// SLQ needs `theta_1 >= ... >= theta_N`.
    pub fn require_ordered_thresholds(&self) -> Result<(), ModelError> {
        for (i, w) in self.theta.windows(2).enumerate() {
            if w[0] < w[1] - THETA_TOLERANCE {
                return Err(ModelError::NonMonotoneTheta {
                    lower: i,
                    higher: i + 1,
                    theta_lower: w[0],
                    theta_higher: w[1],
                });
            }
        }
        Ok(())
    }

    /// `n lambda_i + sqrt(n) lambda_hat_i`.
    pub fn arrival_rate_n(&self, i: usize, n: u64) -> Result<f64, ModelError> {
        let c = &self.classes[i];
        let nf = n as f64;
        let rate = nf * c.lambda + nf.sqrt() * c.lambda_hat;
        if !(rate > 0.0) || n == 0 {
            return Err(ModelError::InvalidRate { class: i, n, rate });
        }
        Ok(rate)
    }

    /// Threshold rule: join iff `h_i(q / (sqrt(n) lambda_i)) <= r_i`.
    pub fn join_decision(&self, i: usize, q: u64, n: u64) -> Action {
        let c = &self.classes[i];
        let x = q as f64 / ((n as f64).sqrt() * c.lambda);
        if c.hazard.eval(x) <= c.r {
            Action::Join
        } else {
            Action::Leave
        }
    }
}
