//! Diffusion scaling of traces and the quantities computed from it: the
//! snapshot gap, customer payoffs, deviation gains and collapse metrics.

use thiserror::Error;

use crate::engine::{EventTrace, Policy, Scenario};
use crate::model::{Action, Model};
use crate::path::StepPath;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("HorizonExceedsTrace: horizon {horizon} beyond trace end {end}")]
    HorizonExceedsTrace { horizon: f64, end: f64 },
    #[error("CensoredWait: customer ({}, {j}) joined at {arrival} but was never routed", .class + 1)]
    CensoredWait { class: usize, j: u64, arrival: f64 },
    #[error("UnknownCustomer: ({}, {j}) is not in the trace", .class + 1)]
    UnknownCustomer { class: usize, j: u64 },
    #[error("IdentityViolation: 1.Qhat = {queue} but (1.Xhat)+ = {total} at t = {t}")]
    IdentityViolation { t: f64, queue: f64, total: f64 },
}

/// One joiner, diffusion scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledJoiner {
    pub class: usize,
    pub j: u64,
    pub arrival: f64,
    /// `Qhat_i(AT-)`.
    pub queue_before: f64,
    /// `sqrt(n) WT`, `None` if the customer never reached service.
    pub wait: Option<f64>,
}

/// Diffusion-scaled paths of one trace on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPath {
    pub n: u64,
    pub horizon: f64,
    /// `Q / sqrt(n)`
    pub queue: StepPath,
    /// `R / sqrt(n)`
    pub reneged: StepPath,
    /// `(Psi - rho n) / sqrt(n)`
    pub in_service: StepPath,
    /// `Qhat + Psihat`
    pub x: StepPath,
    /// `(B - n lambda t) / sqrt(n)`, evaluated at the breakpoints.
    pub routed: StepPath,
    /// Joiners that arrived in `[0, T]`.
    pub joiners: Vec<ScaledJoiner>,
}

pub fn scale(trace: &EventTrace, model: &Model, horizon: f64) -> Result<ScaledPath, MetricsError> {
    if horizon > trace.end_time {
        return Err(MetricsError::HorizonExceedsTrace {
            horizon,
            end: trace.end_time,
        });
    }
    let dim = trace.num_classes;
    let nf = trace.n as f64;
    let root = nf.sqrt();
    let rows = trace.rows.partition_point(|r| r.t <= horizon);
    let mut queue = StepPath::with_capacity(dim, rows);
    let mut reneged = StepPath::with_capacity(dim, rows);
    let mut in_service = StepPath::with_capacity(dim, rows);
    let mut x = StepPath::with_capacity(dim, rows);
    let mut routed = StepPath::with_capacity(dim, rows);
    let (mut q, mut r, mut p, mut xv, mut b) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for k in 0..rows {
        let t = trace.rows[k].t;
        for (i, c) in trace.state(k).iter().enumerate() {
            let class = model.class(i);
            q[i] = c.queue as f64 / root;
            r[i] = c.reneged as f64 / root;
            p[i] = (c.in_service as f64 - model.rho()[i] * nf) / root;
            xv[i] = q[i] + p[i];
            b[i] = (c.routed as f64 - nf * class.lambda * t) / root;
        }
        let queued: f64 = q.iter().sum();
        let total: f64 = xv.iter().sum();
        if (queued - total.max(0.0)).abs() > 1e-9 * (1.0 + queued.abs()) {
            return Err(MetricsError::IdentityViolation { t, queue: queued, total });
        }
        queue.push(t, &q);
        reneged.push(t, &r);
        in_service.push(t, &p);
        x.push(t, &xv);
        routed.push(t, &b);
    }
    let joiners = trace
        .all_customers()
        .filter(|c| c.action == Action::Join && c.arrival <= horizon)
        .map(|c| ScaledJoiner {
            class: c.class,
            j: c.j,
            arrival: c.arrival,
            queue_before: c.observed_queue as f64 / root,
            wait: c.wait().map(|w| w * root),
        })
        .collect();
    Ok(ScaledPath {
        n: trace.n,
        horizon,
        queue,
        reneged,
        in_service,
        x,
        routed,
        joiners,
    })
}

/// Snapshot gap per class:
/// `gamma_i = max |Qhat_i(AT-) + 1/sqrt(n) - lambda_i WThat|` over class-`i`
/// joiners with `AT <= T`. The `1/sqrt(n)` counts the joiner itself.
/// Classes without joiners report 0.
pub fn rsp_gap(scaled: &ScaledPath, model: &Model, horizon: f64) -> Result<Vec<f64>, MetricsError> {
    let step = 1.0 / (scaled.n as f64).sqrt();
    let mut gamma = vec![0.0_f64; model.num_classes()];
    for c in scaled.joiners.iter().filter(|c| c.arrival <= horizon) {
        let wait = c.wait.ok_or(MetricsError::CensoredWait {
            class: c.class,
            j: c.j,
            arrival: c.arrival,
        })?;
        let gap = (c.queue_before + step - model.class(c.class).lambda * wait).abs();
        gamma[c.class] = gamma[c.class].max(gap);
    }
    Ok(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffCase {
    Reneged,
    Joined,
    PostHorizon,
}

/// Cost borne by one customer; lower is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffOutcome {
    pub class: usize,
    pub j: u64,
    pub value: f64,
    pub case: PayoffCase,
}

/// `r_i` for leaving, `h_i(sqrt(n) WT)` for joining, 0 after the game horizon.
pub fn payoff(
    trace: &EventTrace,
    class: usize,
    j: u64,
    game_horizon: f64,
    model: &Model,
) -> Result<PayoffOutcome, MetricsError> {
    let outcome = |value, case| PayoffOutcome { class, j, value, case };
    let Some(c) = trace.customer(class, j) else {
        // Every arrival up to the trace end is recorded, so a missing
        // customer arrived after it.
        if class < trace.num_classes && j > 0 && trace.end_time >= game_horizon {
            return Ok(outcome(0.0, PayoffCase::PostHorizon));
        }
        return Err(MetricsError::UnknownCustomer { class, j });
    };
    if c.arrival > game_horizon {
        return Ok(outcome(0.0, PayoffCase::PostHorizon));
    }
    let params = model.class(class);
    match c.action {
        Action::Leave => Ok(outcome(params.r, PayoffCase::Reneged)),
        Action::Join => {
            let wait = c.wait().ok_or(MetricsError::CensoredWait {
                class,
                j,
                arrival: c.arrival,
            })?;
            let scaled = wait * (trace.n as f64).sqrt();
            Ok(outcome(params.hazard.eval(scaled), PayoffCase::Joined))
        }
    }
}

/// Cost of following the rule minus cost of deviating, for the deviator
/// `(class, j)`. The rule is an `eps`-best response at `(class, j)` iff the
/// gap is at most `eps`.
pub fn nash_gap(
    reference: &EventTrace,
    deviator: &EventTrace,
    class: usize,
    j: u64,
    game_horizon: f64,
    model: &Model,
) -> Result<f64, MetricsError> {
    let follow = payoff(reference, class, j, game_horizon, model)?;
    let deviate = payoff(deviator, class, j, game_horizon, model)?;
    Ok(follow.value - deviate.value)
}

/// State-space-collapse distance on `[0, T]`.
///
/// FP: largest scaled high-priority queue, `max_{i<N} sup_t Qhat_i(t)`.
/// SLQ: `sup_t max_i |Qhat_i(t) - (1.Xhat(t))+ / N|`.
pub fn ssc_metric(scaled: &ScaledPath, policy: Policy, horizon: f64) -> f64 {
    let dim = scaled.queue.dim();
    let times = scaled.queue.times();
    let mut best = 0.0_f64;
    for k in 0..scaled.queue.len() {
        if times[k] > horizon {
            break;
        }
        let q = scaled.queue.point(k);
        let value = match policy {
            Policy::Fp => q[..dim - 1].iter().copied().fold(0.0, f64::max),
            Policy::Slq => {
                let share = scaled.x.point(k).iter().sum::<f64>().max(0.0) / dim as f64;
                q.iter().map(|qi| (qi - share).abs()).fold(0.0, f64::max)
            }
        };
        best = best.max(value);
    }
    best
}

/// Per-run summary exported in the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub replication: u64,
    pub scenario: Scenario,
    pub n: u64,
    pub policy: Policy,
    pub gamma: Vec<f64>,
    pub ssc: f64,
    pub max_queue: Vec<f64>,
    pub reneged: Vec<u64>,
}

pub fn run_metrics(
    trace: &EventTrace,
    model: &Model,
    horizon: f64,
    replication: u64,
) -> Result<RunMetrics, MetricsError> {
    let scaled = scale(trace, model, horizon)?;
    let gamma = rsp_gap(&scaled, model, horizon)?;
    let dim = trace.num_classes;
    let max_queue = (0..dim)
        .map(|i| scaled.queue.points().map(|p| p[i]).fold(0.0, f64::max))
        .collect();
    let last = trace.index_at(horizon);
    let reneged = trace.state(last).iter().map(|c| c.reneged).collect();
    Ok(RunMetrics {
        replication,
        scenario: trace.scenario,
        n: trace.n,
        policy: trace.policy,
        gamma,
        ssc: ssc_metric(&scaled, trace.policy, horizon),
        max_queue,
        reneged,
    })
}

/// If class `i` never reaches `sqrt(n) theta_i` on `[0, T]`, nobody of that
/// class reneged by `T` (reference scenario). Returns the classes where the
/// implication fails.
pub fn reneging_implication_failures(trace: &EventTrace, model: &Model, horizon: f64) -> Vec<usize> {
    let root = (trace.n as f64).sqrt();
    let last = trace.index_at(horizon);
    (0..trace.num_classes)
        .filter(|&i| {
            let peak = (0..=last).map(|k| trace.state(k)[i].queue).max().unwrap_or(0);
            (peak as f64) < root * model.theta(i) && trace.state(last)[i].reneged > 0
        })
        .collect()
}
