//! Monte Carlo experiments: snapshot-gap and collapse sweeps over `n`,
//! sampled-deviator Nash checks, and simulation-versus-limit marginals.
//!
//! Replications run on a rayon pool capped by `HTN_THREADS`. Results are
//! collected in replication order, so reports do not depend on scheduling.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::diffusion::{sample_marginals, SdeError, SdeSettings, DEFAULT_DT};
use crate::engine::{run, EngineError, EventTrace, Policy, Scenario};
use crate::metrics::{nash_gap, run_metrics, MetricsError, RunMetrics};
use crate::model::Model;
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("InvalidPlan: {0}")]
    InvalidPlan(String),
    #[error("EmptySample: KS distance needs two non-empty samples")]
    EmptySample,
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// How deviators are chosen in the Nash experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviatorRule {
    /// `k` deviators per replication, classes taken in turn, serial number
    /// uniform over the class arrivals seen by the horizon in the reference
    /// run.
    Stratified,
    /// The same explicit `(class, j)` list in every replication.
    Fixed(Vec<(usize, u64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub model: Model,
    pub policy: Policy,
    pub n_list: Vec<u64>,
    pub replications: u64,
    /// Game horizon `T-bar`.
    pub horizon: f64,
    /// Horizon `T` of the path metrics.
    pub metric_horizon: f64,
    pub base_seed: u64,
    pub deviators: usize,
    pub deviator_rule: DeviatorRule,
    pub eps: f64,
    pub sde: SdeSettings,
    pub sde_paths: usize,
    pub compare_times: Vec<f64>,
}

impl ExperimentPlan {
    pub fn new(model: Model, policy: Policy, n_list: Vec<u64>, replications: u64, horizon: f64, seed: u64) -> Self {
        ExperimentPlan {
            model,
            policy,
            n_list,
            replications,
            horizon,
            metric_horizon: horizon,
            base_seed: seed,
            deviators: 100,
            deviator_rule: DeviatorRule::Stratified,
            eps: 0.15,
            sde: SdeSettings::new(DEFAULT_DT, horizon),
            sde_paths: 4000,
            compare_times: vec![horizon],
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidPlan(m.to_string()));
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_list must be non-empty and strictly increasing");
        }
        if self.n_list[0] == 0 {
            return bad("n must be at least 1");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.horizon > 0.0) || !(self.metric_horizon > 0.0) || self.metric_horizon > self.horizon {
            return bad("need 0 < metric horizon <= horizon");
        }
        Ok(())
    }
}

/// Builds the worker pool, honoring `HTN_THREADS`.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("HTN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Mean, median and 90th percentile of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

impl Quantiles {
    /// Linear interpolation between order statistics. Empty samples give NaN.
    pub fn of(values: &[f64]) -> Quantiles {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Quantiles {
            mean: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
            median: q(0.5),
            p90: q(0.9),
        }
    }
}

/// Aggregates for one `n` of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub n: u64,
    pub runs: usize,
    pub gamma: Vec<Quantiles>,
    pub ssc: Quantiles,
    pub max_queue: Vec<Quantiles>,
    pub reneged: Vec<Quantiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashSummary {
    pub n: u64,
    pub eps: f64,
    pub deviators_per_replication: usize,
    pub gaps: Vec<DeviationGap>,
    pub violations: usize,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl NashSummary {
    pub fn violation_fraction(&self, eps: f64) -> f64 {
        if self.gaps.is_empty() {
            return 0.0;
        }
        self.gaps.iter().filter(|g| g.gap > eps).count() as f64 / self.gaps.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationGap {
    pub replication: u64,
    pub class: usize,
    pub j: u64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsEntry {
    pub n: u64,
    pub time: f64,
    pub class: usize,
    pub ks: f64,
    pub sim_samples: usize,
    pub sde_samples: usize,
}

/// A replication that could not be evaluated; excluded from aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub n: u64,
    pub replication: u64,
    pub scenario: Scenario,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub policy: Policy,
    pub sweep: Vec<SweepSummary>,
    pub runs: Vec<RunMetrics>,
    pub nash: Option<NashSummary>,
    pub marginals: Vec<KsEntry>,
    pub failures: Vec<RunFailure>,
}

impl Report {
    pub fn new(title: &str, policy: Policy) -> Self {
        Report {
            title: title.to_string(),
            policy,
            sweep: Vec::new(),
            runs: Vec::new(),
            nash: None,
            marginals: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Long-format CSV: `metric,n,class,quantile,value`. Empty class cells
    /// mean the row is not class-specific.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,n,class,quantile,value\n");
        let mut row = |metric: &str, n: u64, class: Option<usize>, quantile: &str, value: f64| {
            let class = class.map(|c| (c + 1).to_string()).unwrap_or_default();
            writeln!(out, "{metric},{n},{class},{quantile},{}", fmt_f64(value)).unwrap();
        };
        for s in &self.sweep {
            row("runs", s.n, None, "count", s.runs as f64);
            for (i, q) in s.gamma.iter().enumerate() {
                quantile_rows(&mut row, "gamma", s.n, Some(i), q);
            }
            quantile_rows(&mut row, "ssc", s.n, None, &s.ssc);
            for (i, q) in s.max_queue.iter().enumerate() {
                quantile_rows(&mut row, "max_qhat", s.n, Some(i), q);
            }
            for (i, q) in s.reneged.iter().enumerate() {
                quantile_rows(&mut row, "reneg_count", s.n, Some(i), q);
            }
        }
        if let Some(nash) = &self.nash {
            row("nash_deviators", nash.n, None, "count", nash.gaps.len() as f64);
            row("nash_eps", nash.n, None, "value", nash.eps);
            row("nash_violation_fraction", nash.n, None, "estimate", nash.fraction);
            row("nash_violation_fraction", nash.n, None, "ci95_low", nash.ci_low);
            row("nash_violation_fraction", nash.n, None, "ci95_high", nash.ci_high);
            let gaps: Vec<f64> = nash.gaps.iter().map(|g| g.gap).collect();
            quantile_rows(&mut row, "nash_gap", nash.n, None, &Quantiles::of(&gaps));
            row("nash_gap", nash.n, None, "max", gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        for k in &self.marginals {
            row("ks", k.n, Some(k.class), &format!("t={}", k.time), k.ks);
        }
        let mut ns: Vec<u64> = self.sweep.iter().map(|s| s.n).collect();
        ns.extend(self.nash.iter().map(|n| n.n));
        ns.extend(self.marginals.iter().map(|k| k.n));
        ns.extend(self.failures.iter().map(|f| f.n));
        ns.sort_unstable();
        ns.dedup();
        for n in ns {
            let count = self.failures.iter().filter(|f| f.n == n).count();
            row("failed_runs", n, None, "count", count as f64);
        }
        out
    }

    /// One row per run: `replication,scenario,n,policy,gamma_*,ssc,max_Qhat_*,reneg_count_*`.
    pub fn runs_csv(&self, classes: usize) -> String {
        let mut out = String::from("replication,scenario,n,policy");
        for prefix in ["gamma", "ssc", "max_Qhat", "reneg_count"] {
            if prefix == "ssc" {
                out.push_str(",ssc");
                continue;
            }
            for i in 1..=classes {
                write!(out, ",{prefix}_{i}").unwrap();
            }
        }
        out.push('\n');
        for r in &self.runs {
            out.push_str(&metrics_row(r));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} (policy {})", self.title, self.policy).unwrap();
        for s in &self.sweep {
            writeln!(out, "n = {} ({} runs)", s.n, s.runs).unwrap();
            for (i, q) in s.gamma.iter().enumerate() {
                writeln!(out, "  gamma_{}: median {:.4} p90 {:.4}", i + 1, q.median, q.p90).unwrap();
            }
            writeln!(out, "  ssc: mean {:.4} median {:.4} p90 {:.4}", s.ssc.mean, s.ssc.median, s.ssc.p90).unwrap();
            for (i, q) in s.max_queue.iter().enumerate() {
                writeln!(out, "  max Qhat_{}: mean {:.4} median {:.4}", i + 1, q.mean, q.median).unwrap();
            }
            for (i, q) in s.reneged.iter().enumerate() {
                writeln!(out, "  reneged_{}: median {:.1} p90 {:.1}", i + 1, q.median, q.p90).unwrap();
            }
        }
        if let Some(n) = &self.nash {
            writeln!(
                out,
                "n = {}: {} deviations, eps = {}, violations {} ({:.4}, 95% CI [{:.4}, {:.4}])",
                n.n,
                n.gaps.len(),
                n.eps,
                n.violations,
                n.fraction,
                n.ci_low,
                n.ci_high
            )
            .unwrap();
        }
        for k in &self.marginals {
            writeln!(
                out,
                "n = {} t = {} class {}: KS = {:.4} ({} vs {} samples)",
                k.n,
                k.time,
                k.class + 1,
                k.ks,
                k.sim_samples,
                k.sde_samples
            )
            .unwrap();
        }
        writeln!(out, "failed runs: {}", self.failures.len()).unwrap();
        for f in &self.failures {
            writeln!(out, "  n = {} rep {} {}: {}", f.n, f.replication, f.scenario, f.error).unwrap();
        }
        out
    }
}

fn quantile_rows(row: &mut impl FnMut(&str, u64, Option<usize>, &str, f64), metric: &str, n: u64, class: Option<usize>, q: &Quantiles) {
    row(metric, n, class, "mean", q.mean);
    row(metric, n, class, "median", q.median);
    row(metric, n, class, "p90", q.p90);
}

/// Shared float format of every CSV: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn metrics_row(r: &RunMetrics) -> String {
    let mut out = format!("{},{},{},{}", r.replication, r.scenario, r.n, r.policy);
    for g in &r.gamma {
        write!(out, ",{}", fmt_f64(*g)).unwrap();
    }
    write!(out, ",{}", fmt_f64(r.ssc)).unwrap();
    for q in &r.max_queue {
        write!(out, ",{}", fmt_f64(*q)).unwrap();
    }
    for c in &r.reneged {
        write!(out, ",{c}").unwrap();
    }
    out.push('\n');
    out
}

fn summarize(n: u64, runs: &[RunMetrics], classes: usize) -> SweepSummary {
    let per_class = |f: &dyn Fn(&RunMetrics, usize) -> f64| {
        (0..classes)
            .map(|i| Quantiles::of(&runs.iter().map(|r| f(r, i)).collect::<Vec<_>>()))
            .collect()
    };
    SweepSummary {
        n,
        runs: runs.len(),
        gamma: per_class(&|r, i| r.gamma[i]),
        ssc: Quantiles::of(&runs.iter().map(|r| r.ssc).collect::<Vec<_>>()),
        max_queue: per_class(&|r, i| r.max_queue[i]),
        reneged: per_class(&|r, i| r.reneged[i] as f64),
    }
}

fn failure(n: u64, replication: u64, scenario: Scenario, error: impl ToString) -> RunFailure {
    RunFailure {
        n,
        replication,
        scenario,
        error: error.to_string(),
    }
}

/// Reference runs for every `n`, with snapshot gap and collapse metrics.
pub fn rsp_experiment(plan: &ExperimentPlan) -> Result<Report, HarnessError> {
    plan.validate()?;
    let model = &plan.model;
    let mut report = Report::new("snapshot-gap sweep", plan.policy);
    let pool = thread_pool();
    for &n in &plan.n_list {
        let results: Vec<Result<RunMetrics, RunFailure>> = pool.install(|| {
            (0..plan.replications)
                .into_par_iter()
                .map(|rep| {
                    let trace = run(model, plan.policy, Scenario::Reference, n, plan.horizon, plan.base_seed, rep)
                        .map_err(|e| failure(n, rep, Scenario::Reference, e))?;
                    run_metrics(&trace, model, plan.metric_horizon, rep)
                        .map_err(|e| failure(n, rep, Scenario::Reference, e))
                })
                .collect()
        });
        let mut ok = Vec::new();
        for r in results {
            match r {
                Ok(m) => ok.push(m),
                Err(f) => report.failures.push(f),
            }
        }
        report.sweep.push(summarize(n, &ok, model.num_classes()));
        report.runs.extend(ok);
    }
    Ok(report)
}

/// Deviator identities for one replication.
pub fn sample_deviators(plan: &ExperimentPlan, reference: &EventTrace, replication: u64) -> Vec<(usize, u64)> {
    match &plan.deviator_rule {
        DeviatorRule::Fixed(list) => list.clone(),
        DeviatorRule::Stratified => {
            let classes = reference.num_classes;
            let counts: Vec<u64> = (0..classes)
                .map(|i| reference.customers[i].iter().filter(|c| c.arrival <= plan.horizon).count() as u64)
                .collect();
            (0..plan.deviators)
                .filter_map(|m| {
                    // Start each replication's rotation at a different class.
                    let class = (m + replication as usize) % classes;
                    if counts[class] == 0 {
                        return None;
                    }
                    let key = StreamKey::new(plan.base_seed, replication, Purpose::DeviatorSample, class, m as u64);
                    let j = 1 + (key.uniform() * counts[class] as f64) as u64;
                    Some((class, j.min(counts[class])))
                })
                .collect()
        }
    }
}

/// Coupled deviation runs at the largest `n` of the plan.
pub fn nash_experiment(plan: &ExperimentPlan) -> Result<Report, HarnessError> {
    plan.validate()?;
    let model = &plan.model;
    let n = *plan.n_list.last().expect("validated");
    let mut report = Report::new("sampled-deviator Nash check", plan.policy);
    let pool = thread_pool();
    let per_rep: Vec<(Vec<DeviationGap>, Vec<RunFailure>)> = pool.install(|| {
        (0..plan.replications)
            .into_par_iter()
            .map(|rep| {
                let reference = match run(model, plan.policy, Scenario::Reference, n, plan.horizon, plan.base_seed, rep) {
                    Ok(t) => t,
                    Err(e) => return (Vec::new(), vec![failure(n, rep, Scenario::Reference, e)]),
                };
                let deviators = sample_deviators(plan, &reference, rep);
                let outcomes: Vec<Result<DeviationGap, RunFailure>> = deviators
                    .par_iter()
                    .map(|&(class, j)| {
                        let scenario = Scenario::Deviator { class, j };
                        let arrived = reference.customer(class, j).is_some_and(|c| c.arrival <= plan.horizon);
                        if !arrived {
                            // Not a player: both costs are zero.
                            return Ok(DeviationGap { replication: rep, class, j, gap: 0.0 });
                        }
                        let dev = run(model, plan.policy, scenario, n, plan.horizon, plan.base_seed, rep)
                            .map_err(|e| failure(n, rep, scenario, e))?;
                        let gap = nash_gap(&reference, &dev, class, j, plan.horizon, model)
                            .map_err(|e: MetricsError| failure(n, rep, scenario, e))?;
                        Ok(DeviationGap { replication: rep, class, j, gap })
                    })
                    .collect();
                let mut gaps = Vec::new();
                let mut fails = Vec::new();
                for o in outcomes {
                    match o {
                        Ok(g) => gaps.push(g),
                        Err(f) => fails.push(f),
                    }
                }
                (gaps, fails)
            })
            .collect()
    });
    let mut gaps = Vec::new();
    for (g, f) in per_rep {
        gaps.extend(g);
        report.failures.extend(f);
    }
    let violations = gaps.iter().filter(|g| g.gap > plan.eps).count();
    let (fraction, ci_low, ci_high) = binomial_interval(violations, gaps.len());
    report.nash = Some(NashSummary {
        n,
        eps: plan.eps,
        deviators_per_replication: plan.deviators,
        gaps,
        violations,
        fraction,
        ci_low,
        ci_high,
    });
    Ok(report)
}

/// Normal-approximation 95% interval, clipped to `[0, 1]`.
pub fn binomial_interval(successes: usize, trials: usize) -> (f64, f64, f64) {
    if trials == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = successes as f64 / trials as f64;
    let half = 1.959_963_984_540_054 * (p * (1.0 - p) / trials as f64).sqrt();
    (p, (p - half).max(0.0), (p + half).min(1.0))
}

/// KS distances between `Xhat(t)` from reference runs and `X(t)` from the
/// limit SDE started at 0, per `n`, time and coordinate.
pub fn compare_marginals(plan: &ExperimentPlan) -> Result<Report, HarnessError> {
    plan.validate()?;
    let model = &plan.model;
    let classes = model.num_classes();
    if plan.compare_times.iter().any(|&t| t < 0.0 || t > plan.horizon) {
        return Err(HarnessError::InvalidPlan("comparison times must lie in [0, horizon]".into()));
    }
    let mut report = Report::new("simulation vs limit marginals", plan.policy);
    let x0 = vec![0.0; classes];
    let mut sde = plan.sde.clone();
    sde.horizon = plan.compare_times.iter().copied().fold(sde.dt, f64::max);
    let pool = thread_pool();
    let limit = pool.install(|| {
        sample_marginals(plan.policy, model, &x0, &sde, plan.base_seed, plan.sde_paths, &plan.compare_times)
    })?;
    for &n in &plan.n_list {
        let root = (n as f64).sqrt();
        let results: Vec<Result<Vec<Vec<f64>>, RunFailure>> = pool.install(|| {
            (0..plan.replications)
                .into_par_iter()
                .map(|rep| {
                    let trace = run(model, plan.policy, Scenario::Reference, n, plan.horizon, plan.base_seed, rep)
                        .map_err(|e| failure(n, rep, Scenario::Reference, e))?;
                    Ok(plan
                        .compare_times
                        .iter()
                        .map(|&t| {
                            let k = trace.index_at(t);
                            trace
                                .state(k)
                                .iter()
                                .zip(model.rho())
                                .map(|(c, rho)| (c.queue as f64 + c.in_service as f64 - rho * n as f64) / root)
                                .collect()
                        })
                        .collect())
                })
                .collect()
        });
        let mut samples = Vec::new();
        for r in results {
            match r {
                Ok(s) => samples.push(s),
                Err(f) => report.failures.push(f),
            }
        }
        for (ti, &t) in plan.compare_times.iter().enumerate() {
            for class in 0..classes {
                let sim: Vec<f64> = samples.iter().map(|s| s[ti][class]).collect();
                let lim: Vec<f64> = limit[ti].iter().map(|x| x[class]).collect();
                report.marginals.push(KsEntry {
                    n,
                    time: t,
                    class,
                    ks: ks_distance(&sim, &lim)?,
                    sim_samples: sim.len(),
                    sde_samples: lim.len(),
                });
            }
        }
    }
    Ok(report)
}

/// Two-sample Kolmogorov-Smirnov distance `sup_x |F_a(x) - F_b(x)|`,
/// computed exactly by merging the sorted samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64, HarnessError> {
    if a.is_empty() || b.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0_f64;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}
