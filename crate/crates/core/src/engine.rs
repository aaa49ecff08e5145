//! Event-driven simulation of the `n`-server, `N`-class system with
//! strategic join/leave customers.
//!
//! Customers that joined by the game horizon are always carried to service
//! before the run stops, so every waiting time the payoffs need is realized.
//! Arrivals after the horizon keep happening while that drain completes.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Action, Model, ModelError};
use crate::rng::{KeyedPrimitives, Primitives};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("DrainTimeout: joiners from before the horizon still waiting at t = {t}")]
    DrainTimeout { t: f64 },
    #[error("DeviatorNotArrived: fewer than {j} class-{} arrivals by the horizon", .class + 1)]
    DeviatorNotArrived { class: usize, j: u64 },
    #[error("InvalidScenario: {0}")]
    InvalidScenario(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Fixed priority, lower class index first.
    Fp,
    /// Serve the longest queue, ties to the lowest index.
    Slq,
}

impl Policy {
    pub fn next_class(self, queues: &[u64]) -> Option<usize> {
        match self {
            Policy::Fp => next_class_fp(queues),
            Policy::Slq => next_class_slq(queues),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Fp => "fp",
            Policy::Slq => "slq",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp" => Ok(Policy::Fp),
            "slq" => Ok(Policy::Slq),
            other => Err(format!("unknown policy {other:?} (expected fp or slq)")),
        }
    }
}

/// Which customers play the threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Reference,
    /// Customer `(class, j)` plays the negated rule; `class` is 0-based and
    /// `j >= 1` is its arrival serial number.
    Deviator { class: usize, j: u64 },
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Reference => f.write_str("ref"),
            Scenario::Deviator { class, j } => write!(f, "dev:{}:{}", class + 1, j),
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    /// Parses `ref` or `dev:i:j` with a 1-based class.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ref" {
            return Ok(Scenario::Reference);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["dev", i, j] => {
                let i: usize = i.parse().map_err(|_| format!("bad class in {s:?}"))?;
                let j: u64 = j.parse().map_err(|_| format!("bad index in {s:?}"))?;
                if i == 0 || j == 0 {
                    return Err(format!("class and index are 1-based in {s:?}"));
                }
                Ok(Scenario::Deviator { class: i - 1, j })
            }
            _ => Err(format!("scenario {s:?} is neither ref nor dev:i:j")),
        }
    }
}

/// Least index with a non-empty queue.
pub fn next_class_fp(queues: &[u64]) -> Option<usize> {
    queues.iter().position(|&q| q > 0)
}

/// Lowest index among the longest non-empty queues.
pub fn next_class_slq(queues: &[u64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &q) in queues.iter().enumerate() {
        if q > 0 && best.is_none_or(|b| q > queues[b]) {
            best = Some(i);
        }
    }
    best
}

/// Number of customers in service at time 0. Queues always start empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialCondition {
    /// `floor(rho_i n)` class-`i` customers in service.
    #[default]
    Balanced,
    Empty,
    InService(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOptions {
    /// Extra time allowed after the horizon to route the remaining joiners.
    /// Defaults to ten horizons.
    pub drain_cap: Option<f64>,
    pub initial: InitialCondition,
}

/// Cumulative counts of one class after an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub arrived: u64,
    pub joined: u64,
    pub reneged: u64,
    pub routed: u64,
    pub departed: u64,
    pub queue: u64,
    pub in_service: u64,
}

/// Selects one of the counting processes of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Count {
    Arrived,
    Joined,
    Reneged,
    Routed,
    Departed,
    Queue,
    InService,
}

impl ClassCounts {
    pub fn get(&self, which: Count) -> u64 {
        match which {
            Count::Arrived => self.arrived,
            Count::Joined => self.joined,
            Count::Reneged => self.reneged,
            Count::Routed => self.routed,
            Count::Departed => self.departed,
            Count::Queue => self.queue,
            Count::InService => self.in_service,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Init,
    Arrival(Action),
    Departure,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Init => "init",
            EventKind::Arrival(Action::Join) => "arrival_join",
            EventKind::Arrival(Action::Leave) => "arrival_leave",
            EventKind::Departure => "departure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub kind: EventKind,
    /// Arriving or departing customer's class.
    pub class: Option<usize>,
    /// Serial number; `None` for customers present at time 0.
    pub j: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CustomerRecord {
    pub class: usize,
    pub j: u64,
    pub arrival: f64,
    /// `Q_i(AT-)`.
    pub observed_queue: u64,
    pub action: Action,
    /// Routing time, `None` for customers who left (or were never routed).
    pub routed: Option<f64>,
    pub deviated: bool,
    pub post_horizon: bool,
}

impl CustomerRecord {
    pub fn wait(&self) -> Option<f64> {
        self.routed.map(|rt| rt - self.arrival)
    }
}

/// Full record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace {
    pub n: u64,
    pub policy: Policy,
    pub scenario: Scenario,
    pub num_classes: usize,
    /// Game horizon.
    pub horizon: f64,
    /// Time of the last recorded event, at least `horizon`.
    pub end_time: f64,
    pub initial_in_service: Vec<u64>,
    pub rows: Vec<TraceRow>,
    counts: Vec<ClassCounts>,
    /// `customers[i][j - 1]` is customer `(i, j)`.
    pub customers: Vec<Vec<CustomerRecord>>,
}

impl EventTrace {
    /// Counts of every class right after event `k`.
    pub fn state(&self, k: usize) -> &[ClassCounts] {
        &self.counts[k * self.num_classes..(k + 1) * self.num_classes]
    }

    pub fn queues(&self, k: usize) -> Vec<u64> {
        self.state(k).iter().map(|c| c.queue).collect()
    }

    pub fn busy(&self, k: usize) -> u64 {
        self.state(k).iter().map(|c| c.in_service).sum()
    }

    /// Index of the last event at or before `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.rows.partition_point(|r| r.t <= t).saturating_sub(1)
    }

    /// Step path `(event time, value)` of one counting process.
    pub fn path(&self, which: Count, class: usize) -> Vec<(f64, u64)> {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| (r.t, self.state(k)[class].get(which)))
            .collect()
    }

    pub fn customer(&self, class: usize, j: u64) -> Option<&CustomerRecord> {
        j.checked_sub(1).and_then(|k| self.customers.get(class)?.get(k as usize))
    }

    pub fn all_customers(&self) -> impl Iterator<Item = &CustomerRecord> {
        self.customers.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Payload {
    Departure { server: usize },
    Arrival { class: usize, j: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    t: f64,
    /// Departures before arrivals at equal times.
    tier: u8,
    tie: usize,
    payload: Payload,
}

impl Event {
    fn key(&self) -> (f64, u8, usize) {
        (self.t, self.tier, self.tie)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    }
}

struct Sim<'a, P: Primitives> {
    model: &'a Model,
    policy: Policy,
    scenario: Scenario,
    n: u64,
    horizon: f64,
    primitives: &'a P,
    rates: Vec<f64>,
    events: BinaryHeap<Reverse<Event>>,
    state: Vec<ClassCounts>,
    waiting: Vec<VecDeque<u64>>,
    /// What each server is working on: `(class, serial)`.
    servers: Vec<Option<(usize, Option<u64>)>>,
    idle: BinaryHeap<Reverse<usize>>,
    pending_before_horizon: usize,
    trace: EventTrace,
}

impl<'a, P: Primitives> Sim<'a, P> {
    fn record(&mut self, t: f64, kind: EventKind, class: Option<usize>, j: Option<u64>) {
        self.trace.rows.push(TraceRow { t, kind, class, j });
        self.trace.counts.extend_from_slice(&self.state);
    }

    fn start_service(&mut self, t: f64, class: usize, j: Option<u64>, work: f64, server: usize) {
        self.servers[server] = Some((class, j));
        let s = &mut self.state[class];
        s.in_service += 1;
        self.events.push(Reverse(Event {
            t: t + work / self.model.class(class).mu,
            tier: 0,
            tie: server,
            payload: Payload::Departure { server },
        }));
    }

    fn schedule_arrival(&mut self, after: f64, class: usize, j: u64) {
        let t = after + self.primitives.interarrival(class, j) / self.rates[class];
        self.events.push(Reverse(Event {
            t,
            tier: 1,
            tie: class,
            payload: Payload::Arrival { class, j },
        }));
    }

    fn on_arrival(&mut self, t: f64, class: usize, j: u64) {
        let q = self.state[class].queue;
        let rule = self.model.join_decision(class, q, self.n);
        let deviated = matches!(self.scenario, Scenario::Deviator { class: c, j: dj } if c == class && dj == j)
            && t <= self.horizon;
        let action = if deviated { rule.negate() } else { rule };
        let mut record = CustomerRecord {
            class,
            j,
            arrival: t,
            observed_queue: q,
            action,
            routed: None,
            deviated,
            post_horizon: t > self.horizon,
        };
        self.state[class].arrived += 1;
        match action {
            Action::Leave => self.state[class].reneged += 1,
            Action::Join => {
                self.state[class].joined += 1;
                if let Some(Reverse(server)) = self.idle.pop() {
                    self.state[class].routed += 1;
                    record.routed = Some(t);
                    let work = self.primitives.workload(class, j);
                    self.start_service(t, class, Some(j), work, server);
                } else {
                    self.state[class].queue += 1;
                    self.waiting[class].push_back(j);
                    if t <= self.horizon {
                        self.pending_before_horizon += 1;
                    }
                }
            }
        }
        debug_assert_eq!(self.trace.customers[class].len() as u64, j - 1);
        self.trace.customers[class].push(record);
        self.record(t, EventKind::Arrival(action), Some(class), Some(j));
        self.schedule_arrival(t, class, j + 1);
    }

    fn on_departure(&mut self, t: f64, server: usize) {
        let (class, j) = self.servers[server].take().expect("departure from a busy server");
        self.state[class].in_service -= 1;
        self.state[class].departed += 1;
        let queues: Vec<u64> = self.state.iter().map(|c| c.queue).collect();
        match self.policy.next_class(&queues) {
            Some(next) => {
                let nj = self.waiting[next].pop_front().expect("non-empty buffer");
                let s = &mut self.state[next];
                s.queue -= 1;
                s.routed += 1;
                let rec = &mut self.trace.customers[next][(nj - 1) as usize];
                rec.routed = Some(t);
                if !rec.post_horizon {
                    self.pending_before_horizon -= 1;
                }
                let work = self.primitives.workload(next, nj);
                self.start_service(t, next, Some(nj), work, server);
            }
            None => self.idle.push(Reverse(server)),
        }
        self.record(t, EventKind::Departure, Some(class), j);
    }
}

/// Simulates one scenario with the keyed primitives of `(seed, replication)`.
pub fn run(
    model: &Model,
    policy: Policy,
    scenario: Scenario,
    n: u64,
    horizon: f64,
    seed: u64,
    replication: u64,
) -> Result<EventTrace, EngineError> {
    let primitives = KeyedPrimitives::new(model, seed, replication);
    run_with(model, policy, scenario, n, horizon, &primitives, &SimOptions::default())
}

/// Simulates one scenario on arbitrary primitives.
pub fn run_with(
    model: &Model,
    policy: Policy,
    scenario: Scenario,
    n: u64,
    horizon: f64,
    primitives: &impl Primitives,
    options: &SimOptions,
) -> Result<EventTrace, EngineError> {
    let classes = model.num_classes();
    if n == 0 {
        return Err(EngineError::InvalidArgument("n must be at least 1".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(EngineError::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if let Scenario::Deviator { class, j } = scenario {
        if class >= classes || j == 0 {
            return Err(EngineError::InvalidScenario(format!(
                "deviator (class {}, j {j}) outside 1..={classes} x 1..",
                class + 1
            )));
        }
    }
    if policy == Policy::Slq {
        model.require_ordered_thresholds()?;
    }
    let rates = (0..classes)
        .map(|i| model.arrival_rate_n(i, n))
        .collect::<Result<Vec<_>, _>>()?;
    let initial: Vec<u64> = match &options.initial {
        InitialCondition::Balanced => model.rho().iter().map(|r| (r * n as f64).floor() as u64).collect(),
        InitialCondition::Empty => vec![0; classes],
        InitialCondition::InService(v) => {
            if v.len() != classes || v.iter().sum::<u64>() > n {
                return Err(EngineError::InvalidArgument(format!(
                    "initial in-service counts {v:?} do not fit {classes} classes and {n} servers"
                )));
            }
            v.clone()
        }
    };
    let drain_cap = options.drain_cap.unwrap_or(10.0 * horizon);

    let servers = n as usize;
    let mut sim = Sim {
        model,
        policy,
        scenario,
        n,
        horizon,
        primitives,
        rates,
        events: BinaryHeap::new(),
        state: vec![ClassCounts::default(); classes],
        waiting: vec![VecDeque::new(); classes],
        servers: vec![None; servers],
        idle: BinaryHeap::new(),
        pending_before_horizon: 0,
        trace: EventTrace {
            n,
            policy,
            scenario,
            num_classes: classes,
            horizon,
            end_time: horizon,
            initial_in_service: initial.clone(),
            rows: Vec::new(),
            counts: Vec::new(),
            customers: vec![Vec::new(); classes],
        },
    };

    let mut server = 0;
    for (class, &count) in initial.iter().enumerate() {
        for k in 1..=count {
            let work = primitives.initial_workload(class, k);
            sim.start_service(0.0, class, None, work, server);
            server += 1;
        }
    }
    sim.idle.extend((server..servers).map(Reverse));
    sim.record(0.0, EventKind::Init, None, None);
    for class in 0..classes {
        sim.schedule_arrival(0.0, class, 1);
    }

    while let Some(&Reverse(ev)) = sim.events.peek() {
        if ev.t > horizon && sim.pending_before_horizon == 0 {
            break;
        }
        if ev.t > horizon + drain_cap {
            return Err(EngineError::DrainTimeout { t: ev.t });
        }
        sim.events.pop();
        match ev.payload {
            Payload::Arrival { class, j } => sim.on_arrival(ev.t, class, j),
            Payload::Departure { server } => sim.on_departure(ev.t, server),
        }
        debug_assert!(
            sim.state.iter().all(|c| c.queue == 0) || sim.idle.is_empty(),
            "non-idling violated at t = {}",
            ev.t
        );
    }

    let mut trace = sim.trace;
    trace.end_time = trace.rows.last().map_or(horizon, |r| r.t).max(horizon);
    Ok(trace)
}

/// Runs the reference scenario and the scenario where `(class, j)` deviates,
/// on identical primitives.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    model: &Model,
    policy: Policy,
    n: u64,
    horizon: f64,
    seed: u64,
    replication: u64,
    class: usize,
    j: u64,
) -> Result<(EventTrace, EventTrace), EngineError> {
    let reference = run(model, policy, Scenario::Reference, n, horizon, seed, replication)?;
    let arrived = reference.customer(class, j).is_some_and(|c| !c.post_horizon);
    if !arrived {
        return Err(EngineError::DeviatorNotArrived { class, j });
    }
    let deviator = run(model, policy, Scenario::Deviator { class, j }, n, horizon, seed, replication)?;
    Ok((reference, deviator))
}

/// Outcome of [`check_trace`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceCheck {
    pub events: usize,
    pub violations: Vec<String>,
}

impl TraceCheck {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-derives the dynamic invariants from the recorded rows alone: balance
/// equations, server capacity, non-idling, routing legality for the
/// trace's policy and the queue ceiling implied by the threshold rule.
pub fn check_trace(trace: &EventTrace, model: &Model) -> TraceCheck {
    let mut out = TraceCheck::default();
    let n = trace.n;
    let sqrt_n = (n as f64).sqrt();
    let slack = match trace.scenario {
        Scenario::Reference => 1.0,
        Scenario::Deviator { .. } => 2.0,
    };
    for k in 0..trace.rows.len() {
        let t = trace.rows[k].t;
        let state = trace.state(k);
        out.events += 1;
        for (i, c) in state.iter().enumerate() {
            if c.queue as i128 != c.arrived as i128 - c.routed as i128 - c.reneged as i128 {
                out.violations.push(format!("t={t}: queue balance fails for class {}", i + 1));
            }
            if c.in_service as i128
                != trace.initial_in_service[i] as i128 + c.routed as i128 - c.departed as i128
            {
                out.violations.push(format!("t={t}: service balance fails for class {}", i + 1));
            }
            if c.arrived != c.joined + c.reneged {
                out.violations.push(format!("t={t}: arrivals != joins + reneges for class {}", i + 1));
            }
            let ceiling = sqrt_n * model.theta(i) + slack + 1e-9;
            if c.queue as f64 > ceiling {
                out.violations.push(format!(
                    "t={t}: Q_{} = {} above ceiling {ceiling}",
                    i + 1,
                    c.queue
                ));
            }
        }
        let busy: u64 = state.iter().map(|c| c.in_service).sum();
        let queued: u64 = state.iter().map(|c| c.queue).sum();
        if busy > n {
            out.violations.push(format!("t={t}: {busy} busy servers > n = {n}"));
        }
        if queued > 0 && busy != n {
            out.violations.push(format!("t={t}: non-idling fails ({queued} queued, {busy} busy)"));
        }
        if k == 0 {
            continue;
        }
        let before = trace.state(k - 1);
        for (i, (c, p)) in state.iter().zip(before).enumerate() {
            if c.routed <= p.routed {
                continue;
            }
            let legal = match trace.policy {
                Policy::Fp => before[..i].iter().all(|b| b.queue == 0),
                Policy::Slq => before.iter().all(|b| b.queue <= p.queue),
            };
            if !legal {
                out.violations.push(format!(
                    "t={t}: class {} routed against {} with queues {:?}",
                    i + 1,
                    trace.policy,
                    before.iter().map(|b| b.queue).collect::<Vec<_>>()
                ));
            }
        }
    }
    out
}
