//! Event-driven simulation of the G/GI/1 queue under limited processor
//! sharing with sharing limit `K`.
//!
//! At most `K` jobs share the server equally; the rest wait in a FCFS
//! buffer. The engine keeps a virtual service clock `S(t) = ∫ 1/Z(τ) dτ`
//! and stores for each job in service the clock value at which it
//! finishes, so every event costs `O(log n)`.
//!
//! Ties: departures due at the same clock value leave in ascending job
//! index, and a departure scheduled at the same instant as an arrival is
//! processed first.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use thiserror::Error;

use crate::distributions::DistributionSpec;
use crate::measures::{Measure, MeasureError};
use crate::numeric::KahanSum;
use crate::streams::substream;

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("the sharing limit K must be at least 1")]
    InvalidK,
    #[error("inconsistent initial state: {0}")]
    InconsistentInitialState(String),
    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Configuration of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct LpsConfig {
    pub k: usize,
    /// Interarrival law of the renewal arrival process; `None` means no
    /// arrivals after time 0.
    pub arrival: Option<DistributionSpec>,
    pub service: DistributionSpec,
    /// Sizes of the initially buffered jobs, head of the queue first.
    pub initial_buffer: Vec<f64>,
    /// Residual sizes of the jobs initially in service.
    pub initial_service: Vec<f64>,
    pub horizon: f64,
    pub seed: u64,
    /// Replication index selecting the substreams `arrivals/<rep>` and
    /// `sizes/<rep>`.
    pub replication: u64,
    pub snapshot_times: Vec<f64>,
}

impl LpsConfig {
    pub fn new(k: usize, arrival: Option<DistributionSpec>, service: DistributionSpec, horizon: f64, seed: u64) -> Self {
        Self {
            k,
            arrival,
            service,
            initial_buffer: Vec::new(),
            initial_service: Vec::new(),
            horizon,
            seed,
            replication: 0,
            snapshot_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.k == 0 {
            return Err(SimulationError::InvalidK);
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimulationError::InvalidHorizon(self.horizon));
        }
        if self.initial_service.len() > self.k {
            return Err(SimulationError::InconsistentInitialState(format!(
                "{} jobs in service exceed K = {}",
                self.initial_service.len(),
                self.k
            )));
        }
        if self.initial_service.len() < self.k && !self.initial_buffer.is_empty() {
            return Err(SimulationError::InconsistentInitialState("jobs wait while a service slot is free".into()));
        }
        if self.initial_buffer.iter().chain(&self.initial_service).any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(SimulationError::InconsistentInitialState("initial sizes must be positive and finite".into()));
        }
        for &t in &self.snapshot_times {
            if !(t >= 0.0 && t <= self.horizon) {
                return Err(SimulationError::OutOfHorizon { t, horizon: self.horizon });
            }
        }
        Ok(())
    }
}

/// One exogenous arrival: time and job size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub size: f64,
}

/// Arrivals in `(0, horizon]` drawn from the configured substreams.
pub fn generate_arrivals(config: &LpsConfig) -> Vec<Arrival> {
    let Some(arrival) = &config.arrival else {
        return Vec::new();
    };
    let mut inter = substream(config.seed, &format!("arrivals/{}", config.replication));
    let mut sizes = substream(config.seed, &format!("sizes/{}", config.replication));
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += arrival.sample(&mut inter);
        if t > config.horizon {
            return out;
        }
        out.push(Arrival { time: t, size: config.service.sample(&mut sizes) });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Init,
    Arrival,
    Departure,
    Admission,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Init => "init",
            EventKind::Arrival => "arrival",
            EventKind::Departure => "departure",
            EventKind::Admission => "admission",
        }
    }
}

/// State right after an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub job: i64,
    /// Arrivals in `(0, t]`.
    pub e: u64,
    /// Index of the last job admitted to service, `E - Q`.
    pub b: i64,
    pub q: usize,
    pub z: usize,
    pub w: f64,
    /// Cumulative service `S(t)`.
    pub service_clock: f64,
}

impl Event {
    pub fn x(&self) -> usize {
        self.q + self.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: i64,
    /// Size, or the residual size for jobs initially in service.
    pub size: f64,
    pub arrival_time: f64,
    pub service_start: Option<f64>,
    /// Service clock at which the job completes, once admitted.
    pub finish_clock: Option<f64>,
    pub departure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub buffer: Measure,
    pub server: Measure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemTrajectory {
    pub k: usize,
    pub horizon: f64,
    pub events: Vec<Event>,
    pub jobs: Vec<Job>,
    pub snapshots: Vec<Snapshot>,
    /// Number of initial jobs `X(0)`; job `id` sits at index `id + X(0) - 1`.
    pub initial_jobs: usize,
}

/// Service clock value ordered by `total_cmp`.
#[derive(Debug, Clone, Copy)]
struct Clock(f64);

impl PartialEq for Clock {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Clock {}

impl PartialOrd for Clock {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Clock {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Simulates with primitives drawn from the configured substreams.
pub fn run(config: &LpsConfig) -> Result<SystemTrajectory, SimulationError> {
    config.validate()?;
    run_with_arrivals(config, &generate_arrivals(config))
}

/// Simulates with explicit primitives; arrival times must be increasing.
pub fn run_with_arrivals(config: &LpsConfig, arrivals: &[Arrival]) -> Result<SystemTrajectory, SimulationError> {
    config.validate()?;
    let x0 = config.initial_service.len() + config.initial_buffer.len();
    let q0 = config.initial_buffer.len() as i64;
    let mut jobs: Vec<Job> = Vec::with_capacity(x0 + arrivals.len());
    let mut service: BTreeSet<(Clock, i64)> = BTreeSet::new();
    let mut buffer: VecDeque<usize> = VecDeque::new();
    let mut w = KahanSum::new(0.0);
    for (i, &v) in config.initial_service.iter().enumerate() {
        let id = i as i64 - x0 as i64 + 1;
        jobs.push(Job { id, size: v, arrival_time: 0.0, service_start: Some(0.0), finish_clock: Some(v), departure: None });
        service.insert((Clock(v), id));
        w.add(v);
    }
    for (i, &v) in config.initial_buffer.iter().enumerate() {
        let id = i as i64 - q0 + 1;
        jobs.push(Job { id, size: v, arrival_time: 0.0, service_start: None, finish_clock: None, departure: None });
        buffer.push_back(jobs.len() - 1);
        w.add(v);
    }
    let index_of = |id: i64| (id + x0 as i64 - 1) as usize;

    let mut t = 0.0_f64;
    let mut clock = KahanSum::new(0.0);
    let mut e: u64 = 0;
    let mut b: i64 = -q0;
    let mut events = Vec::new();
    let record = |events: &mut Vec<Event>, t: f64, kind, job, e, b, q: usize, z: usize, w: &mut KahanSum, clock: f64| {
        if q + z == 0 {
            w.set(0.0);
        }
        events.push(Event { time: t, kind, job, e, b, q, z, w: w.value().max(0.0), service_clock: clock });
    };
    record(&mut events, 0.0, EventKind::Init, 0, e, b, buffer.len(), service.len(), &mut w, 0.0);

    let mut next_arrival = 0;
    loop {
        let z = service.len();
        let dep = service.first().map(|&(Clock(f), _)| t + (f - clock.value()).max(0.0) * z as f64);
        let arr = arrivals.get(next_arrival).map(|a| a.time);
        let next = match (dep, arr) {
            (None, None) => f64::INFINITY,
            (Some(d), None) => d,
            (None, Some(a)) => a,
            (Some(d), Some(a)) => d.min(a),
        };
        if next > config.horizon {
            break;
        }
        // advance to the event time
        if z > 0 {
            clock.add((next - t) / z as f64);
            w.add(-(next - t));
        }
        t = next;

        if dep.is_some_and(|d| arr.is_none_or(|a| d <= a)) {
            let (Clock(f), _) = *service.first().expect("job in service");
            if clock.value() < f {
                clock.set(f);
            }
            let now = clock.value();
            let mut happened = Vec::new();
            while let Some(&(Clock(f), id)) = service.first() {
                if f > now + TIE_EPS {
                    break;
                }
                service.pop_first();
                jobs[index_of(id)].departure = Some(t);
                happened.push((EventKind::Departure, id));
            }
            while service.len() < config.k {
                let Some(idx) = buffer.pop_front() else { break };
                let job = &mut jobs[idx];
                job.service_start = Some(t);
                job.finish_clock = Some(now + job.size);
                service.insert((Clock(now + job.size), job.id));
                b += 1;
                happened.push((EventKind::Admission, job.id));
            }
            // every record of this instant carries the settled state
            for (kind, id) in happened {
                record(&mut events, t, kind, id, e, b, buffer.len(), service.len(), &mut w, now);
            }
        } else {
            let a = arrivals[next_arrival];
            next_arrival += 1;
            e += 1;
            let id = e as i64;
            w.add(a.size);
            jobs.push(Job { id, size: a.size, arrival_time: t, service_start: None, finish_clock: None, departure: None });
            let idx = jobs.len() - 1;
            let now = clock.value();
            if service.len() < config.k {
                jobs[idx].service_start = Some(t);
                jobs[idx].finish_clock = Some(now + a.size);
                service.insert((Clock(now + a.size), id));
                b += 1;
                record(&mut events, t, EventKind::Arrival, id, e, b, buffer.len(), service.len(), &mut w, now);
                record(&mut events, t, EventKind::Admission, id, e, b, buffer.len(), service.len(), &mut w, now);
            } else {
                buffer.push_back(idx);
                record(&mut events, t, EventKind::Arrival, id, e, b, buffer.len(), service.len(), &mut w, now);
            }
        }
    }

    let mut traj = SystemTrajectory { k: config.k, horizon: config.horizon, events, jobs, snapshots: Vec::new(), initial_jobs: x0 };
    let mut snaps = Vec::with_capacity(config.snapshot_times.len());
    for &st in &config.snapshot_times {
        let (buffer, server) = traj.snapshot(st)?;
        snaps.push(Snapshot { t: st, buffer, server });
    }
    traj.snapshots = snaps;
    Ok(traj)
}

impl SystemTrajectory {
    /// The last event at or before `t` (the state is right-continuous).
    pub fn event_at(&self, t: f64) -> &Event {
        let i = self.events.partition_point(|ev| ev.time <= t);
        &self.events[i.saturating_sub(1)]
    }

    fn check_time(&self, t: f64) -> Result<(), SimulationError> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(SimulationError::OutOfHorizon { t, horizon: self.horizon })
        }
    }

    pub fn queue_length(&self, t: f64) -> usize {
        self.event_at(t).q
    }

    pub fn in_service(&self, t: f64) -> usize {
        self.event_at(t).z
    }

    pub fn system_size(&self, t: f64) -> usize {
        self.event_at(t).x()
    }

    pub fn arrivals(&self, t: f64) -> u64 {
        self.event_at(t).e
    }

    pub fn admitted(&self, t: f64) -> i64 {
        self.event_at(t).b
    }

    /// Workload `W(t)`, decreasing at unit rate between events while busy.
    pub fn workload(&self, t: f64) -> f64 {
        let ev = self.event_at(t);
        if ev.x() == 0 {
            0.0
        } else {
            (ev.w - (t - ev.time)).max(0.0)
        }
    }

    /// Cumulative service `S(t)`.
    pub fn service_clock(&self, t: f64) -> f64 {
        let ev = self.event_at(t);
        if ev.z == 0 {
            ev.service_clock
        } else {
            ev.service_clock + (t - ev.time) / ev.z as f64
        }
    }

    /// `(𝓑(t), 𝓢(t))`: atoms at the sizes of buffered jobs and at the
    /// residual sizes of jobs in service, rebuilt from the job records and
    /// the service clock.
    pub fn snapshot(&self, t: f64) -> Result<(Measure, Measure), SimulationError> {
        self.check_time(t)?;
        let s = self.service_clock(t);
        let mut buffer = Vec::new();
        let mut server = Vec::new();
        for job in &self.jobs {
            if job.arrival_time > t {
                break;
            }
            if job.departure.is_some_and(|d| d <= t) {
                continue;
            }
            match job.service_start {
                Some(start) if start <= t => {
                    let residual = job.finish_clock.expect("admitted job has a finish clock") - s;
                    if residual > 0.0 {
                        server.push((residual, 1.0));
                    }
                }
                _ => buffer.push((job.size, 1.0)),
            }
        }
        Ok((Measure::from_atoms(buffer)?, Measure::from_atoms(server)?))
    }

    /// Time averages of `W` and `X` over `[0, horizon]`.
    pub fn time_averages(&self) -> (f64, f64) {
        let mut area_w = KahanSum::new(0.0);
        let mut area_x = KahanSum::new(0.0);
        for (i, ev) in self.events.iter().enumerate() {
            let end = self.events.get(i + 1).map_or(self.horizon, |n| n.time);
            let dt = end - ev.time;
            if dt <= 0.0 || ev.x() == 0 {
                continue;
            }
            let busy = dt.min(ev.w);
            area_w.add(ev.w * busy - 0.5 * busy * busy);
            area_x.add(ev.x() as f64 * dt);
        }
        (area_w.value() / self.horizon, area_x.value() / self.horizon)
    }

    /// Mean sojourn time of arrivals after time 0 that departed.
    pub fn mean_sojourn(&self) -> Option<f64> {
        let (sum, n) = self
            .jobs
            .iter()
            .filter(|j| j.id > 0)
            .filter_map(|j| j.departure.map(|d| d - j.arrival_time))
            .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// CSV with columns `t,kind,Q,Z,X,W`.
    pub fn write_trajectory_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "kind", "Q", "Z", "X", "W"])?;
        for ev in &self.events {
            w.write_record([
                ev.time.to_string(),
                ev.kind.as_str().to_string(),
                ev.q.to_string(),
                ev.z.to_string(),
                ev.x().to_string(),
                ev.w.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with columns `t,atom_location,weight,which`.
    pub fn write_snapshot_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "atom_location", "weight", "which"])?;
        for snap in &self.snapshots {
            for (which, m) in [("buffer", &snap.buffer), ("server", &snap.server)] {
                for &(loc, weight) in m.atoms() {
                    w.write_record([snap.t.to_string(), loc.to_string(), weight.to_string(), which.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Workload path from the Lindley recursion, independent of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LindleyPath {
    pub w0: f64,
    /// `(arrival time, workload just after the arrival)`.
    pub after_arrival: Vec<(f64, f64)>,
    pub horizon: f64,
}

impl LindleyPath {
    pub fn from_arrivals(w0: f64, arrivals: &[Arrival], horizon: f64) -> Self {
        let mut w = w0;
        let mut t = 0.0;
        let mut after_arrival = Vec::with_capacity(arrivals.len());
        for a in arrivals {
            w = (w - (a.time - t)).max(0.0) + a.size;
            t = a.time;
            after_arrival.push((t, w));
        }
        Self { w0, after_arrival, horizon }
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.after_arrival.partition_point(|p| p.0 <= t);
        let (t0, w) = if i == 0 { (0.0, self.w0) } else { self.after_arrival[i - 1] };
        (w - (t - t0)).max(0.0)
    }

    pub fn time_average(&self) -> f64 {
        let mut area = KahanSum::new(0.0);
        let mut start = (0.0, self.w0);
        for &(t, w) in self.after_arrival.iter().chain(std::iter::once(&(self.horizon, 0.0))) {
            let dt = t - start.0;
            let busy = dt.min(start.1);
            area.add(start.1 * busy - 0.5 * busy * busy);
            start = (t, w);
        }
        area.value() / self.horizon
    }
}

/// Lindley workload on the same primitives as [`run`].
///
/// Arrival laws with `ρ ≥ 1` still run; the time average then has no
/// stationary meaning.
pub fn workload_oracle(config: &LpsConfig) -> Result<LindleyPath, SimulationError> {
    config.validate()?;
    let w0 = config.initial_buffer.iter().chain(&config.initial_service).sum();
    Ok(LindleyPath::from_arrivals(w0, &generate_arrivals(config), config.horizon))
}
