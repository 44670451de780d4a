//! Heavy-traffic scaling harness and the limiting reflected Brownian
//! motion.
//!
//! A [`HeavyTrafficSequence`] produces one LPS configuration per scaling
//! parameter `r` with `r(1 - ρ^r) = θ` and `K^r ≈ rK`. Trajectories are
//! viewed under the diffusion scaling (space `1/r`, time `r²`) or the
//! shifted fluid scaling (space `1/r`, time `r`, shifted by `rm`). The
//! state-space collapse statistic measures how far the diffusion scaled
//! descriptor is from the lifted image of its workload.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::distributions::{DistributionError, DistributionSpec};
use crate::fluid::{lift, FluidError};
use crate::measures::{prohorov_bound_from_tails, prohorov_distance, Measure, MeasureError};
use crate::numeric::{median, quantile_sorted};
use crate::simulator::{run, LpsConfig, SimulationError, SystemTrajectory};
use crate::streams::{child_seed, substream, StreamRng};

/// Quantile levels compared by [`workload_limit_check`].
pub const QUANTILE_LEVELS: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

/// Bisection tolerance of the Prohorov metric in the collapse statistic.
pub const SSC_METRIC_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

fn positive(name: &str, v: f64) -> Result<(), LimitsError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(LimitsError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Mean-one interarrival law with squared coefficient of variation `c2`.
///
/// `0` is deterministic, `1` exponential, `c2 > 1` a balanced-means
/// two-phase hyperexponential and any other value a lognormal (truncated
/// far in the tail, so its variability matches `c2` to about 1e-6).
pub fn interarrival_law(c2: f64) -> Result<DistributionSpec, LimitsError> {
    if !(c2.is_finite() && c2 >= 0.0) {
        return Err(LimitsError::InvalidParameter(format!("arrival SCV must be finite and nonnegative, got {c2}")));
    }
    let spec = if c2 == 0.0 {
        DistributionSpec::deterministic(1.0)?
    } else if c2 == 1.0 {
        DistributionSpec::exponential(1.0)?
    } else if c2 > 1.0 {
        let p1 = 0.5 * (1.0 + ((c2 - 1.0) / (c2 + 1.0)).sqrt());
        let p2 = 1.0 - p1;
        DistributionSpec::hyperexponential(vec![p1, p2], vec![2.0 * p1, 2.0 * p2])?
    } else {
        let s2 = (1.0 + c2).ln();
        DistributionSpec::lognormal(-0.5 * s2, s2.sqrt())?.with_mean(1.0)?
    };
    Ok(spec)
}

/// Sequence of LPS systems approaching critical load.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTrafficSequence {
    pub theta: f64,
    /// Limit of `K^r / r`.
    pub k_limit: f64,
    pub base_service: DistributionSpec,
    /// Mean-one interarrival law; rescaled to mean `1/λ^r` for each `r`.
    pub base_arrival: DistributionSpec,
    pub r_values: Vec<f64>,
}

impl HeavyTrafficSequence {
    pub fn new(
        theta: f64,
        k_limit: f64,
        base_service: DistributionSpec,
        base_arrival_scv: f64,
        r_values: Vec<f64>,
    ) -> Result<Self, LimitsError> {
        Self::with_arrival_law(theta, k_limit, base_service, interarrival_law(base_arrival_scv)?, r_values)
    }

    pub fn with_arrival_law(
        theta: f64,
        k_limit: f64,
        base_service: DistributionSpec,
        arrival: DistributionSpec,
        r_values: Vec<f64>,
    ) -> Result<Self, LimitsError> {
        positive("theta", theta)?;
        positive("K", k_limit)?;
        if r_values.is_empty() {
            return Err(LimitsError::InvalidParameter("at least one r is required".into()));
        }
        for pair in r_values.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(LimitsError::InvalidParameter("r values must be strictly ascending".into()));
            }
        }
        for &r in &r_values {
            positive("r", r)?;
            if r <= theta {
                return Err(LimitsError::InvalidParameter(format!("r = {r} must exceed theta = {theta} for a stable system")));
            }
        }
        let base_arrival = arrival.with_mean(1.0)?;
        Ok(Self { theta, k_limit, base_service, base_arrival, r_values })
    }

    pub fn base_arrival_scv(&self) -> f64 {
        self.base_arrival.scv()
    }

    /// `λ^r = (1 - θ/r)/β`.
    pub fn lambda(&self, r: f64) -> f64 {
        (1.0 - self.theta / r) / self.base_service.beta()
    }

    /// `K^r = round(rK)`, at least one.
    pub fn k_r(&self, r: f64) -> usize {
        ((r * self.k_limit).round() as usize).max(1)
    }

    pub fn rho(&self, r: f64) -> f64 {
        1.0 - self.theta / r
    }

    /// `r(1 - ρ^r)`, equal to `θ` up to rounding.
    pub fn heavy_traffic_gap(&self, r: f64) -> f64 {
        r * (1.0 - self.rho(r))
    }

    /// Variance `β(c_a² + c_s²)` of the limiting workload.
    pub fn sigma2(&self) -> f64 {
        self.base_service.beta() * (self.base_arrival_scv() + self.base_service.scv())
    }

    pub fn arrival_law(&self, r: f64) -> Result<DistributionSpec, LimitsError> {
        Ok(self.base_arrival.with_mean(1.0 / self.lambda(r))?)
    }

    /// Empty system for index `r` run to `horizon`.
    pub fn config(&self, r: f64, horizon: f64, seed: u64, replication: u64) -> Result<LpsConfig, LimitsError> {
        let mut cfg = LpsConfig::new(self.k_r(r), Some(self.arrival_law(r)?), self.base_service.clone(), horizon, seed);
        cfg.replication = replication;
        Ok(cfg)
    }

    /// Initial jobs for index `r` carrying scaled workload `w0`.
    ///
    /// Lifted starts place `round(r q*)` jobs with sizes from `ν` in the
    /// buffer and `round(r z*)` jobs with residuals from `ν_e` in service,
    /// where `(q*, z*)` are the masses of the lifted state, then rescale all
    /// sizes so the workload is exactly `r w0`. Non-lifted starts put the
    /// whole workload on a single job in service.
    pub fn initial_jobs(&self, r: f64, w0: f64, lifted: bool, rng: &mut StreamRng) -> Result<(Vec<f64>, Vec<f64>), LimitsError> {
        if !(w0.is_finite() && w0 >= 0.0) {
            return Err(LimitsError::InvalidParameter(format!("w0 must be finite and nonnegative, got {w0}")));
        }
        if w0 == 0.0 {
            return Ok((Vec::new(), Vec::new()));
        }
        if !lifted {
            return Ok((Vec::new(), vec![r * w0]));
        }
        let spec = &self.base_service;
        let kbe = self.k_limit * spec.beta_e();
        let k_r = self.k_r(r);
        let nq = (r * (w0 - kbe).max(0.0) / spec.beta()).round() as usize;
        let mut nz = ((r * w0.min(kbe) / spec.beta_e()).round() as usize).clamp(1, k_r);
        if nq > 0 {
            nz = k_r;
        }
        let mut buffer: Vec<f64> = (0..nq).map(|_| spec.sample(rng)).collect();
        let mut server: Vec<f64> = (0..nz).map(|_| spec.sample_equilibrium(rng)).collect();
        let total: f64 = buffer.iter().chain(&server).sum();
        let c = r * w0 / total;
        buffer.iter_mut().chain(server.iter_mut()).for_each(|v| *v *= c);
        Ok((buffer, server))
    }
}

/// Scaled descriptor at one time: measures with masses divided by `r` and
/// the scaled scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledState {
    pub buffer: Measure,
    pub server: Measure,
    pub q: f64,
    pub z: f64,
    pub x: f64,
    pub w: f64,
}

fn scaled_at(traj: &SystemTrajectory, r: f64, time: f64) -> Result<ScaledState, LimitsError> {
    positive("r", r)?;
    let (buffer, server) = traj.snapshot(time)?;
    let ev = traj.event_at(time);
    Ok(ScaledState {
        buffer: buffer.scale(1.0 / r)?,
        server: server.scale(1.0 / r)?,
        q: ev.q as f64 / r,
        z: ev.z as f64 / r,
        x: ev.x() as f64 / r,
        w: traj.workload(time) / r,
    })
}

/// Diffusion scaling: the state at time `r²t` with masses divided by `r`.
pub fn diffusion_scale(traj: &SystemTrajectory, r: f64, t: f64) -> Result<ScaledState, LimitsError> {
    scaled_at(traj, r, r * r * t)
}

/// Shifted fluid scaling: the state at time `rm + rt` with masses divided
/// by `r`.
pub fn shifted_fluid_scale(traj: &SystemTrajectory, r: f64, m: u64, t: f64) -> Result<ScaledState, LimitsError> {
    if !(t >= 0.0) {
        return Err(LimitsError::InvalidParameter(format!("t must be nonnegative, got {t}")));
    }
    scaled_at(traj, r, r * m as f64 + r * t)
}

/// Product Prohorov distance between `(buffer, server)` and the lifted
/// state with workload `w`.
///
/// A component whose tail bound is already at most `floor` is not
/// evaluated exactly and reports `0`; pass `0` to force exact values.
pub fn ssc_state_distance(
    buffer: &Measure,
    server: &Measure,
    w: f64,
    k: f64,
    spec: &DistributionSpec,
    floor: f64,
) -> Result<f64, LimitsError> {
    let (xi, mu) = lift(w, k, spec)?;
    let mut d: f64 = 0.0;
    for (a, b) in [(buffer, &xi), (server, &mu)] {
        if floor > 0.0 && prohorov_bound_from_tails(a, b).is_ok_and(|bound| bound <= floor.max(d)) {
            continue;
        }
        d = d.max(prohorov_distance(a, b, SSC_METRIC_TOL));
    }
    Ok(d)
}

/// `sup_t d((𝓑̂(t), 𝓢̂(t)), Δ_{K,ν} Ŵ(t))` over the grid `0, dt, …, T`.
///
/// `Ŵ` is read from the simulated workload. Grid points whose tail bound
/// cannot exceed the running supremum skip the exact metric.
pub fn ssc_statistic(
    traj: &SystemTrajectory,
    r: f64,
    spec: &DistributionSpec,
    k_limit: f64,
    t_end: f64,
    grid_dt: f64,
) -> Result<f64, LimitsError> {
    positive("grid step", grid_dt)?;
    if !(t_end >= 0.0) {
        return Err(LimitsError::InvalidParameter(format!("T must be nonnegative, got {t_end}")));
    }
    let n = (t_end / grid_dt).round().max(0.0) as usize;
    let mut sup: f64 = 0.0;
    for i in 0..=n {
        let t = if i == n { t_end } else { i as f64 * grid_dt };
        let s = diffusion_scale(traj, r, t)?;
        sup = sup.max(ssc_state_distance(&s.buffer, &s.server, s.w, k_limit, spec, sup)?);
    }
    Ok(sup)
}

/// Collapse statistics of `reps` replications per `r`, started from
/// lifted (or deliberately non-lifted) states with scaled workload `w0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SscReport {
    pub r_values: Vec<f64>,
    /// `stats[i][rep]` for `r_values[i]`.
    pub stats: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
}

impl SscReport {
    /// CSV with columns `r,replication,stat_name,value`; per-`r` medians
    /// use the replication label `all`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "replication", "stat_name", "value"])?;
        for (i, r) in self.r_values.iter().enumerate() {
            for (rep, v) in self.stats[i].iter().enumerate() {
                w.write_record([r.to_string(), rep.to_string(), "ssc".into(), v.to_string()])?;
            }
            w.write_record([r.to_string(), "all".into(), "ssc_median".into(), self.medians[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Options shared by the Monte Carlo harnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessOptions {
    pub t_end: f64,
    pub reps: usize,
    pub w0: f64,
    pub lifted: bool,
    pub seed: u64,
}

fn simulate_scaled(
    seq: &HeavyTrafficSequence,
    r: f64,
    opts: &HarnessOptions,
    rep: usize,
) -> Result<SystemTrajectory, LimitsError> {
    let horizon = r * r * opts.t_end;
    let seed = child_seed(opts.seed, &format!("r/{r}"));
    let mut cfg = seq.config(r, horizon, seed, rep as u64)?;
    let (buffer, server) = seq.initial_jobs(r, opts.w0, opts.lifted, &mut substream(seed, &format!("init/{rep}")))?;
    cfg.initial_buffer = buffer;
    cfg.initial_service = server;
    Ok(run(&cfg)?)
}

pub fn ssc_experiment(seq: &HeavyTrafficSequence, opts: &HarnessOptions, grid_dt: f64) -> Result<SscReport, LimitsError> {
    positive("T", opts.t_end)?;
    let mut stats = Vec::new();
    for &r in &seq.r_values {
        let row = (0..opts.reps)
            .into_par_iter()
            .map(|rep| {
                let traj = simulate_scaled(seq, r, opts, rep)?;
                ssc_statistic(&traj, r, &seq.base_service, seq.k_limit, opts.t_end, grid_dt)
            })
            .collect::<Result<Vec<_>, _>>()?;
        stats.push(row);
    }
    let medians = stats.iter().map(|s| median(s)).collect();
    Ok(SscReport { r_values: seq.r_values.clone(), stats, medians })
}

/// The map `w ↦ (w - Kβ_e)⁺/β + (w ∧ Kβ_e)/β_e` from workload to system
/// size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseMap {
    pub k: f64,
    pub beta: f64,
    pub beta_e: f64,
}

impl PiecewiseMap {
    pub fn new(k: f64, spec: &DistributionSpec) -> Self {
        Self { k, beta: spec.beta(), beta_e: spec.beta_e() }
    }

    /// The lower branch is written `K·(w/Kβ_e)` so both branches give
    /// exactly `K` at the kink.
    pub fn apply(&self, w: f64) -> f64 {
        let kbe = self.k * self.beta_e;
        if w <= kbe {
            self.k * (w / kbe)
        } else {
            self.k + (w - kbe) / self.beta
        }
    }

    pub fn kink(&self) -> f64 {
        self.k * self.beta_e
    }
}

pub fn piecewise_map(w: f64, k: f64, spec: &DistributionSpec) -> f64 {
    PiecewiseMap::new(k, spec).apply(w)
}

/// Discretisation of the reflected Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RbmScheme {
    /// `W_{n+1} = max(W_n - θΔ + σ√Δ ξ_n, 0)`.
    #[default]
    Euler,
    /// Exact transition: the free increment and the minimum of its Brownian
    /// bridge are drawn jointly, so the chain has the law of the RBM
    /// sampled on the grid for any step.
    ExactReflection,
}

/// Step rule `min(1e-3, (β_e/(10θ))²)`.
pub fn rbm_dt(theta: f64, spec: &DistributionSpec) -> f64 {
    (1e-3f64).min((spec.beta_e() / (10.0 * theta)).powi(2))
}

/// Drift `-θ`, variance `σ²` and start `w0` of a reflected Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbmParams {
    pub theta: f64,
    pub sigma2: f64,
    pub w0: f64,
}

impl RbmParams {
    fn validate(&self) -> Result<(), LimitsError> {
        if !(self.theta.is_finite() && self.sigma2.is_finite() && self.sigma2 >= 0.0 && self.w0.is_finite() && self.w0 >= 0.0) {
            return Err(LimitsError::InvalidParameter(format!("invalid RBM parameters {self:?}")));
        }
        Ok(())
    }

    fn step<R: Rng + ?Sized>(&self, w: f64, h: f64, scheme: RbmScheme, rng: &mut R) -> f64 {
        let xi: f64 = rng.sample(StandardNormal);
        let x = -self.theta * h + (self.sigma2 * h).sqrt() * xi;
        match scheme {
            RbmScheme::Euler => (w + x).max(0.0),
            RbmScheme::ExactReflection => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let m = 0.5 * (x - (x * x - 2.0 * self.sigma2 * h * u.ln()).sqrt());
                (w + x).max(x - m).max(0.0)
            }
        }
    }
}

/// Grid path of the workload RBM and the mapped system size.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmPath {
    pub dt: f64,
    pub t_end: f64,
    pub params: RbmParams,
    pub w_star: Vec<f64>,
    pub x_star: Vec<f64>,
}

impl RbmPath {
    /// Time of grid point `i`; the last step is shortened to end at `T`.
    pub fn time(&self, i: usize) -> f64 {
        (i as f64 * self.dt).min(self.t_end)
    }

    pub fn terminal(&self) -> f64 {
        *self.w_star.last().expect("nonempty path")
    }

    /// Time average of `W*` by the trapezoid rule.
    pub fn time_average(&self) -> f64 {
        if self.t_end == 0.0 {
            return self.w_star[0];
        }
        let mut area = 0.0;
        for i in 1..self.w_star.len() {
            area += 0.5 * (self.w_star[i - 1] + self.w_star[i]) * (self.time(i) - self.time(i - 1));
        }
        area / self.t_end
    }

    /// CSV with columns `t,W_star,X_star`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "W_star", "X_star"])?;
        for i in 0..self.w_star.len() {
            w.write_record([self.time(i).to_string(), self.w_star[i].to_string(), self.x_star[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn step_count(t_end: f64, dt: f64) -> Result<usize, LimitsError> {
    positive("dt", dt)?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(LimitsError::InvalidParameter(format!("T must be finite and nonnegative, got {t_end}")));
    }
    Ok((t_end / dt * (1.0 - 1e-12)).ceil() as usize)
}

/// Euler path of the reflected Brownian motion on `[0, T]`, drawn from the
/// substream `rbm/0` of `seed`.
pub fn simulate_rbm(params: RbmParams, t_end: f64, dt: f64, seed: u64, map: &PiecewiseMap) -> Result<RbmPath, LimitsError> {
    simulate_rbm_with(params, t_end, dt, RbmScheme::Euler, &mut substream(seed, "rbm/0"), map)
}

pub fn simulate_rbm_with<R: Rng + ?Sized>(
    params: RbmParams,
    t_end: f64,
    dt: f64,
    scheme: RbmScheme,
    rng: &mut R,
    map: &PiecewiseMap,
) -> Result<RbmPath, LimitsError> {
    params.validate()?;
    let n = step_count(t_end, dt)?;
    let mut w_star = Vec::with_capacity(n + 1);
    w_star.push(params.w0);
    let mut w = params.w0;
    for i in 0..n {
        let h = ((i + 1) as f64 * dt).min(t_end) - i as f64 * dt;
        w = params.step(w, h, scheme, rng);
        w_star.push(w);
    }
    let x_star = w_star.iter().map(|&w| map.apply(w)).collect();
    Ok(RbmPath { dt, t_end, params, w_star, x_star })
}

/// `W*(T)` without storing the path.
pub fn rbm_terminal<R: Rng + ?Sized>(params: RbmParams, t_end: f64, dt: f64, scheme: RbmScheme, rng: &mut R) -> Result<f64, LimitsError> {
    params.validate()?;
    let n = step_count(t_end, dt)?;
    let mut w = params.w0;
    for i in 0..n {
        let h = ((i + 1) as f64 * dt).min(t_end) - i as f64 * dt;
        w = params.step(w, h, scheme, rng);
    }
    Ok(w)
}

/// Settings of the workload limit comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadLimitOptions {
    pub harness: HarnessOptions,
    /// Number of reference RBM paths, drawn from substreams `rbm/<i>`.
    pub rbm_paths: usize,
    /// RBM step; `None` applies [`rbm_dt`].
    pub dt: Option<f64>,
}

/// Empirical quantiles of `Ŵ(T)` per `r` against RBM quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadLimitReport {
    pub r_values: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub quantiles: Vec<[f64; 5]>,
    pub rbm_quantiles: [f64; 5],
    /// Largest quantile gap per `r`.
    pub gaps: Vec<f64>,
}

impl WorkloadLimitReport {
    pub fn gaps_nonincreasing(&self) -> bool {
        self.gaps.windows(2).all(|g| g[1] <= g[0])
    }

    /// CSV with columns `r,replication,stat_name,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "replication", "stat_name", "value"])?;
        for (i, r) in self.r_values.iter().enumerate() {
            for (rep, v) in self.samples[i].iter().enumerate() {
                w.write_record([r.to_string(), rep.to_string(), "W_hat".into(), v.to_string()])?;
            }
            for (j, p) in QUANTILE_LEVELS.iter().enumerate() {
                let pct = (p * 100.0).round();
                w.write_record([r.to_string(), "all".into(), format!("q{pct}"), self.quantiles[i][j].to_string()])?;
                w.write_record([r.to_string(), "all".into(), format!("rbm_q{pct}"), self.rbm_quantiles[j].to_string()])?;
            }
            w.write_record([r.to_string(), "all".into(), "max_gap".into(), self.gaps[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn quantiles_of(mut v: Vec<f64>) -> [f64; 5] {
    v.sort_by(f64::total_cmp);
    QUANTILE_LEVELS.map(|p| quantile_sorted(&v, p))
}

/// Compare `Ŵ(T)` with the reflected Brownian motion started at `w0` with
/// drift `-θ` and variance `β(c_a² + c_s²)`.
pub fn workload_limit_check(seq: &HeavyTrafficSequence, opts: &WorkloadLimitOptions) -> Result<WorkloadLimitReport, LimitsError> {
    let h = &opts.harness;
    if h.reps == 0 || opts.rbm_paths == 0 {
        return Err(LimitsError::InvalidParameter("replication counts must be positive".into()));
    }
    let params = RbmParams { theta: seq.theta, sigma2: seq.sigma2(), w0: h.w0 };
    let dt = opts.dt.unwrap_or_else(|| rbm_dt(seq.theta, &seq.base_service));
    let reference = (0..opts.rbm_paths)
        .into_par_iter()
        .map(|i| rbm_terminal(params, h.t_end, dt, RbmScheme::Euler, &mut substream(h.seed, &format!("rbm/{i}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let rbm_quantiles = quantiles_of(reference);
    let mut samples = Vec::new();
    for &r in &seq.r_values {
        let row = (0..h.reps)
            .into_par_iter()
            .map(|rep| {
                if h.t_end == 0.0 {
                    let seed = child_seed(h.seed, &format!("r/{r}"));
                    let (b, s) = seq.initial_jobs(r, h.w0, h.lifted, &mut substream(seed, &format!("init/{rep}")))?;
                    return Ok(b.iter().chain(&s).sum::<f64>() / r);
                }
                let traj = simulate_scaled(seq, r, h, rep)?;
                Ok(traj.workload(r * r * h.t_end) / r)
            })
            .collect::<Result<Vec<_>, LimitsError>>()?;
        samples.push(row);
    }
    let quantiles: Vec<[f64; 5]> = samples.iter().map(|s| quantiles_of(s.clone())).collect();
    let gaps = quantiles
        .iter()
        .map(|q| q.iter().zip(&rbm_quantiles).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    Ok(WorkloadLimitReport { r_values: seq.r_values.clone(), samples, quantiles, rbm_quantiles, gaps })
}

/// Largest deviations of windowed empirical measures from their means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcReport {
    /// Over the indicator class `1_{(y,∞)}`, `1_{[y,∞)}`.
    pub tail: f64,
    /// Over `χ^{1+p}` and `χ^{2+p}`.
    pub moment: f64,
}

impl GcReport {
    pub fn sup(&self) -> f64 {
        self.tail.max(self.moment)
    }
}

/// Windows of the empirical measure `η̄(n, l) = (1/r) Σ_{rn < i ≤ r(n+l)} δ_{v_i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcOptions {
    /// Window starts `n` range over `[0, n_range]`.
    pub n_range: f64,
    /// Window lengths `l` range over `[0, l1]`.
    pub l1: f64,
    /// Grid points per axis.
    pub grid: usize,
    pub seed: u64,
}

/// Sup of `|⟨f, η̄(n, l)⟩ - l⟨f, ν⟩|` over the tail and moment classes and
/// a grid of windows, for i.i.d. sizes `v_i ~ ν` from the substream
/// `gc/<r>`.
pub fn empirical_measure_diagnostic(spec: &DistributionSpec, r: f64, opts: &GcOptions) -> Result<GcReport, LimitsError> {
    positive("r", r)?;
    if !(opts.n_range >= 0.0 && opts.l1 >= 0.0 && opts.grid > 0) {
        return Err(LimitsError::InvalidParameter("window ranges must be nonnegative and the grid nonempty".into()));
    }
    let n_total = (r * (opts.n_range + opts.l1)).floor() as usize + 1;
    let mut rng = substream(opts.seed, &format!("gc/{r}"));
    let v: Vec<f64> = (0..n_total).map(|_| spec.sample(&mut rng)).collect();
    let p = spec.p();
    let powers = [1.0 + p, 2.0 + p];
    let means = [spec.moment(powers[0])?, spec.moment(powers[1])?];
    let mut prefix = vec![[0.0; 2]; n_total + 1];
    for (i, &x) in v.iter().enumerate() {
        prefix[i + 1] = [prefix[i][0] + x.powf(powers[0]), prefix[i][1] + x.powf(powers[1])];
    }
    let nu = spec.nu();
    let atoms: Vec<f64> = nu.atoms().iter().map(|a| a.0).collect();
    let mut report = GcReport { tail: 0.0, moment: 0.0 };
    for i in 0..=opts.grid {
        let n = opts.n_range * i as f64 / opts.grid as f64;
        for j in 0..=opts.grid {
            let l = opts.l1 * j as f64 / opts.grid as f64;
            let lo = (r * n).floor() as usize;
            let hi = ((r * (n + l)).floor() as usize).min(n_total);
            for f in 0..2 {
                let dev = ((prefix[hi][f] - prefix[lo][f]) / r - l * means[f]).abs();
                report.moment = report.moment.max(dev);
            }
            let mut window = v[lo..hi].to_vec();
            window.sort_by(f64::total_cmp);
            let count = window.len() as f64;
            // y < 0: both tails are the full mass
            report.tail = report.tail.max((count / r - l * nu.total_mass()).abs());
            for &y in window.iter().chain(&atoms) {
                let below = window.partition_point(|&x| x < y) as f64;
                let at_most = window.partition_point(|&x| x <= y) as f64;
                let open = ((count - at_most) / r - l * nu.tail(y)).abs();
                let closed = ((count - below) / r - l * nu.tail_closed(y)).abs();
                report.tail = report.tail.max(open).max(closed);
            }
        }
    }
    Ok(report)
}
