//! Batch front-end behind the `lps` binary.
//!
//! Every subcommand reads a flat config of dotted `key=value` lines, applies
//! `--set` overrides, resolves defaults, rejects keys it did not consume and
//! then writes CSV files into the output directory. Each CSV starts with a
//! `#` header carrying the tool version, the seed and the resolved
//! parameters; `manifest.txt` records the same plus a content hash of the
//! inputs. Outputs contain no timestamps, so equal inputs give equal bytes.
//!
//! Exit codes: `0` success, `1` runtime failure, `2` configuration error,
//! `3` numerical tolerance failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::distributions::{DistributionSpec, Family, DEFAULT_P};
use crate::fluid::{lift_initial, FluidError, FluidGrid, FluidSolution, ValidInitialCondition};
use crate::limits::{
    empirical_measure_diagnostic, rbm_dt, simulate_rbm_with, ssc_experiment, workload_limit_check, GcOptions,
    HarnessOptions, HeavyTrafficSequence, LimitsError, PiecewiseMap, RbmParams, RbmScheme, WorkloadLimitOptions,
};
use crate::numeric::median;
use crate::renewal::{renewal_function, RenewalError};
use crate::simulator::{run, LpsConfig};
use crate::streams::{child_seed, substream};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Tolerance(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Tolerance(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Tolerance(m) => write!(f, "numerical tolerance failure: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn fluid_error(e: FluidError) -> CliError {
    match e {
        FluidError::StepTooCoarse { .. } | FluidError::Renewal(RenewalError::StepTooCoarse { .. }) => CliError::Tolerance(e.to_string()),
        other => runtime(other),
    }
}

fn limits_error(e: LimitsError) -> CliError {
    match e {
        LimitsError::InvalidParameter(m) => CliError::Config(m),
        other => runtime(other),
    }
}

#[derive(Parser, Debug)]
#[command(name = "lps", version, about = "Limited processor sharing queues in heavy traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Event-driven simulation of the LPS queue.
    Simulate(RunArgs),
    /// Fluid model solved in service-time coordinates.
    Fluid(RunArgs),
    /// Renewal function of an interrenewal law.
    Renewal(RunArgs),
    /// Reflected Brownian motion and the mapped system size.
    Rbm(RunArgs),
    /// State-space collapse statistic along a heavy-traffic sequence.
    Ssc(RunArgs),
    /// Diffusion scaled workload against the reflected Brownian motion.
    WorkloadLimit(RunArgs),
    /// Deviations of windowed empirical measures of job sizes.
    GcDiagnostic(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fluid(_) => "fluid",
            Command::Renewal(_) => "renewal",
            Command::Rbm(_) => "rbm",
            Command::Ssc(_) => "ssc",
            Command::WorkloadLimit(_) => "workload-limit",
            Command::GcDiagnostic(_) => "gc-diagnostic",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::Fluid(a)
            | Command::Renewal(a)
            | Command::Rbm(a)
            | Command::Ssc(a)
            | Command::WorkloadLimit(a)
            | Command::GcDiagnostic(a) => a,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Config file of dotted `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Master seed; overrides `LPS_SEED` and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications.
    #[arg(long)]
    parallel: Option<usize>,
    /// Override one config entry, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// What was run, where, and with which inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub overrides: Vec<String>,
}

/// Parse `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; repeated keys are an error.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_entry(line).ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        if out.insert(k.clone(), v).is_some() {
            return Err(CliError::Config(format!("line {}: key {k} given twice", i + 1)));
        }
    }
    Ok(out)
}

fn split_entry(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then(|| (k.to_string(), v.trim().to_string()))
}

/// Config entries with tracking of consumed keys and resolved values.
struct Config {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Config {
    fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries, used: BTreeSet::new(), resolved: BTreeMap::new() }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    fn parse<T: std::str::FromStr + ToString>(&mut self, key: &str, default: Option<T>) -> Result<T, CliError> {
        let v = match self.raw(key) {
            Some(s) => s.parse::<T>().map_err(|_| CliError::Config(format!("{key}: cannot parse {s:?}")))?,
            None => default.ok_or_else(|| CliError::Config(format!("missing required key {key}")))?,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn f64(&mut self, key: &str, default: Option<f64>) -> Result<f64, CliError> {
        let v: f64 = self.parse(key, default)?;
        if !v.is_finite() {
            return Err(CliError::Config(format!("{key} must be finite")));
        }
        Ok(v)
    }

    fn usize(&mut self, key: &str, default: Option<usize>) -> Result<usize, CliError> {
        self.parse(key, default)
    }

    fn bool(&mut self, key: &str, default: Option<bool>) -> Result<bool, CliError> {
        self.parse(key, default)
    }

    fn string(&mut self, key: &str, default: Option<&str>, allowed: &[&str]) -> Result<String, CliError> {
        let v: String = self.parse(key, default.map(str::to_string))?;
        if !allowed.is_empty() && !allowed.contains(&v.as_str()) {
            return Err(CliError::Config(format!("{key}: {v:?} is not one of {}", allowed.join(", "))));
        }
        Ok(v)
    }

    fn list(&mut self, key: &str, default: Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
        let v = match self.raw(key) {
            Some(s) if s.is_empty() => Vec::new(),
            Some(s) => s
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Config(format!("{key}: cannot parse {x:?}"))))
                .collect::<Result<Vec<_>, _>>()?,
            None => default.ok_or_else(|| CliError::Config(format!("missing required key {key}")))?,
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Config(format!("{key} must hold finite numbers")));
        }
        self.resolved.insert(key.to_string(), v.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    /// Law under `prefix`: `family` plus that family's parameters and `p`.
    fn distribution(&mut self, prefix: &str) -> Result<DistributionSpec, CliError> {
        let key = |k: &str| format!("{prefix}.{k}");
        let family = match self.string(&key("family"), None, &["exp", "hyperexp", "det", "uniform", "lognormal"])?.as_str() {
            "exp" => Family::Exponential { rate: self.f64(&key("rate"), None)? },
            "hyperexp" => Family::HyperExponential { probs: self.list(&key("probs"), None)?, rates: self.list(&key("rates"), None)? },
            "det" => Family::Deterministic { d: self.f64(&key("d"), None)? },
            "uniform" => Family::Uniform { a: self.f64(&key("a"), None)?, b: self.f64(&key("b"), None)? },
            _ => {
                let mu = self.f64(&key("mu"), None)?;
                let sigma = self.f64(&key("sigma"), None)?;
                let cap = match self.raw(&key("cap")) {
                    Some(_) => Some(self.f64(&key("cap"), None)?),
                    None => None,
                };
                Family::LogNormal { mu, sigma, cap }
            }
        };
        let p = self.f64(&key("p"), Some(DEFAULT_P))?;
        DistributionSpec::new(family, p).map_err(|e| CliError::Config(format!("{prefix}: {e}")))
    }

    fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&String> = self.entries.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "unknown key(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// SHA-256 object id of `content` in git's blob format.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

/// Output sink that prefixes every file with the run header.
struct Output {
    dir: PathBuf,
    header: String,
}

impl Output {
    fn write(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>) -> Result<(), CliError> {
        let mut buf = self.header.clone().into_bytes();
        body(&mut buf)?;
        fs::write(self.dir.join(name), buf).map_err(|e| runtime(format!("cannot write {}: {e}", self.dir.join(name).display())))
    }

    fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<(), CliError> {
        self.write(name, |buf| body(buf).map_err(runtime))
    }
}

/// A fully resolved run: everything needed to execute without touching
/// the config again.
enum Job {
    Simulate { configs: Vec<LpsConfig> },
    Fluid { init: ValidInitialCondition, spec: DistributionSpec, k: f64, grid: FluidGrid, times: Vec<f64>, ys: Vec<f64> },
    Renewal { spec: DistributionSpec, step: f64, u_max: f64 },
    Rbm { params: RbmParams, t_end: f64, dt: f64, scheme: RbmScheme, map: PiecewiseMap },
    Ssc { seq: HeavyTrafficSequence, opts: HarnessOptions, grid_dt: f64 },
    WorkloadLimit { seq: HeavyTrafficSequence, opts: WorkloadLimitOptions, repeats: usize },
    Gc { spec: DistributionSpec, r_values: Vec<f64>, opts: GcOptions, seeds: usize },
}

fn heavy_traffic(cfg: &mut Config) -> Result<HeavyTrafficSequence, CliError> {
    let theta = cfg.f64("htseq.theta", Some(1.0))?;
    let k = cfg.f64("htseq.k", Some(2.0))?;
    let r_values = cfg.list("htseq.r", Some(vec![5.0, 10.0, 20.0]))?;
    let ca2 = cfg.f64("htseq.ca2", Some(1.0))?;
    let service = cfg.distribution("service")?;
    HeavyTrafficSequence::new(theta, k, service, ca2, r_values).map_err(limits_error)
}

fn resolve(command: &str, cfg: &mut Config, seed: u64) -> Result<Job, CliError> {
    let job = match command {
        "simulate" => {
            let k = cfg.usize("k", None)?;
            let horizon = cfg.f64("horizon", None)?;
            let reps = cfg.usize("replications", Some(1))?;
            let service = cfg.distribution("service")?;
            let arrival = match cfg.raw("arrival.family").as_deref() {
                Some("none") => {
                    cfg.resolved.insert("arrival.family".into(), "none".into());
                    None
                }
                _ => Some(cfg.distribution("arrival")?),
            };
            let initial_buffer = cfg.list("initial.buffer", Some(Vec::new()))?;
            let initial_service = cfg.list("initial.service", Some(Vec::new()))?;
            let snapshot_times = cfg.list("snapshot.times", Some(Vec::new()))?;
            let mut configs = Vec::with_capacity(reps);
            for rep in 0..reps {
                let mut c = LpsConfig::new(k, arrival.clone(), service.clone(), horizon, seed);
                c.replication = rep as u64;
                c.initial_buffer = initial_buffer.clone();
                c.initial_service = initial_service.clone();
                c.snapshot_times = snapshot_times.clone();
                c.validate().map_err(|e| CliError::Config(e.to_string()))?;
                configs.push(c);
            }
            Job::Simulate { configs }
        }
        "fluid" => {
            let spec = cfg.distribution("service")?;
            let k = cfg.f64("k", None)?;
            let default_grid = FluidGrid::for_spec(&spec);
            let grid = FluidGrid { step: cfg.f64("grid.step", Some(default_grid.step))?, u_max: cfg.f64("grid.u_max", Some(default_grid.u_max))? };
            let init = match cfg.string("init.kind", Some("lift"), &["lift", "scaled"])?.as_str() {
                "lift" => lift_initial(cfg.f64("init.w", None)?, k, &spec),
                _ => {
                    let a = cfg.f64("init.buffer_mass", Some(0.0))?;
                    let b = cfg.f64("init.service_mass", None)?;
                    let law = cfg.string("init.service_law", Some("nu_e"), &["nu", "nu_e"])?;
                    let mu_base = if law == "nu" { spec.nu() } else { spec.nu_e() };
                    let xi = spec.nu().scale(a).map_err(|e| CliError::Config(e.to_string()))?;
                    let mu = mu_base.scale(b).map_err(|e| CliError::Config(e.to_string()))?;
                    ValidInitialCondition::new(xi, mu, k, &spec)
                }
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            let times = cfg.list("reconstruct.times", Some(Vec::new()))?;
            let ys = cfg.list("reconstruct.ys", Some(Vec::new()))?;
            Job::Fluid { init, spec, k, grid, times, ys }
        }
        "renewal" => {
            let spec = cfg.distribution("law")?;
            let step = cfg.f64("grid.step", Some(spec.beta() / 100.0))?;
            let u_max = cfg.f64("grid.u_max", Some(80.0 * spec.beta()))?;
            Job::Renewal { spec, step, u_max }
        }
        "rbm" => {
            let spec = cfg.distribution("service")?;
            let theta = cfg.f64("rbm.theta", Some(1.0))?;
            let sigma2 = cfg.f64("rbm.sigma2", None)?;
            let w0 = cfg.f64("rbm.w0", Some(0.0))?;
            let t_end = cfg.f64("rbm.t", Some(1.0))?;
            let k = cfg.f64("rbm.k", None)?;
            let dt = cfg.f64("rbm.dt", Some(rbm_dt(theta, &spec)))?;
            let scheme = match cfg.string("rbm.scheme", Some("euler"), &["euler", "exact"])?.as_str() {
                "euler" => RbmScheme::Euler,
                _ => RbmScheme::ExactReflection,
            };
            Job::Rbm { params: RbmParams { theta, sigma2, w0 }, t_end, dt, scheme, map: PiecewiseMap::new(k, &spec) }
        }
        "ssc" => {
            let seq = heavy_traffic(cfg)?;
            let t_end = cfg.f64("ssc.t", Some(1.0))?;
            let grid_dt = cfg.f64("ssc.grid_dt", Some(t_end / 100.0))?;
            let opts = HarnessOptions {
                t_end,
                reps: cfg.usize("ssc.reps", Some(20))?,
                w0: cfg.f64("ssc.w0", Some(1.0))?,
                lifted: cfg.bool("ssc.lifted", Some(true))?,
                seed,
            };
            Job::Ssc { seq, opts, grid_dt }
        }
        "workload-limit" => {
            let seq = heavy_traffic(cfg)?;
            let harness = HarnessOptions {
                t_end: cfg.f64("wl.t", Some(1.0))?,
                reps: cfg.usize("wl.reps", Some(500))?,
                w0: cfg.f64("wl.w0", Some(1.0))?,
                lifted: cfg.bool("wl.lifted", Some(true))?,
                seed,
            };
            let dt = cfg.f64("wl.dt", Some(rbm_dt(seq.theta, &seq.base_service)))?;
            let rbm_paths = cfg.usize("wl.rbm_paths", Some(20000))?;
            let repeats = cfg.usize("wl.repeats", Some(1))?;
            if repeats == 0 {
                return Err(CliError::Config("wl.repeats must be positive".into()));
            }
            Job::WorkloadLimit { seq, opts: WorkloadLimitOptions { harness, rbm_paths, dt: Some(dt) }, repeats }
        }
        "gc-diagnostic" => {
            let spec = cfg.distribution("service")?;
            let r_values = cfg.list("gc.r", Some(vec![50.0, 200.0]))?;
            let opts = GcOptions {
                n_range: cfg.f64("gc.n_range", Some(5.0))?,
                l1: cfg.f64("gc.l1", Some(1.0))?,
                grid: cfg.usize("gc.grid", Some(20))?,
                seed,
            };
            let seeds = cfg.usize("gc.seeds", Some(10))?;
            Job::Gc { spec, r_values, opts, seeds }
        }
        other => return Err(CliError::Config(format!("unknown command {other}"))),
    };
    Ok(job)
}

fn execute(job: Job, out: &Output) -> Result<(), CliError> {
    match job {
        Job::Simulate { configs } => {
            let results = configs
                .par_iter()
                .map(|c| {
                    let traj = run(c).map_err(runtime)?;
                    let suffix = c.replication;
                    out.csv(&format!("trajectory_{suffix}.csv"), |b| traj.write_trajectory_csv(b))?;
                    if !c.snapshot_times.is_empty() {
                        out.csv(&format!("snapshots_{suffix}.csv"), |b| traj.write_snapshot_csv(b))?;
                    }
                    let (w, x) = traj.time_averages();
                    let last = traj.events.last().expect("initial record");
                    let departed = traj.jobs.iter().filter(|j| j.departure.is_some()).count();
                    Ok([
                        suffix.to_string(),
                        w.to_string(),
                        x.to_string(),
                        traj.mean_sojourn().map_or_else(String::new, |s| s.to_string()),
                        last.e.to_string(),
                        departed.to_string(),
                    ])
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            out.csv("summary.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["replication", "time_avg_W", "time_avg_X", "mean_sojourn", "arrivals", "departures"])?;
                for row in &results {
                    w.write_record(row)?;
                }
                w.flush()?;
                Ok(())
            })
        }
        Job::Fluid { init, spec, k, grid, times, ys } => {
            let sol = FluidSolution::solve(&init, &spec, k, grid).map_err(fluid_error)?;
            out.csv("fluid.csv", |b| sol.write_csv(b))?;
            if !times.is_empty() {
                out.write("reconstruction.csv", |b| sol.write_reconstruction_csv(&times, &ys, b).map_err(fluid_error))?;
            }
            if !sol.residual_ok {
                return Err(CliError::Tolerance(format!("fluid residual {} exceeds 5·step", sol.max_residual)));
            }
            Ok(())
        }
        Job::Renewal { spec, step, u_max } => {
            let u = renewal_function(spec.nu(), u_max, step).map_err(|e| match e {
                RenewalError::StepTooCoarse { .. } => CliError::Tolerance(e.to_string()),
                other => runtime(other),
            })?;
            out.csv("renewal.csv", |b| u.write_csv(b))
        }
        Job::Rbm { params, t_end, dt, scheme, map } => {
            let seed = out_seed(out);
            let path = simulate_rbm_with(params, t_end, dt, scheme, &mut substream(seed, "rbm/0"), &map).map_err(limits_error)?;
            out.csv("rbm.csv", |b| path.write_csv(b))
        }
        Job::Ssc { seq, opts, grid_dt } => {
            let report = ssc_experiment(&seq, &opts, grid_dt).map_err(limits_error)?;
            out.csv("ssc.csv", |b| report.write_csv(b))
        }
        Job::WorkloadLimit { seq, opts, repeats } => {
            let mut gaps = vec![Vec::new(); seq.r_values.len()];
            for i in 0..repeats {
                let mut o = opts.clone();
                if repeats > 1 {
                    o.harness.seed = child_seed(opts.harness.seed, &format!("repeat/{i}"));
                }
                let report = workload_limit_check(&seq, &o).map_err(limits_error)?;
                let name = if repeats > 1 { format!("workload_limit_{i}.csv") } else { "workload_limit.csv".to_string() };
                out.csv(&name, |b| report.write_csv(b))?;
                for (g, v) in gaps.iter_mut().zip(&report.gaps) {
                    g.push(*v);
                }
            }
            if repeats > 1 {
                out.csv("workload_limit_summary.csv", |b| {
                    let mut w = csv::Writer::from_writer(b);
                    w.write_record(["r", "replication", "stat_name", "value"])?;
                    for (r, g) in seq.r_values.iter().zip(&gaps) {
                        w.write_record([r.to_string(), "all".into(), "median_max_gap".into(), median(g).to_string()])?;
                    }
                    w.flush()?;
                    Ok(())
                })?;
            }
            Ok(())
        }
        Job::Gc { spec, r_values, opts, seeds } => {
            let mut rows = Vec::new();
            for &r in &r_values {
                let reports = (0..seeds)
                    .into_par_iter()
                    .map(|i| {
                        let o = GcOptions { seed: child_seed(opts.seed, &format!("seed/{i}")), ..opts };
                        empirical_measure_diagnostic(&spec, r, &o)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(limits_error)?;
                for (i, rep) in reports.iter().enumerate() {
                    rows.push([r.to_string(), i.to_string(), "tail".into(), rep.tail.to_string()]);
                    rows.push([r.to_string(), i.to_string(), "moment".into(), rep.moment.to_string()]);
                    rows.push([r.to_string(), i.to_string(), "sup".into(), rep.sup().to_string()]);
                }
                let sups: Vec<f64> = reports.iter().map(|r| r.sup()).collect();
                rows.push([r.to_string(), "all".into(), "sup_median".into(), median(&sups).to_string()]);
            }
            out.csv("gc.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["r", "replication", "stat_name", "value"])?;
                for row in &rows {
                    w.write_record(row)?;
                }
                w.flush()?;
                Ok(())
            })
        }
    }
}

fn out_seed(out: &Output) -> u64 {
    out.header
        .lines()
        .find_map(|l| l.strip_prefix("# seed=").and_then(|s| s.parse().ok()))
        .expect("header records the seed")
}

fn resolve_seed(cli_seed: Option<u64>, cfg: &mut Config) -> Result<u64, CliError> {
    let from_config: u64 = cfg.parse("seed", Some(DEFAULT_SEED))?;
    let seed = if let Some(s) = cli_seed {
        s
    } else if let Ok(env) = std::env::var("LPS_SEED") {
        env.trim().parse().map_err(|_| CliError::Config(format!("LPS_SEED: cannot parse {env:?}")))?
    } else {
        from_config
    };
    cfg.resolved.remove("seed");
    Ok(seed)
}

fn run_command(command: &Command) -> Result<RunManifest, CliError> {
    let args = command.args();
    let name = command.name();
    let mut raw = Vec::new();
    let mut entries = match &args.config {
        Some(path) => {
            raw = fs::read(path).map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
            let text = String::from_utf8(raw.clone()).map_err(|_| CliError::Config(format!("config file {} is not UTF-8", path.display())))?;
            parse_config(&text)?
        }
        None => BTreeMap::new(),
    };
    for s in &args.set {
        let (k, v) = split_entry(s).ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
        entries.insert(k, v);
    }
    let mut cfg = Config::new(entries);
    let seed = resolve_seed(args.seed, &mut cfg)?;
    let job = resolve(name, &mut cfg, seed)?;
    cfg.finish()?;

    let mut header = format!("# lps {VERSION}\n# command={name}\n# seed={seed}\n");
    for (k, v) in &cfg.resolved {
        header.push_str(&format!("# {k}={v}\n"));
    }
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let manifest = RunManifest {
        command: name.to_string(),
        config_path: args.config.clone(),
        out_dir: args.out.clone(),
        seed,
        overrides: args.set.clone(),
    };
    write_manifest(&manifest, &cfg.resolved, &raw)?;
    let out = Output { dir: args.out.clone(), header };
    let exec = || execute(job, &out);
    match args.parallel {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(runtime)?.install(exec)?,
        None => exec()?,
    }
    Ok(manifest)
}

fn write_manifest(m: &RunManifest, resolved: &BTreeMap<String, String>, raw_config: &[u8]) -> Result<(), CliError> {
    let mut params = String::new();
    for (k, v) in resolved {
        params.push_str(&format!("{k}={v}\n"));
    }
    let mut text = format!("lps {VERSION}\ncommand={}\n", m.command);
    text.push_str(&format!("config_path={}\n", m.config_path.as_deref().map_or_else(String::new, |p| p.display().to_string())));
    text.push_str(&format!("out_dir={}\nseed={}\n", m.out_dir.display(), m.seed));
    for o in &m.overrides {
        text.push_str(&format!("override={o}\n"));
    }
    text.push_str(&format!("config_hash={}\n", content_hash(raw_config)));
    text.push_str(&format!("resolved_hash={}\n", content_hash(format!("command={}\nseed={}\n{params}", m.command, m.seed).as_bytes())));
    text.push_str("[resolved]\n");
    text.push_str(&params);
    fs::write(m.out_dir.join("manifest.txt"), text).map_err(|e| runtime(format!("cannot write manifest: {e}")))
}

/// Run the command line `args` (program name first) and return the exit
/// code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(&cli.command) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("lps {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

/// Read a CSV written by the CLI, skipping the `#` header.
pub fn read_output_csv(path: &Path) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(runtime)?;
    r.records().collect::<Result<Vec<_>, _>>().map_err(runtime)
}
