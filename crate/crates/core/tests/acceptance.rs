//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain program (no test harness) so every line is printed.
//! Monte Carlo criteria use seeds fixed in advance; their tolerances are
//! calibrated by pilot runs, not derived.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use lps::distributions::DistributionSpec;
use lps::fluid::{comparison_check, convergence_report, lift, x_infinity, ConvergenceOptions, FluidGrid, FluidSolution, ValidInitialCondition};
use lps::limits::{
    piecewise_map, simulate_rbm, simulate_rbm_with, ssc_experiment, ssc_state_distance, workload_limit_check, HarnessOptions,
    HeavyTrafficSequence, PiecewiseMap, RbmParams, RbmScheme, WorkloadLimitOptions, SSC_METRIC_TOL,
};
use lps::measures::{prohorov_bound_from_tails, prohorov_distance, workload_diff_bound, Measure, Piece};
use lps::numeric::median;
use lps::renewal::{key_renewal_check, renewal_function, GridFunction, Interp};
use lps::simulator::{generate_arrivals, run, workload_oracle, Arrival, LpsConfig};
use lps::streams::{child_seed, substream, StreamRng};

const SEED: u64 = 20_261_015;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn exp(rate: f64) -> DistributionSpec {
    DistributionSpec::exponential(rate).unwrap()
}

fn three_laws() -> Vec<(&'static str, DistributionSpec)> {
    vec![
        ("Exp(1)", exp(1.0)),
        ("Uniform(0,2)", DistributionSpec::uniform(0.0, 2.0).unwrap()),
        ("HyperExp", DistributionSpec::hyperexponential(vec![0.3, 0.7], vec![0.5, 2.0]).unwrap()),
    ]
}

fn random_spec(rng: &mut StreamRng) -> DistributionSpec {
    match rng.random_range(0..5) {
        0 => exp(rng.random_range(0.2..5.0)),
        1 => {
            let p = rng.random_range(0.05..0.95);
            DistributionSpec::hyperexponential(vec![p, 1.0 - p], vec![rng.random_range(0.1..1.0), rng.random_range(1.0..10.0)]).unwrap()
        }
        2 => {
            let a = rng.random_range(0.0..2.0);
            DistributionSpec::uniform(a, a + rng.random_range(0.1..3.0)).unwrap()
        }
        3 => DistributionSpec::deterministic(rng.random_range(0.1..3.0)).unwrap(),
        _ => DistributionSpec::lognormal(rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0)).unwrap(),
    }
}

/// Lifting-map workload identity and validity.
fn criterion_1() -> Outcome {
    let mut rng = substream(SEED, "c1");
    let pool: Vec<DistributionSpec> = (0..40).map(|_| random_spec(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    let mut invalid = 0;
    for _ in 0..1000 {
        let spec = &pool[rng.random_range(0..pool.len())];
        let k = rng.random_range(0.5..20.0);
        let w = rng.random_range(0.0..3.0) * k * spec.beta_e();
        let (xi, mu) = lift(w, k, spec).unwrap();
        let workload = xi.moment(1.0).unwrap() + mu.moment(1.0).unwrap();
        worst = worst.max((workload - w).abs());
        if ValidInitialCondition::new(xi, mu, k, spec).is_err() {
            invalid += 1;
        }
    }
    outcome(worst < 1e-9 && invalid == 0, format!("max |<chi,lift w> - w| = {worst:.2e}, invalid lifts = {invalid}"))
}

/// Equilibrium invariance of the fluid model.
fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let k = 3.0;
    for (_, spec) in three_laws() {
        for c in [0.5, 1.0, 1.5] {
            let w = c * k * spec.beta_e();
            let (xi, mu) = lift(w, k, &spec).unwrap();
            let init = ValidInitialCondition::new(xi, mu, k, &spec).unwrap();
            let sol = FluidSolution::solve(&init, &spec, k, FluidGrid::for_spec(&spec)).unwrap();
            let x0 = sol.x[0];
            let dev = sol.x.iter().map(|x| (x - x0).abs()).fold(0.0, f64::max) / (1.0 + x0);
            worst = worst.max(dev);
        }
    }
    outcome(worst < 1e-3, format!("max |x(u) - x(0)|/(1+x(0)) = {worst:.2e}"))
}

/// A valid initial condition that is not an equilibrium state.
fn random_init(rng: &mut StreamRng, spec: &DistributionSpec, k: f64) -> ValidInitialCondition {
    let mass = rng.random_range(0.2..3.0) * k;
    let server_mass = mass.min(k);
    let law = match rng.random_range(0..3) {
        0 => Measure::uniform(0.0, rng.random_range(0.2..4.0) * spec.beta(), server_mass).unwrap(),
        1 => Measure::exponential(rng.random_range(0.3..5.0) / spec.beta(), server_mass).unwrap(),
        _ => Measure::dirac(rng.random_range(0.1..3.0) * spec.beta(), server_mass).unwrap(),
    };
    let xi = spec.nu().scale((mass - k).max(0.0)).unwrap();
    ValidInitialCondition::new(xi, law, k, spec).unwrap()
}

/// Convergence of the fluid size to `x(∞)` and the perturbation sandwich.
fn criterion_3() -> Outcome {
    let mut rng = substream(SEED, "c3");
    let k = 2.0;
    let mut worst: f64 = 0.0;
    let mut sandwich_failures = 0;
    for (_, spec) in three_laws() {
        let grid = FluidGrid::for_spec(&spec);
        for _ in 0..10 {
            let init = random_init(&mut rng, &spec, k);
            let sol = FluidSolution::solve(&init, &spec, k, grid).unwrap();
            let x_inf = x_infinity(init.w(), k, &spec);
            worst = worst.max((sol.x.last().unwrap() - x_inf).abs() / (1.0 + x_inf));
            if !comparison_check(&init, 0.1, k, &spec, grid).unwrap() {
                sandwich_failures += 1;
            }
        }
    }
    outcome(
        worst < 0.02 && sandwich_failures == 0,
        format!("max |x(60b) - x_inf|/(1+x_inf) = {worst:.2e}, sandwich failures = {sandwich_failures}/30"),
    )
}

/// Uniform convergence of the measure-valued fluid state to the lift.
fn criterion_4() -> Outcome {
    let mut rng = substream(SEED, "c4");
    let k = 2.0;
    let mut details = Vec::new();
    let mut pass = true;
    for (name, spec) in three_laws() {
        let inits: Vec<ValidInitialCondition> = (0..10).map(|_| random_init(&mut rng, &spec, k)).collect();
        let opts = ConvergenceOptions::for_spec(&spec);
        let report = convergence_report(&inits, k, &spec, 60.0 * spec.beta() * k, opts).unwrap();
        let ok = report.final_sup() < 0.05 && report.is_nonincreasing(2.0 * opts.metric_tol);
        pass &= ok;
        let sups: Vec<String> = report.sup.iter().map(|s| format!("{s:.3}")).collect();
        details.push(format!("{name}: sup over checkpoints [{}]", sups.join(", ")));
    }
    outcome(pass, details.join("; "))
}

/// Renewal function, Blackwell increment and key renewal oracles.
fn criterion_5() -> Outcome {
    let lambda = 2.0;
    let e = exp(lambda);
    let beta = e.beta();
    let u = renewal_function(e.nu(), 80.0 * beta, beta / 100.0).unwrap();
    let exp_err = u.values().iter().enumerate().map(|(i, v)| {
        let x = i as f64 * u.step();
        (v - (1.0 + lambda * x)).abs() / (1.0 + lambda * x)
    });
    let exp_err = exp_err.fold(0.0, f64::max);

    let uni = DistributionSpec::uniform(0.0, 2.0).unwrap();
    let b = uni.beta();
    let uu = renewal_function(uni.nu(), 60.0 * b, b / 100.0).unwrap();
    let increment = uu.value(51.0 * b) - uu.value(50.0 * b);
    let blackwell_err = (increment - 1.0).abs();

    let step = b / 100.0;
    let u_max = 40.0 * b;
    let family: Vec<GridFunction> = vec![
        GridFunction::from_fn(step, u_max, Interp::Linear, |x| (-x).exp()).unwrap(),
        GridFunction::from_fn(step, u_max, Interp::Linear, |x| 2.0 * (-3.0 * x).exp()).unwrap(),
        GridFunction::from_fn(step, u_max, Interp::Linear, |x| (1.0 + x).powi(-3)).unwrap(),
        GridFunction::from_fn(step, u_max, Interp::Linear, |x| (1.0 - x / 2.0).max(0.0)).unwrap(),
        GridFunction::from_fn(step, u_max, Interp::Linear, |x| 1.0 / (1.0 + x * x)).unwrap(),
    ];
    let key = key_renewal_check(&family, uni.nu(), (u_max, u_max)).unwrap();
    let pass = exp_err < 1e-3 && blackwell_err < 0.02 && key.sup_deviation < 1e-3 && key.violations.is_empty();
    outcome(
        pass,
        format!("exponential U rel. error {exp_err:.2e}, Blackwell error {blackwell_err:.2e}, key renewal sup deviation {:.2e}", key.sup_deviation),
    )
}

#[derive(Clone)]
struct MeasureParams {
    atoms: Vec<(f64, f64)>,
    pieces: Vec<(f64, f64, f64, f64)>,
    tails: Vec<(f64, f64)>,
    mass: f64,
}

impl MeasureParams {
    fn random(rng: &mut StreamRng) -> Self {
        let atoms = (0..rng.random_range(0..4)).map(|_| (rng.random_range(0.0..5.0), rng.random_range(0.1..1.0))).collect();
        let mut pieces = Vec::new();
        let mut start = 0.0;
        for _ in 0..rng.random_range(0..3) {
            let a = start + rng.random_range(0.0..1.0);
            let b = a + rng.random_range(0.2..2.0);
            let c0 = rng.random_range(0.0..1.0);
            let c1 = rng.random_range(-c0 / (b - a)..1.0);
            pieces.push((a, b, c0, c1));
            start = b;
        }
        let tails = (0..rng.random_range(0..2)).map(|_| (rng.random_range(0.3..4.0), rng.random_range(0.1..1.0))).collect();
        let mut p = Self { atoms, pieces, tails, mass: rng.random_range(0.2..1.0) };
        if p.atoms.is_empty() && p.pieces.is_empty() && p.tails.is_empty() {
            p.atoms.push((rng.random_range(0.0..5.0), 1.0));
        }
        p
    }

    fn perturbed(&self, rng: &mut StreamRng, size: f64) -> Self {
        let mut p = self.clone();
        for a in &mut p.atoms {
            a.0 = (a.0 + size * rng.random_range(-1.0..1.0)).max(0.0);
            a.1 *= 1.0 + size * rng.random_range(-1.0..1.0);
        }
        for piece in &mut p.pieces {
            piece.2 *= 1.0 + size * rng.random_range(0.0..1.0);
        }
        for t in &mut p.tails {
            t.0 *= 1.0 + size * rng.random_range(-1.0..1.0);
        }
        p.mass = (p.mass * (1.0 + size * rng.random_range(-1.0..1.0))).min(1.0);
        p
    }

    fn build(&self) -> Measure {
        let pieces = self.pieces.iter().map(|&(a, b, c0, c1)| Piece::new(a, b, [c0, c1, 0.0, 0.0])).collect();
        let mut m = Measure::new(self.atoms.clone(), pieces, Vec::new()).unwrap();
        for &(rate, mass) in &self.tails {
            m = m.add(&Measure::exponential(rate, mass).unwrap());
        }
        m.scale(self.mass / m.total_mass()).unwrap()
    }
}

/// Tail-based Prohorov bound and the workload difference bound.
fn criterion_6() -> Outcome {
    let mut rng = substream(SEED, "c6");
    let tol = 1e-6;
    let q = 0.5;
    let (mut checked_p, mut checked_w, mut fail_p, mut fail_w, mut attempts) = (0, 0, 0, 0, 0);
    let mut min_slack_p = f64::INFINITY;
    let mut min_slack_w = f64::INFINITY;
    while (checked_p < 1000 || checked_w < 1000) && attempts < 20_000 {
        attempts += 1;
        let a = MeasureParams::random(&mut rng);
        let size = rng.random_range(0.001..0.3);
        let b = if rng.random_bool(0.5) { a.perturbed(&mut rng, size) } else { MeasureParams::random(&mut rng) };
        let (m1, m2) = (a.build(), b.build());
        let d = prohorov_distance(&m1, &m2, tol);
        if checked_p < 1000 {
            if let Ok(bound) = prohorov_bound_from_tails(&m1, &m2) {
                checked_p += 1;
                min_slack_p = min_slack_p.min(bound - d);
                if bound + tol < d {
                    fail_p += 1;
                }
            }
        }
        if checked_w < 1000 {
            let big_m = m1.moment(1.0 + q).unwrap().max(m2.moment(1.0 + q).unwrap()) * (1.0 + 1e-9) + 1e-12;
            if let Ok(bound) = workload_diff_bound(&m1, &m2, q, big_m, tol) {
                checked_w += 1;
                let gap = (m1.moment(1.0).unwrap() - m2.moment(1.0).unwrap()).abs();
                min_slack_w = min_slack_w.min(bound - gap);
                if bound < gap {
                    fail_w += 1;
                }
            }
        }
    }
    outcome(
        checked_p == 1000 && checked_w == 1000 && fail_p == 0 && fail_w == 0,
        format!(
            "Prohorov bound violations {fail_p}/{checked_p} (min slack {min_slack_p:.2e}), workload bound violations {fail_w}/{checked_w} (min slack {min_slack_w:.2e})"
        ),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Departure times under FCFS.
fn fcfs_oracle(arrivals: &[Arrival]) -> Vec<f64> {
    let mut last: f64 = 0.0;
    arrivals
        .iter()
        .map(|a| {
            last = last.max(a.time) + a.size;
            last
        })
        .collect()
}

/// Departure times under egalitarian processor sharing, by direct
/// decrement of remaining work.
fn ps_oracle(arrivals: &[Arrival], horizon: f64) -> Vec<Option<f64>> {
    let mut out = vec![None; arrivals.len()];
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut t = 0.0;
    let mut next = 0;
    loop {
        let n = active.len() as f64;
        let min_rem = active.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
        let t_dep = if active.is_empty() { f64::INFINITY } else { t + min_rem * n };
        let t_arr = arrivals.get(next).map_or(f64::INFINITY, |a| a.time);
        let t_next = t_dep.min(t_arr);
        if t_next > horizon {
            return out;
        }
        let served = (t_next - t) / n.max(1.0);
        for a in &mut active {
            a.1 -= served;
        }
        t = t_next;
        if t_dep <= t_arr {
            let cut = min_rem * 1e-9 + 1e-12;
            active.retain(|&(i, rem)| {
                if rem <= cut {
                    out[i] = Some(t);
                    false
                } else {
                    true
                }
            });
        } else {
            active.push((next, arrivals[next].size));
            next += 1;
        }
    }
}

/// FCFS, PS and Lindley reductions of the simulator and the M/M/1 mean.
fn criterion_7() -> Outcome {
    let horizon = 1e4;
    let mut notes = Vec::new();
    let mut pass = true;

    let service = DistributionSpec::hyperexponential(vec![0.4, 0.6], vec![0.5, 3.0]).unwrap();
    let rate = 0.9 / service.beta();
    let cfg = LpsConfig::new(1, Some(exp(rate)), service.clone(), horizon, SEED);
    let arrivals = generate_arrivals(&cfg);
    let traj = run(&cfg).unwrap();
    let oracle = fcfs_oracle(&arrivals);
    let jobs: Vec<_> = traj.jobs.iter().filter(|j| j.id > 0).collect();
    let fcfs_bad = jobs
        .iter()
        .zip(&oracle)
        .filter(|(j, &d)| if d <= horizon { !j.departure.is_some_and(|x| close(x, d)) } else { j.departure.is_some() })
        .count();
    pass &= fcfs_bad == 0 && jobs.len() == arrivals.len();
    notes.push(format!("K=1 vs FCFS mismatches {fcfs_bad}/{}", arrivals.len()));

    let uni = DistributionSpec::uniform(0.0, 2.0).unwrap();
    let cfg = LpsConfig::new(100_000, Some(exp(0.8)), uni, horizon, SEED + 1);
    let arrivals = generate_arrivals(&cfg);
    let traj = run(&cfg).unwrap();
    let max_x = traj.events.iter().map(|e| e.x()).max().unwrap();
    let oracle = ps_oracle(&arrivals, horizon);
    let ps_bad = traj
        .jobs
        .iter()
        .filter(|j| j.id > 0)
        .zip(&oracle)
        .filter(|(j, d)| match (j.departure, d) {
            (Some(a), Some(b)) => !close(a, *b),
            (None, None) => false,
            _ => true,
        })
        .count();
    pass &= ps_bad == 0 && max_x <= cfg.k;
    notes.push(format!("K >= max X = {max_x} vs PS mismatches {ps_bad}/{}", arrivals.len()));

    let cfg = LpsConfig::new(3, Some(exp(0.95 / service.beta())), service, horizon, SEED + 2);
    let traj = run(&cfg).unwrap();
    let lindley = workload_oracle(&cfg).unwrap();
    let mut rng = substream(SEED, "c7");
    let times: Vec<f64> = traj.events.iter().map(|e| e.time).chain((0..2000).map(|_| rng.random_range(0.0..horizon))).collect();
    let lindley_bad = times.iter().filter(|&&t| !close(traj.workload(t), lindley.value(t))).count();
    pass &= lindley_bad == 0;
    notes.push(format!("workload vs Lindley mismatches {lindley_bad}/{}", times.len()));

    let cfg = LpsConfig::new(1, Some(exp(0.5)), exp(1.0), 1e5, SEED + 3);
    let (avg_w, _) = run(&cfg).unwrap().time_averages();
    let mm1_ok = (avg_w - 1.0).abs() < 0.05;
    pass &= mm1_ok;
    notes.push(format!("M/M/1 time-average workload {avg_w:.4}"));
    outcome(pass, notes.join(", "))
}

/// Diffusion scaled workload against the reflected Brownian motion.
fn criterion_8() -> Outcome {
    let seq = HeavyTrafficSequence::new(1.0, 2.0, exp(1.0), 1.0, vec![5.0, 10.0, 20.0]).unwrap();
    let mut gaps = vec![Vec::new(); 3];
    for repeat in 0..5 {
        let opts = WorkloadLimitOptions {
            harness: HarnessOptions { t_end: 1.0, reps: 500, w0: 1.0, lifted: true, seed: child_seed(SEED, &format!("c8/{repeat}")) },
            rbm_paths: 20_000,
            dt: None,
        };
        let report = workload_limit_check(&seq, &opts).unwrap();
        for (g, v) in gaps.iter_mut().zip(&report.gaps) {
            g.push(*v);
        }
    }
    let medians: Vec<f64> = gaps.iter().map(|g| median(g)).collect();
    let pass = medians.windows(2).all(|w| w[1] <= w[0]) && medians[2] < 0.15;
    outcome(pass, format!("median max quantile gap for r = 5, 10, 20: {:.4}, {:.4}, {:.4}", medians[0], medians[1], medians[2]))
}

/// State-space collapse trend and the exactly lifted state.
fn criterion_9() -> Outcome {
    let seq = HeavyTrafficSequence::new(1.0, 2.0, exp(1.0), 1.0, vec![5.0, 10.0, 20.0]).unwrap();
    let opts = HarnessOptions { t_end: 1.0, reps: 20, w0: 1.0, lifted: true, seed: child_seed(SEED, "c9") };
    let report = ssc_experiment(&seq, &opts, 0.01).unwrap();
    let m = &report.medians;
    let ratio = m[0] / m[2];
    let spec = exp(1.0);
    let (xi, mu) = lift(1.3, 2.0, &spec).unwrap();
    let synthetic = ssc_state_distance(&xi, &mu, 1.3, 2.0, &spec, 0.0).unwrap();
    let pass = m[1] < m[0] && m[2] < m[1] && ratio >= 1.5 && synthetic < SSC_METRIC_TOL;
    outcome(
        pass,
        format!("median sup statistic for r = 5, 10, 20: {:.4}, {:.4}, {:.4} (ratio {ratio:.3}); lifted state {synthetic:.1e}", m[0], m[1], m[2]),
    )
}

/// Piecewise RBM: continuity, stationary mean and the noise-free path.
fn criterion_10() -> Outcome {
    let mut notes = Vec::new();
    let mut continuity = true;
    for spec in three_laws().into_iter().map(|l| l.1).chain([DistributionSpec::deterministic(0.7).unwrap()]) {
        for k in [1.0, 2.5, 10.0] {
            let map = PiecewiseMap::new(k, &spec);
            let kink = map.kink();
            continuity &= map.apply(kink) == k && piecewise_map(kink, k, &spec) == k;
            continuity &= (map.apply(kink.next_up()) - k).abs() < 1e-12 && (map.apply(kink.next_down()) - k).abs() < 1e-12;
        }
    }
    notes.push(format!("continuity at the kink {}", if continuity { "exact" } else { "broken" }));

    let params = RbmParams { theta: 1.0, sigma2: 2.0, w0: 1.0 };
    let map = PiecewiseMap::new(2.0, &exp(1.0));
    let dt = 0.1;
    let path = simulate_rbm_with(params, 1e6 * dt, dt, RbmScheme::ExactReflection, &mut substream(SEED, "c10"), &map).unwrap();
    let mean = path.w_star.iter().sum::<f64>() / path.w_star.len() as f64;
    let mean_ok = (mean - 1.0).abs() < 0.05 && path.w_star.len() == 1_000_001;
    notes.push(format!("stationary mean {mean:.4} vs 1 over 1e6 steps"));

    let drift = RbmParams { theta: 1.0, sigma2: 0.0, w0: 3.0 };
    let ramp = simulate_rbm(drift, 5.0, 1.0 / 1024.0, SEED, &map).unwrap();
    let ramp_ok = ramp.w_star.iter().enumerate().all(|(i, &w)| w == (3.0 - ramp.time(i)).max(0.0));
    notes.push(format!("noise-free path {}", if ramp_ok { "exact" } else { "inexact" }));
    outcome(continuity && mean_ok && ramp_ok, notes.join(", "))
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_lps")).args(args).arg("--out").arg(out).status().is_ok_and(|s| s.success())
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Byte-identical CLI outputs for identical inputs.
fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let configs: [(&str, &str); 6] = [
        (
            "simulate",
            "k=2\nhorizon=500\nreplications=3\nseed=5\narrival.family=exp\narrival.rate=0.8\nservice.family=uniform\nservice.a=0\nservice.b=2\nsnapshot.times=10,250\n",
        ),
        ("fluid", "k=2\nservice.family=exp\nservice.rate=1\ninit.kind=scaled\ninit.buffer_mass=1\ninit.service_mass=2\ninit.service_law=nu\nreconstruct.times=0,5\nreconstruct.ys=0,1,2\n"),
        ("rbm", "rbm.sigma2=2\nrbm.w0=1\nrbm.t=2\nrbm.k=2\nservice.family=exp\nservice.rate=1\n"),
        ("ssc", "htseq.r=3,6\nservice.family=exp\nservice.rate=1\nssc.reps=4\nssc.grid_dt=0.05\n"),
        ("workload-limit", "htseq.r=3,6\nservice.family=exp\nservice.rate=1\nwl.reps=50\nwl.rbm_paths=500\nwl.repeats=2\n"),
        ("gc-diagnostic", "service.family=exp\nservice.rate=1\ngc.r=10,40\ngc.seeds=3\ngc.grid=5\n"),
    ];
    let mut identical = 0;
    let mut notes = Vec::new();
    for (cmd, text) in configs {
        let cfg = tmp.path().join(format!("{cmd}.cfg"));
        fs::write(&cfg, text).unwrap();
        let cfg = cfg.to_str().unwrap();
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        let ok = run_cli(&[cmd, "--config", cfg, "--parallel", "1"], &a) && run_cli(&[cmd, "--config", cfg, "--parallel", "4"], &b);
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        if ok && !fa.is_empty() && fa == fb {
            identical += 1;
        } else {
            notes.push(format!("{cmd} differs"));
        }
    }
    outcome(identical == configs.len(), format!("{identical}/{} subcommands byte-identical across runs and worker counts {}", configs.len(), notes.join(" ")))
}

/// Criterion number, name, runtime budget and check.
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "lifting-map workload identity", Duration::from_secs(5), criterion_1),
        (2, "equilibrium invariance", Duration::from_secs(30), criterion_2),
        (3, "fluid convergence to x(inf)", Duration::from_secs(120), criterion_3),
        (4, "uniform convergence to the lift", Duration::from_secs(300), criterion_4),
        (5, "renewal oracles", Duration::from_secs(30), criterion_5),
        (6, "Prohorov bounds", Duration::from_secs(120), criterion_6),
        (7, "simulator reductions", Duration::from_secs(180), criterion_7),
        (8, "workload FCLT trend", Duration::from_secs(1200), criterion_8),
        (9, "state-space collapse trend", Duration::from_secs(1800), criterion_9),
        (10, "piecewise RBM", Duration::from_secs(60), criterion_10),
        (11, "reproducibility", Duration::from_secs(60), criterion_11),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict}  {name}: {} [{:.1} s of {} s]",
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
