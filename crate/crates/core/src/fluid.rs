//! The critically loaded fluid model `(K, λ, ν)` with `λβ = 1`.
//!
//! Solutions are computed in service-time coordinates: with
//! `x(u) = q(u) + z(u)` the system size at the time `T̄(u)` when the
//! cumulative service per job reaches `u`, the model reduces to
//!
//! ```text
//! x(u) = h(u) + ∫₀ᵘ (x(u-v) - K)⁺ dF(v) + ∫₀ᵘ (x(u-v) ∧ K) dF_e(v),
//! ```
//!
//! with `h(u) = ξ((u,∞)) + μ((u,∞))` and `T̄(u) = ∫₀ᵘ z`. Real-time
//! quantities are recovered through `T̄`.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::conv::{linear_convolution, OnlineConvolution};
use crate::distributions::DistributionSpec;
use crate::measures::{prohorov_distance_pair, tail_sup_distance, Measure, MeasureError, Piece};
use crate::renewal::{increments, GridFunction, Interp, RenewalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidError {
    #[error("K must be positive and finite, got {0}")]
    InvalidK(f64),
    #[error("invalid initial condition: {0}")]
    InvalidInitialCondition(String),
    #[error("the zero initial condition has no perturbation")]
    ZeroInitialCondition,
    #[error("perturbation size must lie in (-1, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("grid step {0} is too coarse for the implicit cell update")]
    StepTooCoarse(f64),
    #[error("time {t} lies beyond the solved horizon {reachable}")]
    BeyondHorizon { t: f64, reachable: f64 },
    #[error("the solution carries no initial condition to reconstruct from")]
    NoInitialCondition,
    #[error("buffer measure cannot be rebuilt: the buffer is not proportional to the job-size law")]
    NotReconstructible,
    #[error("the job-size law has atoms; convergence needs a nonlattice law")]
    LatticeLaw,
    #[error("initial condition {index} lies outside the moment-bounded family: {reason}")]
    OutsideFamily { index: usize, reason: String },
    #[error("reaching time {horizon} needs more than {max_points} grid points")]
    HorizonTooLong { horizon: f64, max_points: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Renewal(#[from] RenewalError),
}

/// Relative tolerance for mass identities in the validity conditions.
const MASS_TOL: f64 = 1e-9;

/// Initial state `(ξ, μ)` consistent with the LPS policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidInitialCondition {
    xi: Measure,
    mu: Measure,
    w: f64,
}

impl ValidInitialCondition {
    /// Checks both validity conditions: `⟨1,μ⟩ = ⟨1,ξ+μ⟩ ∧ K` and
    /// `ξ = (⟨1,ξ+μ⟩ - K)⁺ ν`, plus `μ({0}) = 0`.
    pub fn new(xi: Measure, mu: Measure, k: f64, spec: &DistributionSpec) -> Result<Self, FluidError> {
        let init = Self::policy_consistent(xi, mu, k)?;
        if !init.buffer_follows(spec) {
            return Err(FluidError::InvalidInitialCondition("the buffer is not a multiple of the job-size law".into()));
        }
        Ok(init)
    }

    /// Checks only the policy condition `⟨1,μ⟩ = ⟨1,ξ+μ⟩ ∧ K` and
    /// `μ({0}) = 0`. Upward perturbations of states with idle capacity
    /// move part of `μ` into the buffer and satisfy only this condition.
    pub fn policy_consistent(xi: Measure, mu: Measure, k: f64) -> Result<Self, FluidError> {
        check_k(k)?;
        let total = xi.total_mass() + mu.total_mass();
        if (mu.total_mass() - total.min(k)).abs() > MASS_TOL * (1.0 + total) {
            return Err(FluidError::InvalidInitialCondition(format!(
                "server mass {} differs from min(total mass {total}, K = {k})",
                mu.total_mass()
            )));
        }
        if mu.atoms().first().is_some_and(|a| a.0 == 0.0) {
            return Err(FluidError::InvalidInitialCondition("the server measure has an atom at 0".into()));
        }
        let w = xi.moment(1.0)? + mu.moment(1.0)?;
        Ok(Self { xi, mu, w })
    }

    pub fn zero() -> Self {
        Self { xi: Measure::zero(), mu: Measure::zero(), w: 0.0 }
    }

    pub fn xi(&self) -> &Measure {
        &self.xi
    }

    pub fn mu(&self) -> &Measure {
        &self.mu
    }

    /// Workload `⟨χ, ξ+μ⟩`.
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Total mass `⟨1, ξ+μ⟩`.
    pub fn mass(&self) -> f64 {
        self.xi.total_mass() + self.mu.total_mass()
    }

    pub fn is_zero(&self) -> bool {
        self.mass() == 0.0
    }

    /// Whether `ξ` is a multiple of `ν`.
    pub fn buffer_follows(&self, spec: &DistributionSpec) -> bool {
        let q = self.xi.total_mass();
        q == 0.0 || tail_sup_distance(&self.xi.scale(1.0 / q).expect("positive mass"), spec.nu()) < 1e-9
    }
}

fn check_k(k: f64) -> Result<(), FluidError> {
    if k.is_finite() && k > 0.0 {
        Ok(())
    } else {
        Err(FluidError::InvalidK(k))
    }
}

/// The lifting map `w ↦ ((w - Kβ_e)⁺/β · ν, (w ∧ Kβ_e)/β_e · ν_e)`.
pub fn lift(w: f64, k: f64, spec: &DistributionSpec) -> Result<(Measure, Measure), FluidError> {
    check_k(k)?;
    if !(w.is_finite() && w >= 0.0) {
        return Err(FluidError::InvalidInitialCondition(format!("workload {w} must be finite and nonnegative")));
    }
    let kbe = k * spec.beta_e();
    let xi = spec.nu().scale((w - kbe).max(0.0) / spec.beta())?;
    let mu = spec.nu_e().scale(w.min(kbe) / spec.beta_e())?;
    Ok((xi, mu))
}

/// [`lift`] packaged as an initial condition.
pub fn lift_initial(w: f64, k: f64, spec: &DistributionSpec) -> Result<ValidInitialCondition, FluidError> {
    let (xi, mu) = lift(w, k, spec)?;
    ValidInitialCondition::policy_consistent(xi, mu, k)
}

/// Fluid system size `(w - Kβ_e)⁺/β + (w ∧ Kβ_e)/β_e` of the equilibrium
/// state with workload `w`.
pub fn x_infinity(w: f64, k: f64, spec: &DistributionSpec) -> f64 {
    let kbe = k * spec.beta_e();
    (w - kbe).max(0.0) / spec.beta() + w.min(kbe) / spec.beta_e()
}

/// Grid in service-time coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidGrid {
    pub step: f64,
    pub u_max: f64,
}

impl FluidGrid {
    /// Step `β/100` up to `60β`.
    pub fn for_spec(spec: &DistributionSpec) -> Self {
        Self { step: spec.beta() / 100.0, u_max: 60.0 * spec.beta() }
    }
}

/// `h(u) = ξ((u,∞)) + μ((u,∞))` on the grid.
pub fn h_from_initial(init: &ValidInitialCondition, grid: FluidGrid) -> Result<GridFunction, FluidError> {
    Ok(GridFunction::from_fn(grid.step, grid.u_max, Interp::Linear, |u| init.xi.tail(u) + init.mu.tail(u))?)
}

/// Numerical solution of the fluid model in service-time coordinates.
#[derive(Debug, Clone)]
pub struct FluidSolution {
    pub step: f64,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    /// `T̄` at the grid points.
    pub tbar: Vec<f64>,
    /// Pointwise residual of the equation under an independent
    /// right-endpoint rule.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// Whether `max_residual < 5·step`.
    pub residual_ok: bool,
    pub k: f64,
    pub x_inf: f64,
    pub init: Option<ValidInitialCondition>,
    spec: DistributionSpec,
}

/// Solves the key integral equation for a given `h`.
///
/// Each cell integral uses the trapezoid value of the integrand against the
/// increment of `F` or `F_e`. The current cell enters both integrals, so
/// every step solves the piecewise-linear scalar equation
/// `x = c + a(x - K)⁺ + b(x ∧ K)` exactly.
pub fn solve_key_equation(h: &GridFunction, spec: &DistributionSpec, k: f64) -> Result<FluidSolution, FluidError> {
    check_k(k)?;
    let step = h.step();
    let n = h.len() - 1;
    let hv = h.values();
    let df = increments(spec.nu(), step, n + 1);
    let dfe = increments(spec.nu_e(), step, n + 1);
    let kernel = |d: &[f64]| -> Vec<f64> { (0..=n).map(|i| if i == 0 { 0.0 } else { 0.5 * (d[i] + d[i + 1]) }).collect() };
    let mut over = OnlineConvolution::new(kernel(&df), n);
    let mut under = OnlineConvolution::new(kernel(&dfe), n);
    let a = 0.5 * df[1];
    let b = 0.5 * dfe[1];
    if a >= 1.0 || b >= 1.0 {
        return Err(FluidError::StepTooCoarse(step));
    }

    let mut x = Vec::with_capacity(n + 1);
    x.push(hv[0]);
    over.push((hv[0] - k).max(0.0));
    under.push(hv[0].min(k));
    let (g0, f0) = ((hv[0] - k).max(0.0), hv[0].min(k));
    for j in 1..=n {
        let c = hv[j] + over.history() - 0.5 * df[j + 1] * g0 + under.history() - 0.5 * dfe[j + 1] * f0;
        let below = c / (1.0 - b);
        let xj = if below <= k { below } else { (c - a * k + b * k) / (1.0 - a) };
        x.push(xj);
        over.push((xj - k).max(0.0));
        under.push(xj.min(k));
    }

    let q: Vec<f64> = x.iter().map(|&v| (v - k).max(0.0)).collect();
    let z: Vec<f64> = x.iter().map(|&v| v.min(k)).collect();
    let mut tbar = vec![0.0; n + 1];
    for j in 1..=n {
        tbar[j] = tbar[j - 1] + 0.5 * step * (z[j - 1] + z[j]);
    }

    let rq = linear_convolution(&q, &df);
    let rz = linear_convolution(&z, &dfe);
    let residual: Vec<f64> = (0..=n).map(|j| (x[j] - hv[j] - rq[j] - rz[j]).abs()).collect();
    let max_residual = residual.iter().copied().fold(0.0, f64::max);
    let w = h.integral();
    Ok(FluidSolution {
        step,
        x_inf: x_infinity(w, k, spec),
        x,
        q,
        z,
        h: hv.to_vec(),
        tbar,
        residual,
        max_residual,
        residual_ok: max_residual < 5.0 * step,
        k,
        init: None,
        spec: spec.clone(),
    })
}

impl FluidSolution {
    /// Solves from an initial condition on the given grid.
    pub fn solve(init: &ValidInitialCondition, spec: &DistributionSpec, k: f64, grid: FluidGrid) -> Result<Self, FluidError> {
        let h = h_from_initial(init, grid)?;
        let mut sol = solve_key_equation(&h, spec, k)?;
        sol.x_inf = x_infinity(init.w, k, spec);
        sol.init = Some(init.clone());
        Ok(sol)
    }

    /// Solves on a grid long enough that `T̄` reaches real time `horizon`.
    pub fn solve_until(
        init: &ValidInitialCondition,
        spec: &DistributionSpec,
        k: f64,
        step: f64,
        horizon: f64,
        max_points: usize,
    ) -> Result<Self, FluidError> {
        check_k(k)?;
        let z_inf = init.w.min(k * spec.beta_e()) / spec.beta_e();
        let mut u_max = if z_inf > 0.0 { 1.25 * horizon / z_inf.min(k) + 10.0 * spec.beta() } else { 10.0 * spec.beta() };
        loop {
            if u_max / step > max_points as f64 {
                return Err(FluidError::HorizonTooLong { horizon, max_points });
            }
            let sol = Self::solve(init, spec, k, FluidGrid { step, u_max })?;
            if sol.t_max() >= horizon || init.is_zero() {
                return Ok(sol);
            }
            u_max *= 2.0;
        }
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn u_max(&self) -> f64 {
        self.step * (self.x.len() - 1) as f64
    }

    /// Largest real time covered by the solution.
    pub fn t_max(&self) -> f64 {
        *self.tbar.last().expect("non-empty grid")
    }

    /// Real time `T̄(u)`.
    pub fn time_of(&self, u: f64) -> f64 {
        interp(&self.tbar, self.step, u)
    }

    /// Cumulative service `S̄(t)`, the inverse of `T̄`, as a grid index and
    /// interpolation weight.
    fn locate(&self, t: f64) -> Result<(usize, f64), FluidError> {
        let reachable = self.t_max();
        if !(t >= 0.0) || t > reachable * (1.0 + 1e-12) {
            return Err(FluidError::BeyondHorizon { t, reachable });
        }
        let j = self.tbar.partition_point(|&v| v <= t);
        if j == 0 {
            return Ok((0, 0.0));
        }
        if j >= self.tbar.len() {
            return Ok((self.tbar.len() - 1, 0.0));
        }
        let (lo, hi) = (self.tbar[j - 1], self.tbar[j]);
        let frac = if hi > lo { (t - lo) / (hi - lo) } else { 0.0 };
        Ok((j - 1, frac))
    }

    pub fn service_time_at(&self, t: f64) -> Result<f64, FluidError> {
        let (j, frac) = self.locate(t)?;
        Ok((j as f64 + frac) * self.step)
    }

    /// `(x, q, z)` at real time `t`.
    pub fn state_at(&self, t: f64) -> Result<(f64, f64, f64), FluidError> {
        let u = self.service_time_at(t)?;
        Ok((interp(&self.x, self.step, u), interp(&self.q, self.step, u), interp(&self.z, self.step, u)))
    }

    /// CSV with columns `u,x,q,z,Tbar,h,residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "x", "q", "z", "Tbar", "h", "residual"])?;
        for j in 0..self.x.len() {
            w.write_record([
                (j as f64 * self.step).to_string(),
                self.x[j].to_string(),
                self.q[j].to_string(),
                self.z[j].to_string(),
                self.tbar[j].to_string(),
                self.h[j].to_string(),
                self.residual[j].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Server tails `𝓢̄(A_{y_i})` at `y_i = i·step` for the grid index `n`.
    fn server_tails(&self, mu: &Measure, n: usize, m: usize) -> Vec<f64> {
        let nu = self.spec.nu();
        let lambda = 1.0 / self.spec.beta();
        let s = self.step;
        let u = n as f64 * s;
        let mut out: Vec<f64> = (0..m).map(|i| mu.tail(i as f64 * s + u)).collect();
        if n == 0 {
            return out;
        }
        // Σ_{k=1}^{n} ν(A_{y_i + u - (k-½)s}) D_k with D_k the increment of λT̄ - q
        let d: Vec<f64> = (1..=n).map(|k| lambda * (self.tbar[k] - self.tbar[k - 1]) - (self.q[k] - self.q[k - 1])).collect();
        let g: Vec<f64> = (0..m + n).map(|i| nu.tail((i as f64 + 0.5) * s)).collect();
        let c = linear_convolution(&g, &d);
        for (i, o) in out.iter_mut().enumerate() {
            *o += c[i + n - 1];
        }
        out
    }

    fn y_cells(&self, mu: &Measure, u: f64) -> usize {
        let tol = 1e-12 * (1.0 + mu.total_mass());
        let reach = self.spec.nu().support_bound(tol).max(mu.support_bound(tol) - u);
        ((reach / self.step).ceil() as usize + 2).min(200_000)
    }

    /// Buffer and server measures at real time `t`.
    ///
    /// The buffer is `ξ + (Q̄(t) - Q̄(0))ν`. The server measure is assembled
    /// from its tails on a grid of the solver's step, read as a piecewise
    /// constant density.
    pub fn reconstruct_measures(&self, t: f64) -> Result<(Measure, Measure), FluidError> {
        let init = self.init.as_ref().ok_or(FluidError::NoInitialCondition)?;
        if t == 0.0 {
            return Ok((init.xi.clone(), init.mu.clone()));
        }
        let (n, frac) = self.locate(t)?;
        let u = (n as f64 + frac) * self.step;
        let q_t = interp(&self.q, self.step, u);
        let q_0 = init.xi.total_mass();
        let nu = self.spec.nu();
        let buffer = if init.buffer_follows(&self.spec) {
            nu.scale(q_t)?
        } else if q_t >= q_0 {
            init.xi.add(&nu.scale(q_t - q_0)?)
        } else {
            return Err(FluidError::NotReconstructible);
        };

        let m = self.y_cells(&init.mu, u);
        let lo = self.server_tails(&init.mu, n, m + 1);
        let tails = if frac > 0.0 && n + 1 < self.x.len() {
            let hi = self.server_tails(&init.mu, n + 1, m + 1);
            lo.iter().zip(&hi).map(|(a, b)| a + frac * (b - a)).collect()
        } else {
            lo
        };
        let s = self.step;
        let pieces: Vec<Piece> = (0..m)
            .filter_map(|i| {
                let dens = (tails[i] - tails[i + 1]).max(0.0) / s;
                (dens > 0.0).then(|| Piece::new(i as f64 * s, (i + 1) as f64 * s, [dens, 0.0, 0.0, 0.0]))
            })
            .collect();
        let rest = tails[m].max(0.0);
        let atoms = if rest > 0.0 { vec![(m as f64 * s, rest)] } else { Vec::new() };
        let server = Measure::new(atoms, pieces, Vec::new())?;
        Ok((buffer, server))
    }

    /// CSV with columns `t,y,buffer_tail,server_tail`.
    pub fn write_reconstruction_csv<W: Write>(&self, times: &[f64], ys: &[f64], out: W) -> Result<(), FluidError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| FluidError::InvalidInitialCondition(format!("csv output failed: {e}"));
        w.write_record(["t", "y", "buffer_tail", "server_tail"]).map_err(io)?;
        for &t in times {
            let (b, s) = self.reconstruct_measures(t)?;
            for &y in ys {
                w.write_record([t.to_string(), y.to_string(), b.tail(y).to_string(), s.tail(y).to_string()]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| FluidError::InvalidInitialCondition(format!("csv output failed: {e}")))?;
        Ok(())
    }
}

fn interp(v: &[f64], step: f64, u: f64) -> f64 {
    let pos = (u / step).max(0.0);
    let last = v.len() - 1;
    if pos >= last as f64 {
        return v[last];
    }
    let k = pos.floor() as usize;
    v[k] + (pos - k as f64) * (v[k + 1] - v[k])
}

/// The `ε`-perturbation of a nonzero initial condition, `ε ∈ (-1, 1)`.
///
/// Upward (`ε > 0`):
/// * `⟨1,μ⟩ < K`: `(ξ + (ε - r)⁺μ, (1 + r ∧ ε)μ)` with `r = (K - ⟨1,μ⟩)/⟨1,μ⟩`;
/// * `⟨1,μ⟩ = K`, `ξ = 0`: `(εμ, μ)`;
/// * `ξ ≠ 0`: `(ξ + ε(ξ+μ), μ)`.
///
/// Downward (`ε = -δ < 0`), with `a = δ⟨χ,ξ+μ⟩/⟨χ,ξ⟩`:
/// * `ξ = 0`: `(0, (1-δ)μ)`;
/// * `ξ ≠ 0`: `((1-a)⁺ξ, c·μ)` with `c = (1-δ)⟨χ,ξ+μ⟩/⟨χ,μ⟩` if `a > 1`,
///   `c = 1` otherwise.
///
/// The workload becomes `(1+ε)⟨χ,ξ+μ⟩` and the policy condition still
/// holds; for `ε > 0` in the first and third cases the buffer is no longer
/// a multiple of `ν`.
pub fn perturb(init: &ValidInitialCondition, eps: f64, k: f64) -> Result<ValidInitialCondition, FluidError> {
    if init.is_zero() {
        return Err(FluidError::ZeroInitialCondition);
    }
    if !(eps > -1.0 && eps < 1.0) {
        return Err(FluidError::InvalidEpsilon(eps));
    }
    check_k(k)?;
    let (xi, mu) = (&init.xi, &init.mu);
    let mu_mass = mu.total_mass();
    let xi_zero = xi.is_zero();
    let (new_xi, new_mu) = if eps >= 0.0 {
        if mu_mass < k * (1.0 - MASS_TOL) {
            let r = (k - mu_mass) / mu_mass;
            (xi.add(&mu.scale((eps - r).max(0.0))?), mu.scale(1.0 + r.min(eps))?)
        } else if xi_zero {
            (mu.scale(eps)?, mu.clone())
        } else {
            (xi.add(&xi.add(mu).scale(eps)?), mu.clone())
        }
    } else {
        let delta = -eps;
        if xi_zero {
            (Measure::zero(), mu.scale(1.0 - delta)?)
        } else {
            let w_xi = xi.moment(1.0)?;
            let w_mu = mu.moment(1.0)?;
            let ratio = delta * (w_xi + w_mu) / w_xi;
            let c = if ratio > 1.0 { (1.0 - delta) * (w_xi + w_mu) / w_mu } else { 1.0 };
            (xi.scale((1.0 - ratio).max(0.0))?, mu.scale(c)?)
        }
    };
    ValidInitialCondition::policy_consistent(new_xi, new_mu, k)
}

/// Checks `x^{-ε} ≤ x ≤ x^{ε}` at every grid point, up to `3·step`.
pub fn comparison_check(
    init: &ValidInitialCondition,
    eps: f64,
    k: f64,
    spec: &DistributionSpec,
    grid: FluidGrid,
) -> Result<bool, FluidError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(FluidError::InvalidEpsilon(eps));
    }
    let up = perturb(init, eps, k)?;
    let down = perturb(init, -eps, k)?;
    let x = FluidSolution::solve(init, spec, k, grid)?.x;
    let xu = FluidSolution::solve(&up, spec, k, grid)?.x;
    let xd = FluidSolution::solve(&down, spec, k, grid)?.x;
    let slack = 3.0 * grid.step;
    Ok((0..x.len()).all(|j| xd[j] <= x[j] + slack && x[j] <= xu[j] + slack))
}

/// Whether `(ξ, μ)` is the lift of its own workload, within `tol` in the
/// product Prohorov metric.
pub fn equilibrium_check(init: &ValidInitialCondition, k: f64, spec: &DistributionSpec, tol: f64) -> Result<bool, FluidError> {
    let (xi, mu) = lift(init.w, k, spec)?;
    let d = prohorov_distance_pair((&init.xi, &init.mu), (&xi, &mu), tol / 10.0);
    Ok(d < tol)
}

/// Settings for [`convergence_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceOptions {
    pub step: f64,
    /// Number of dyadic checkpoints `horizon·2^{-i}`.
    pub checkpoints: usize,
    /// Bisection tolerance of the Prohorov metric.
    pub metric_tol: f64,
    /// Moment bound `M` of the initial family.
    pub big_m: f64,
    pub max_points: usize,
}

impl ConvergenceOptions {
    pub fn for_spec(spec: &DistributionSpec) -> Self {
        Self { step: spec.beta() / 100.0, checkpoints: 6, metric_tol: 1e-5, big_m: 20.0, max_points: 4_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Ascending checkpoint times, the last one being the horizon.
    pub times: Vec<f64>,
    /// `distances[i][c]`: distance of initial condition `i` at checkpoint `c`.
    pub distances: Vec<Vec<f64>>,
    /// Sup over initial conditions per checkpoint.
    pub sup: Vec<f64>,
    /// `|x(horizon) - x(∞)|` per initial condition.
    pub size_gap: Vec<f64>,
    pub metric_tol: f64,
}

impl ConvergenceReport {
    pub fn final_sup(&self) -> f64 {
        *self.sup.last().unwrap_or(&0.0)
    }

    /// Nonincreasing over checkpoints, up to `slack`.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        self.sup.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// Distance of the fluid state from the equilibrium lift of its workload,
/// at dyadic checkpoints up to `horizon`, for each initial condition.
pub fn convergence_report(
    inits: &[ValidInitialCondition],
    k: f64,
    spec: &DistributionSpec,
    horizon: f64,
    opts: ConvergenceOptions,
) -> Result<ConvergenceReport, FluidError> {
    if spec.has_atoms() {
        return Err(FluidError::LatticeLaw);
    }
    let p = spec.p();
    for (index, init) in inits.iter().enumerate() {
        let total = init.xi.add(&init.mu);
        let m1 = total.moment(1.0)?;
        let mp = total.moment(1.0 + p)?;
        if m1 >= opts.big_m || mp >= opts.big_m {
            return Err(FluidError::OutsideFamily {
                index,
                reason: format!("moments {m1} and {mp} must both be below {}", opts.big_m),
            });
        }
    }
    let times: Vec<f64> = (0..opts.checkpoints).rev().map(|i| horizon / 2f64.powi(i as i32)).collect();
    let rows: Vec<(Vec<f64>, f64)> = inits
        .par_iter()
        .map(|init| -> Result<(Vec<f64>, f64), FluidError> {
            let (txi, tmu) = lift(init.w, k, spec)?;
            if init.is_zero() {
                return Ok((vec![0.0; times.len()], 0.0));
            }
            let sol = FluidSolution::solve_until(init, spec, k, opts.step, horizon, opts.max_points)?;
            let mut d = Vec::with_capacity(times.len());
            for &t in &times {
                let (b, s) = sol.reconstruct_measures(t)?;
                d.push(prohorov_distance_pair((&b, &s), (&txi, &tmu), opts.metric_tol));
            }
            let (x_h, _, _) = sol.state_at(horizon)?;
            Ok((d, (x_h - sol.x_inf).abs()))
        })
        .collect::<Result<_, _>>()?;
    let sup = (0..times.len()).map(|c| rows.iter().map(|r| r.0[c]).fold(0.0, f64::max)).collect();
    Ok(ConvergenceReport {
        times,
        size_gap: rows.iter().map(|r| r.1).collect(),
        distances: rows.into_iter().map(|r| r.0).collect(),
        sup,
        metric_tol: opts.metric_tol,
    })
}
