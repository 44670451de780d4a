//! Renewal functions and Stieltjes convolutions on uniform grids.

use std::io::Write;

use thiserror::Error;

use crate::conv::{linear_convolution, OnlineConvolution};
use crate::measures::Cdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenewalError {
    #[error("grid step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("grid function needs at least one finite value")]
    InvalidValues,
    #[error("horizon {u_max} must be a nonnegative multiple of the step")]
    InvalidHorizon { u_max: f64 },
    #[error("the distribution function must vanish at 0, found F(0) = {0}")]
    AtomAtZero(f64),
    #[error("step too coarse: doubling it moves U(u_max) by {relative_change:.3e} (relative)")]
    StepTooCoarse { relative_change: f64 },
    #[error("grid functions in a family must share step and length")]
    IncompatibleGrids,
}

/// How a [`GridFunction`] is read between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Constant on `[u_k, u_{k+1})`: the càdlàg step function.
    Step,
    /// Linear between grid points.
    Linear,
}

/// Values on the grid `u_k = k·step`, `k = 0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    step: f64,
    values: Vec<f64>,
    interp: Interp,
}

impl GridFunction {
    pub fn new(step: f64, values: Vec<f64>, interp: Interp) -> Result<Self, RenewalError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(RenewalError::InvalidStep(step));
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(RenewalError::InvalidValues);
        }
        Ok(Self { step, values, interp })
    }

    /// Samples `f` at `0, step, …, u_max`.
    pub fn from_fn(step: f64, u_max: f64, interp: Interp, f: impl Fn(f64) -> f64) -> Result<Self, RenewalError> {
        let n = grid_len(step, u_max)?;
        Self::new(step, (0..=n).map(|k| f(k as f64 * step)).collect(), interp)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interp(&self) -> Interp {
        self.interp
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn u_max(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// Value at `u`; `0` for `u < 0`, the last value beyond the grid.
    pub fn value(&self, u: f64) -> f64 {
        if u < 0.0 {
            return 0.0;
        }
        let pos = u / self.step;
        let last = self.values.len() - 1;
        if pos >= last as f64 {
            return self.values[last];
        }
        let k = pos.floor() as usize;
        match self.interp {
            Interp::Step => self.values[k],
            Interp::Linear => {
                let frac = pos - k as f64;
                self.values[k] + frac * (self.values[k + 1] - self.values[k])
            }
        }
    }

    /// Integral over `[0, u_max]` under the chosen interpretation.
    pub fn integral(&self) -> f64 {
        let v = &self.values;
        match self.interp {
            Interp::Step => v[..v.len() - 1].iter().sum::<f64>() * self.step,
            Interp::Linear => v.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() * self.step,
        }
    }

    /// Representative value on the cell `[u_k, u_{k+1})`.
    fn cell_value(&self, k: usize) -> f64 {
        match self.interp {
            Interp::Step => self.values[k],
            Interp::Linear => 0.5 * (self.values[k] + self.values[k + 1]),
        }
    }

    /// CSV with columns `u,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "value"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([(k as f64 * self.step).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Cdf for GridFunction {
    fn cdf(&self, x: f64) -> f64 {
        self.value(x)
    }
}

fn grid_len(step: f64, u_max: f64) -> Result<usize, RenewalError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(RenewalError::InvalidStep(step));
    }
    if !(u_max.is_finite() && u_max >= 0.0) {
        return Err(RenewalError::InvalidHorizon { u_max });
    }
    Ok((u_max / step).round() as usize)
}

/// Increments `F(k·step) - F((k-1)·step)` for `k = 1..=n`, stored at index `k`.
pub(crate) fn increments<G: Cdf + ?Sized>(g: &G, step: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    let mut prev = g.cdf(0.0);
    for (k, o) in out.iter_mut().enumerate().skip(1) {
        let cur = g.cdf(k as f64 * step);
        *o = cur - prev;
        prev = cur;
    }
    out
}

/// Renewal function `U = Σ F^{*n}`, the solution of `U = 1 + F∗U`.
///
/// Each cell integral uses the average of `U` at its endpoints against the
/// increment of `F`; the resulting implicit recursion is solved forward.
/// A second solve at twice the step flags grids that are too coarse.
pub fn renewal_function<F: Cdf + ?Sized>(f: &F, u_max: f64, step: f64) -> Result<GridFunction, RenewalError> {
    let fine = renewal_function_unchecked(f, u_max, step)?;
    let coarse = renewal_function_unchecked(f, u_max, 2.0 * step)?;
    let a = fine.value(coarse.u_max());
    let b = *coarse.values.last().expect("non-empty");
    let relative_change = (a - b).abs() / a.abs().max(1.0);
    if relative_change > 1e-3 {
        return Err(RenewalError::StepTooCoarse { relative_change });
    }
    Ok(fine)
}

/// [`renewal_function`] without the step-refinement check.
pub fn renewal_function_unchecked<F: Cdf + ?Sized>(f: &F, u_max: f64, step: f64) -> Result<GridFunction, RenewalError> {
    let n = grid_len(step, u_max)?;
    let f0 = f.cdf(0.0);
    if f0 != 0.0 {
        return Err(RenewalError::AtomAtZero(f0));
    }
    let df = increments(f, step, n + 1);
    // Σ_{k=1}^{j} ½(U_{j-k} + U_{j-k+1}) ΔF_k
    //   = ½ΔF_1 U_j + Σ_{d=1}^{j} w_d U_{j-d} - ½ΔF_{j+1} U_0
    let kernel: Vec<f64> = (0..=n).map(|d| if d == 0 { 0.0 } else { 0.5 * (df[d] + df[d + 1]) }).collect();
    let mut conv = OnlineConvolution::new(kernel, n);
    let diag = 0.5 * df[1];
    let mut values = Vec::with_capacity(n + 1);
    values.push(1.0);
    conv.push(1.0);
    for j in 1..=n {
        let rhs = 1.0 + conv.history() - 0.5 * df[j + 1] * values[0];
        let u = rhs / (1.0 - diag);
        values.push(u);
        conv.push(u);
    }
    GridFunction::new(step, values, Interp::Linear)
}

/// `(h∗G)(u) = ∫_{[0,u]} h(u - v) dG(v)` on the grid of `h`.
///
/// Each cell of `G` is weighted by the representative value of `h` on the
/// mirrored cell; an atom of `G` at `0` contributes `h(u)·G(0)`.
pub fn convolve_stieltjes<G: Cdf + ?Sized>(h: &GridFunction, g: &G) -> GridFunction {
    let n = h.len() - 1;
    let dg = increments(g, h.step, n);
    let g0 = g.cdf(0.0);
    let cells: Vec<f64> = (0..n).map(|k| h.cell_value(k)).collect();
    // result_m = Σ_{k=1}^{m} cells[m-k]·dg[k] = conv(cells, dg[1..])[m-1]
    let full = if n > 0 { linear_convolution(&cells, &dg[1..]) } else { Vec::new() };
    let values = (0..=n)
        .map(|m| {
            let hist = if m == 0 { 0.0 } else { full[m - 1] };
            hist + h.values[m] * g0
        })
        .collect();
    GridFunction { step: h.step, values, interp: h.interp }
}

/// Outcome of [`key_renewal_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRenewalReport {
    /// Sup over admissible members and over the window of `|U∗h(u) - ∫h/β|`.
    pub sup_deviation: f64,
    /// `(u, sup over members of the deviation at u)` for grid points in the window.
    pub deviation: Vec<(f64, f64)>,
    /// Limits `∫h/β` per member.
    pub limits: Vec<f64>,
    /// Members failing the nonnegative/nonincreasing precondition, with the reason.
    pub violations: Vec<(usize, String)>,
    pub beta: f64,
}

/// Compares `U∗h` with its key-renewal limit `∫h/β` uniformly over a family.
///
/// `β` is the integral of `1 - F` over the common grid (refined fourfold),
/// so `F` should have negligible mass beyond it.
pub fn key_renewal_check<F: Cdf + ?Sized>(
    family: &[GridFunction],
    f: &F,
    window: (f64, f64),
) -> Result<KeyRenewalReport, RenewalError> {
    let Some(first) = family.first() else {
        return Ok(KeyRenewalReport { sup_deviation: 0.0, deviation: Vec::new(), limits: Vec::new(), violations: Vec::new(), beta: f64::NAN });
    };
    if family.iter().any(|h| h.len() != first.len() || h.step != first.step) {
        return Err(RenewalError::IncompatibleGrids);
    }
    let step = first.step;
    let n = first.len() - 1;
    let fine = step / 4.0;
    let beta: f64 = (0..4 * n).map(|i| 1.0 - f.cdf((i as f64 + 0.5) * fine)).sum::<f64>() * fine;
    let u = renewal_function_unchecked(f, first.u_max(), step)?;

    let mut violations = Vec::new();
    for (i, h) in family.iter().enumerate() {
        if h.values.iter().any(|&v| v < 0.0) {
            violations.push((i, "takes negative values".to_string()));
        } else if h.values.windows(2).any(|w| w[1] > w[0] + 1e-12 * (1.0 + w[0].abs())) {
            violations.push((i, "is not nonincreasing".to_string()));
        }
    }
    let limits: Vec<f64> = family.iter().map(|h| h.integral() / beta).collect();
    let k0 = ((window.0 / step).ceil().max(0.0) as usize).min(n);
    let k1 = ((window.1 / step).floor().max(0.0) as usize).min(n);
    let mut dev = vec![0.0_f64; k1.saturating_sub(k0) + 1];
    for (i, h) in family.iter().enumerate() {
        if violations.iter().any(|v| v.0 == i) {
            continue;
        }
        let uh = convolve_stieltjes(h, &u);
        for (slot, k) in dev.iter_mut().zip(k0..=k1) {
            *slot = slot.max((uh.values[k] - limits[i]).abs());
        }
    }
    let deviation: Vec<(f64, f64)> = dev.iter().enumerate().map(|(i, &d)| ((k0 + i) as f64 * step, d)).collect();
    let sup_deviation = dev.iter().copied().fold(0.0, f64::max);
    Ok(KeyRenewalReport { sup_deviation, deviation, limits, violations, beta })
}

/// Residual of the integration-by-parts identity
/// `∫[1-F(u-v)]dq(v) = q(u) - [1-F(u)]q(0) - ∫q(u-v)dF(v)` at the grid
/// point nearest `u`.
pub fn integration_by_parts_check<F: Cdf + ?Sized>(f: &F, q: &GridFunction, u: f64) -> f64 {
    let n = ((u / q.step).round() as usize).min(q.len() - 1);
    let u = n as f64 * q.step;
    let lhs: f64 = (1..=n)
        .map(|k| {
            // a step function jumps at the left end of the cell, a linear one
            // is read at its midpoint
            let v = match q.interp {
                Interp::Step => k as f64 * q.step,
                Interp::Linear => (k as f64 - 0.5) * q.step,
            };
            (1.0 - f.cdf(u - v)) * (q.values[k] - q.values[k - 1])
        })
        .sum();
    let truncated = GridFunction { step: q.step, values: q.values[..=n].to_vec(), interp: q.interp };
    let conv = convolve_stieltjes(&truncated, f);
    let rhs = q.values[n] - (1.0 - f.cdf(u)) * q.values[0] - conv.values[n];
    (lhs - rhs).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_cdf(x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            1.0 - (-x).exp()
        }
    }

    #[test]
    fn exponential_renewal_function_is_linear() {
        let u = renewal_function(&exp_cdf, 10.0, 0.005).unwrap();
        assert_eq!(u.value(0.0), 1.0);
        for x in [0.5, 2.0, 7.3, 10.0] {
            assert!((u.value(x) - (1.0 + x)).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn deterministic_renewal_function_counts_lattice_points() {
        let det = |x: f64| if x >= 1.0 { 1.0 } else { 0.0 };
        let u = renewal_function_unchecked(&det, 4.0, 0.005).unwrap();
        assert!((u.value(2.5) - 3.0).abs() < 1e-12);
        assert!((u.value(3.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_steps_are_flagged() {
        let err = renewal_function(&exp_cdf, 50.0, 1.0).unwrap_err();
        assert!(matches!(err, RenewalError::StepTooCoarse { .. }));
        let atom = |_x: f64| 0.5;
        assert!(matches!(renewal_function(&atom, 1.0, 0.1), Err(RenewalError::AtomAtZero(_))));
    }

    #[test]
    fn convolution_examples() {
        let zero = GridFunction::from_fn(0.01, 3.0, Interp::Linear, |_| 0.0).unwrap();
        assert!(convolve_stieltjes(&zero, &exp_cdf).values().iter().all(|&v| v == 0.0));
        let one = GridFunction::from_fn(0.01, 3.0, Interp::Linear, |_| 1.0).unwrap();
        let c = convolve_stieltjes(&one, &exp_cdf);
        assert!((c.value(2.0) - exp_cdf(2.0)).abs() < 1e-12);
        let h = GridFunction::from_fn(0.01, 3.0, Interp::Linear, |u| (-u).exp()).unwrap();
        let c = convolve_stieltjes(&h, &exp_cdf);
        assert!((c.value(1.0) - (-1.0f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn key_renewal_examples() {
        let ind = GridFunction::from_fn(0.005, 6.0, Interp::Step, |u| if u < 1.0 { 1.0 } else { 0.0 }).unwrap();
        let r = key_renewal_check(std::slice::from_ref(&ind), &exp_cdf, (1.0, 6.0)).unwrap();
        assert!(r.sup_deviation < 1e-2, "{}", r.sup_deviation);
        let empty = key_renewal_check(&[], &exp_cdf, (0.0, 1.0)).unwrap();
        assert_eq!(empty.sup_deviation, 0.0);
        let bad = GridFunction::from_fn(0.005, 6.0, Interp::Linear, |u| u).unwrap();
        let r = key_renewal_check(&[bad], &exp_cdf, (1.0, 6.0)).unwrap();
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn integration_by_parts_examples() {
        let step = 0.001;
        let c = GridFunction::from_fn(step, 1.0, Interp::Linear, |_| 2.0).unwrap();
        assert!(integration_by_parts_check(&exp_cdf, &c, 1.0) < 1e-12);
        let id = GridFunction::from_fn(step, 1.0, Interp::Linear, |v| v).unwrap();
        assert!(integration_by_parts_check(&exp_cdf, &id, 1.0) < 5.0 * step);
        let jump = GridFunction::from_fn(step, 1.0, Interp::Step, |v| if v >= 0.5 { 3.0 } else { 0.0 }).unwrap();
        assert!(integration_by_parts_check(&exp_cdf, &jump, 1.0) < 5.0 * step);
    }

    #[test]
    fn csv_export() {
        let g = GridFunction::from_fn(0.5, 1.0, Interp::Step, |u| u * 2.0).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "u,value\n0,0\n0.5,1\n1,2\n");
    }
}
