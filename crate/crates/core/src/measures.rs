//! Finite nonnegative measures on `[0, ∞)`.
//!
//! A [`Measure`] is a finite sum of atoms, cubic density pieces on bounded
//! intervals and exponential tails `scale·e^{-rate(x-start)}` on
//! `[start, ∞)`. Tails `m((y, ∞))`, distribution functions and integer
//! moments are exact up to rounding; fractional moments use adaptive
//! Gauss–Kronrod quadrature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::integrate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("atom at {location} with weight {weight} is invalid")]
    InvalidAtom { location: f64, weight: f64 },
    #[error("density piece on [{a}, {b}) is malformed")]
    InvalidPiece { a: f64, b: f64 },
    #[error("density piece on [{a}, {b}) takes negative values")]
    NegativeDensity { a: f64, b: f64 },
    #[error("density pieces overlap near {at}")]
    OverlappingPieces { at: f64 },
    #[error("exponential tail (start {start}, rate {rate}, scale {scale}) is invalid")]
    InvalidExpTail { start: f64, rate: f64, scale: f64 },
    #[error("moment of order {order} must be a finite nonnegative number")]
    InvalidOrder { order: f64 },
    #[error("quadrature for the moment of order {order} did not converge")]
    Divergent { order: f64 },
    #[error("tail distance {eps} is not below 1, the bound does not apply")]
    BoundInapplicable { eps: f64 },
    #[error("moment condition fails: {moment} is not below {bound}")]
    MomentCondition { moment: f64, bound: f64 },
    #[error("scale factor {0} must be finite and nonnegative")]
    InvalidScale(f64),
    #[error("the equilibrium law needs a measure with positive finite mean and pieces of degree at most 2")]
    NoEquilibrium,
}

/// Nondecreasing right-continuous function used as a Stieltjes integrator.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Cubic density `c0 + c1·t + c2·t² + c3·t³` in the local coordinate
/// `t = x - a` on `[a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub a: f64,
    pub b: f64,
    pub coeffs: [f64; 4],
}

impl Piece {
    pub fn new(a: f64, b: f64, coeffs: [f64; 4]) -> Self {
        Self { a, b, coeffs }
    }

    pub fn density(&self, x: f64) -> f64 {
        let t = x - self.a;
        let c = &self.coeffs;
        ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
    }

    fn antiderivative(&self, t: f64) -> f64 {
        let c = &self.coeffs;
        (((c[3] / 4.0 * t + c[2] / 3.0) * t + c[1] / 2.0) * t + c[0]) * t
    }

    /// Mass on `[lo, hi] ∩ [a, b]`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(self.a);
        let hi = hi.min(self.b);
        if hi <= lo {
            return 0.0;
        }
        self.antiderivative(hi - self.a) - self.antiderivative(lo - self.a)
    }

    pub fn mass(&self) -> f64 {
        self.antiderivative(self.b - self.a)
    }

    /// The same polynomial expressed in the coordinate `x - u`.
    fn shifted(&self, u: f64) -> [f64; 4] {
        let d = u - self.a;
        let c = &self.coeffs;
        [
            c[0] + d * (c[1] + d * (c[2] + d * c[3])),
            c[1] + d * (2.0 * c[2] + 3.0 * d * c[3]),
            c[2] + 3.0 * d * c[3],
            c[3],
        ]
    }

    fn degree(&self) -> usize {
        (0..4).rev().find(|&i| self.coeffs[i] != 0.0).unwrap_or(0)
    }
}

/// Density `scale·e^{-rate(x-start)}` on `[start, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTail {
    pub start: f64,
    pub rate: f64,
    pub scale: f64,
}

impl ExpTail {
    pub fn mass(&self) -> f64 {
        self.scale / self.rate
    }

    fn tail(&self, y: f64) -> f64 {
        if y <= self.start {
            self.mass()
        } else {
            self.mass() * (-self.rate * (y - self.start)).exp()
        }
    }

    fn density(&self, x: f64) -> f64 {
        if x < self.start {
            0.0
        } else {
            self.scale * (-self.rate * (x - self.start)).exp()
        }
    }
}

/// Finite nonnegative measure on `[0, ∞)`. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRecord", into = "MeasureRecord")]
pub struct Measure {
    atoms: Vec<(f64, f64)>,
    atom_suffix: Vec<f64>,
    pieces: Vec<Piece>,
    piece_suffix: Vec<f64>,
    exp_tails: Vec<ExpTail>,
    total_mass: f64,
}

impl Default for Measure {
    fn default() -> Self {
        Self::zero()
    }
}

impl Measure {
    pub fn zero() -> Self {
        Self {
            atoms: Vec::new(),
            atom_suffix: vec![0.0],
            pieces: Vec::new(),
            piece_suffix: vec![0.0],
            exp_tails: Vec::new(),
            total_mass: 0.0,
        }
    }

    pub fn new(atoms: Vec<(f64, f64)>, pieces: Vec<Piece>, exp_tails: Vec<ExpTail>) -> Result<Self, MeasureError> {
        let mut atoms: Vec<(f64, f64)> = atoms
            .into_iter()
            .map(|(l, w)| {
                if l.is_finite() && l >= 0.0 && w.is_finite() && w >= 0.0 {
                    Ok((l, w))
                } else {
                    Err(MeasureError::InvalidAtom { location: l, weight: w })
                }
            })
            .filter(|r| !matches!(r, Ok((_, w)) if *w == 0.0))
            .collect::<Result<_, _>>()?;
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (l, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == l => last.1 += w,
                _ => merged.push((l, w)),
            }
        }

        let mut pieces: Vec<Piece> = pieces.into_iter().filter(|p| p.coeffs.iter().any(|&c| c != 0.0)).collect();
        for p in &pieces {
            if !(p.a.is_finite() && p.b.is_finite() && p.a >= 0.0 && p.b > p.a && p.coeffs.iter().all(|c| c.is_finite())) {
                return Err(MeasureError::InvalidPiece { a: p.a, b: p.b });
            }
            let scale = p.coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max) * (1.0 + (p.b - p.a).powi(3));
            for i in 0..=16 {
                let x = p.a + (p.b - p.a) * i as f64 / 16.0;
                if p.density(x) < -1e-9 * scale {
                    return Err(MeasureError::NegativeDensity { a: p.a, b: p.b });
                }
            }
        }
        pieces.sort_by(|x, y| x.a.total_cmp(&y.a));
        for w in pieces.windows(2) {
            if w[0].b > w[1].a + 1e-12 * (1.0 + w[1].a.abs()) {
                return Err(MeasureError::OverlappingPieces { at: w[1].a });
            }
        }

        let exp_tails: Vec<ExpTail> = exp_tails
            .into_iter()
            .map(|e| {
                if e.start.is_finite() && e.start >= 0.0 && e.rate.is_finite() && e.rate > 0.0 && e.scale.is_finite() && e.scale >= 0.0 {
                    Ok(e)
                } else {
                    Err(MeasureError::InvalidExpTail { start: e.start, rate: e.rate, scale: e.scale })
                }
            })
            .filter(|r| !matches!(r, Ok(e) if e.scale == 0.0))
            .collect::<Result<_, _>>()?;

        Ok(Self::assemble(merged, pieces, exp_tails))
    }

    fn assemble(atoms: Vec<(f64, f64)>, pieces: Vec<Piece>, exp_tails: Vec<ExpTail>) -> Self {
        let mut atom_suffix = vec![0.0; atoms.len() + 1];
        for i in (0..atoms.len()).rev() {
            atom_suffix[i] = atom_suffix[i + 1] + atoms[i].1;
        }
        let mut piece_suffix = vec![0.0; pieces.len() + 1];
        for i in (0..pieces.len()).rev() {
            piece_suffix[i] = piece_suffix[i + 1] + pieces[i].mass();
        }
        let total_mass = atom_suffix[0] + piece_suffix[0] + exp_tails.iter().map(ExpTail::mass).sum::<f64>();
        Self { atoms, atom_suffix, pieces, piece_suffix, exp_tails, total_mass }
    }

    pub fn dirac(location: f64, weight: f64) -> Result<Self, MeasureError> {
        Self::new(vec![(location, weight)], Vec::new(), Vec::new())
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, MeasureError> {
        Self::new(atoms.into_iter().collect(), Vec::new(), Vec::new())
    }

    /// `mass` times the exponential law with the given rate.
    pub fn exponential(rate: f64, mass: f64) -> Result<Self, MeasureError> {
        Self::new(Vec::new(), Vec::new(), vec![ExpTail { start: 0.0, rate, scale: mass * rate }])
    }

    /// `mass` times the uniform law on `[a, b)`.
    pub fn uniform(a: f64, b: f64, mass: f64) -> Result<Self, MeasureError> {
        Self::new(Vec::new(), vec![Piece::new(a, b, [mass / (b - a), 0.0, 0.0, 0.0])], Vec::new())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn exp_tails(&self) -> &[ExpTail] {
        &self.exp_tails
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_zero(&self) -> bool {
        self.total_mass == 0.0
    }

    pub fn is_atomic(&self) -> bool {
        self.pieces.is_empty() && self.exp_tails.is_empty()
    }

    /// `m((y, ∞))`; equals the total mass for `y < 0`.
    pub fn tail(&self, y: f64) -> f64 {
        if y < 0.0 {
            return self.total_mass;
        }
        let i = self.atoms.partition_point(|a| a.0 <= y);
        self.atom_suffix[i] + self.piece_tail(y) + self.exp_tail_mass(y)
    }

    /// `m([y, ∞))`.
    pub fn tail_closed(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return self.total_mass;
        }
        let i = self.atoms.partition_point(|a| a.0 < y);
        self.atom_suffix[i] + self.piece_tail(y) + self.exp_tail_mass(y)
    }

    fn piece_tail(&self, y: f64) -> f64 {
        let j = self.pieces.partition_point(|p| p.b <= y);
        if j == self.pieces.len() {
            return 0.0;
        }
        let p = &self.pieces[j];
        if p.a < y {
            p.mass_between(y, p.b) + self.piece_suffix[j + 1]
        } else {
            self.piece_suffix[j]
        }
    }

    fn exp_tail_mass(&self, y: f64) -> f64 {
        self.exp_tails.iter().map(|e| e.tail(y)).sum()
    }

    /// `m([0, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            (self.total_mass - self.tail(x)).max(0.0)
        }
    }

    /// `m([0, x))`.
    pub fn cdf_open(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            (self.total_mass - self.tail_closed(x)).max(0.0)
        }
    }

    /// Density of the absolutely continuous part at `x`.
    pub fn density(&self, x: f64) -> f64 {
        let j = self.pieces.partition_point(|p| p.b <= x);
        let poly = match self.pieces.get(j) {
            Some(p) if p.a <= x => p.density(x),
            _ => 0.0,
        };
        poly + self.exp_tails.iter().map(|e| e.density(x)).sum::<f64>()
    }

    /// `⟨χ^k, m⟩`.
    pub fn moment(&self, k: f64) -> Result<f64, MeasureError> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(MeasureError::InvalidOrder { order: k });
        }
        if k == 0.0 {
            return Ok(self.total_mass);
        }
        let mut total: f64 = self.atoms.iter().map(|&(l, w)| w * l.powf(k)).sum();
        let scale = 1.0 + self.total_mass;
        for p in &self.pieces {
            let v = integrate(|x| x.powf(k) * p.density(x), p.a, p.b, 1e-15 * scale, 1e-13)
                .ok_or(MeasureError::Divergent { order: k })?;
            total += v;
        }
        for e in &self.exp_tails {
            if e.start == 0.0 {
                total += e.scale * statrs::function::gamma::gamma(k + 1.0) / e.rate.powf(k + 1.0);
            } else {
                // substitute x = start + t/rate
                let f = |t: f64| (e.start + t / e.rate).powf(k) * (-t).exp();
                let mut acc = 0.0;
                for (lo, hi) in [(0.0, 10.0), (10.0, 40.0), (40.0, 200.0)] {
                    acc += integrate(f, lo, hi, 1e-15 * scale, 1e-13).ok_or(MeasureError::Divergent { order: k })?;
                }
                total += e.scale / e.rate * acc;
            }
        }
        Ok(total)
    }

    /// The measure `c·m`.
    pub fn scale(&self, c: f64) -> Result<Self, MeasureError> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(MeasureError::InvalidScale(c));
        }
        if c == 0.0 {
            return Ok(Self::zero());
        }
        let atoms = self.atoms.iter().map(|&(l, w)| (l, w * c)).collect();
        let pieces = self.pieces.iter().map(|p| Piece::new(p.a, p.b, p.coeffs.map(|x| x * c))).collect();
        let exp_tails = self.exp_tails.iter().map(|e| ExpTail { scale: e.scale * c, ..*e }).collect();
        Ok(Self::assemble(atoms, pieces, exp_tails))
    }

    /// The sum `m + other`. Overlapping density pieces are merged on the
    /// common refinement of their partitions.
    pub fn add(&self, other: &Measure) -> Measure {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (l, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == l => last.1 += w,
                _ => merged.push((l, w)),
            }
        }

        let pieces = if other.pieces.is_empty() {
            self.pieces.clone()
        } else if self.pieces.is_empty() {
            other.pieces.clone()
        } else {
            let mut cuts: Vec<f64> = self.pieces.iter().chain(&other.pieces).flat_map(|p| [p.a, p.b]).collect();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut out = Vec::new();
            for w in cuts.windows(2) {
                let (u, v) = (w[0], w[1]);
                let mid = 0.5 * (u + v);
                let mut coeffs = [0.0; 4];
                let mut covered = false;
                for list in [&self.pieces, &other.pieces] {
                    let j = list.partition_point(|p| p.b <= mid);
                    if let Some(p) = list.get(j) {
                        if p.a <= mid {
                            covered = true;
                            for (c, s) in coeffs.iter_mut().zip(p.shifted(u)) {
                                *c += s;
                            }
                        }
                    }
                }
                if covered {
                    out.push(Piece::new(u, v, coeffs));
                }
            }
            out
        };

        let mut exp_tails = self.exp_tails.clone();
        exp_tails.extend_from_slice(&other.exp_tails);
        Self::assemble(merged, pieces, exp_tails)
    }

    /// Sorted, deduplicated atom locations, piece endpoints and tail starts.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.atoms.iter().map(|a| a.0).collect();
        v.extend(self.pieces.iter().flat_map(|p| [p.a, p.b]));
        v.extend(self.exp_tails.iter().map(|e| e.start));
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// A point beyond which the remaining mass is below `mass_tol`.
    pub fn support_bound(&self, mass_tol: f64) -> f64 {
        let mut hi = self.atoms.last().map_or(0.0, |a| a.0);
        if let Some(p) = self.pieces.last() {
            hi = hi.max(p.b);
        }
        for e in &self.exp_tails {
            let m = e.mass();
            let extra = if m > mass_tol { (m / mass_tol).ln() / e.rate } else { 0.0 };
            hi = hi.max(e.start + extra);
        }
        hi
    }

    /// Smallest `x` with `m([0, x]) ≥ prob·⟨1, m⟩`.
    pub fn quantile(&self, prob: f64) -> f64 {
        let target = prob.clamp(0.0, 1.0) * self.total_mass;
        if self.total_mass == 0.0 || self.cdf(0.0) >= target {
            return 0.0;
        }
        let mut hi = self.support_bound(1e-300).max(1e-300);
        while self.cdf(hi) < target && hi < 1e300 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// The equilibrium measure with density `m((x, ∞))/⟨χ, m⟩`.
    ///
    /// Needs positive finite mean and density pieces of degree at most 2, so
    /// that the result is again atomic-free with cubic pieces plus
    /// exponential tails.
    pub fn equilibrium(&self) -> Result<Measure, MeasureError> {
        let mean = self.moment(1.0)?;
        if !(mean.is_finite() && mean > 0.0) || self.pieces.iter().any(|p| p.degree() > 2) {
            return Err(MeasureError::NoEquilibrium);
        }
        // polynomial part of x ↦ m((x,∞)) coming from atoms and pieces, plus
        // the constant contribution of exponential tails before they start
        let mut cuts: Vec<f64> = vec![0.0];
        cuts.extend(self.atoms.iter().map(|a| a.0));
        cuts.extend(self.pieces.iter().flat_map(|p| [p.a, p.b]));
        cuts.extend(self.exp_tails.iter().map(|e| e.start));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let poly_tail = |y: f64| {
            let i = self.atoms.partition_point(|a| a.0 <= y);
            self.atom_suffix[i] + self.piece_tail(y)
        };
        let mut pieces = Vec::new();
        for w in cuts.windows(2) {
            let (u, v) = (w[0], w[1]);
            let mid = 0.5 * (u + v);
            let base = poly_tail(u) + self.exp_tails.iter().filter(|e| e.start >= v).map(ExpTail::mass).sum::<f64>();
            let j = self.pieces.partition_point(|p| p.b <= mid);
            let mut c = [base, 0.0, 0.0, 0.0];
            if let Some(p) = self.pieces.get(j) {
                if p.a <= mid {
                    let s = p.shifted(u);
                    c[1] = -s[0];
                    c[2] = -s[1] / 2.0;
                    c[3] = -s[2] / 3.0;
                }
            }
            if c.iter().any(|&x| x != 0.0) {
                pieces.push(Piece::new(u, v, c.map(|x| x / mean)));
            }
        }
        let exp_tails = self
            .exp_tails
            .iter()
            .map(|e| ExpTail { start: e.start, rate: e.rate, scale: e.mass() / mean })
            .collect();
        Self::new(Vec::new(), pieces, exp_tails)
    }

    fn has_density_on(&self, u: f64, v: f64) -> bool {
        let j = self.pieces.partition_point(|p| p.b <= u);
        let piece = self.pieces.get(j).is_some_and(|p| p.a < v);
        piece || self.exp_tails.iter().any(|e| e.start < v)
    }
}

impl Cdf for Measure {
    fn cdf(&self, x: f64) -> f64 {
        Measure::cdf(self, x)
    }
}

// ---------------------------------------------------------------------------
// Prohorov metric

/// Number of uniform subdivision points added to the knot grid for density
/// parts.
pub const DEFAULT_GRID: usize = 2000;

/// Prohorov distance `inf{ε > 0 : m1(A) ≤ m2(A^ε) + ε and m2(A) ≤ m1(A^ε) + ε}`
/// with `A^ε` the open ε-enlargement, to within `tol`.
///
/// The supremum over Borel sets is taken over finite unions of closed
/// intervals with endpoints on the merged atom/knot grid, found by a linear
/// dynamic program. This is exact when the first argument of each
/// inequality is atomic and a lower bound that tightens with the grid
/// otherwise.
pub fn prohorov_distance(m1: &Measure, m2: &Measure, tol: f64) -> f64 {
    prohorov_distance_with_grid(m1, m2, tol, DEFAULT_GRID)
}

pub fn prohorov_distance_with_grid(m1: &Measure, m2: &Measure, tol: f64, max_grid: usize) -> f64 {
    let grid = prohorov_grid(m1, m2, max_grid);
    let tol = tol.max(1e-15);
    let p12 = Excess::new(m1, m2, &grid);
    let p21 = Excess::new(m2, m1, &grid);
    let slack = 1e-12 * (1.0 + m1.total_mass + m2.total_mass);
    let ok = |eps: f64| p12.at(eps) <= eps + slack && p21.at(eps) <= eps + slack;
    let mut lo = 0.0;
    let mut hi = m1.total_mass.max(m2.total_mass);
    if hi == 0.0 || ok(0.0) {
        return 0.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Product metric on pairs: the larger componentwise distance.
pub fn prohorov_distance_pair(a: (&Measure, &Measure), b: (&Measure, &Measure), tol: f64) -> f64 {
    prohorov_distance(a.0, b.0, tol).max(prohorov_distance(a.1, b.1, tol))
}

fn prohorov_grid(m1: &Measure, m2: &Measure, max_grid: usize) -> Vec<f64> {
    let mut pts = m1.breakpoints();
    pts.extend(m2.breakpoints());
    let tails: Vec<ExpTail> = m1.exp_tails.iter().chain(&m2.exp_tails).copied().collect();
    let mut span = pts.iter().copied().fold(0.0, f64::max);
    for e in &tails {
        span = span.max(e.start + 30.0 / e.rate);
    }
    if span > 0.0 && max_grid > 0 {
        let delta = span / max_grid as f64;
        let mut subdivide = |a: f64, b: f64| {
            let n = ((b - a) / delta).ceil() as usize;
            for i in 1..n {
                pts.push(a + (b - a) * i as f64 / n as f64);
            }
            pts.push(b);
        };
        for p in m1.pieces.iter().chain(&m2.pieces) {
            subdivide(p.a, p.b);
        }
        for e in &tails {
            subdivide(e.start, e.start + 30.0 / e.rate);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// `sup_A m1(A) - m2(A^ε)` over unions of closed grid intervals.
struct Excess<'a> {
    m2: &'a Measure,
    grid: &'a [f64],
    below_open: Vec<f64>,
    below_closed: Vec<f64>,
    gap: f64,
}

impl<'a> Excess<'a> {
    fn new(m1: &Measure, m2: &'a Measure, grid: &'a [f64]) -> Self {
        Self {
            m2,
            grid,
            below_open: grid.iter().map(|&g| m1.cdf_open(g)).collect(),
            below_closed: grid.iter().map(|&g| m1.cdf(g)).collect(),
            gap: m1.total_mass - m2.total_mass,
        }
    }

    fn at(&self, eps: f64) -> f64 {
        // best[j]: optimum over unions inside the first j grid points;
        // run: max over open left ends i of best[i-1] + left(i)
        let mut best = 0.0_f64;
        let mut run = f64::NEG_INFINITY;
        for (k, &g) in self.grid.iter().enumerate() {
            let left = self.m2.cdf(g - eps) - self.below_open[k];
            run = run.max(best + left);
            let right = self.below_closed[k] - self.m2.cdf_open(g + eps);
            best = best.max(run + right);
        }
        // intervals [g_i, ∞)
        best.max(run + self.gap)
    }
}

// ---------------------------------------------------------------------------
// Tail distance and the bounds built on it

/// `sup_y |m1((y,∞)) - m2((y,∞))|`, including `y < 0` where the tails are
/// the total masses.
pub fn tail_sup_distance(m1: &Measure, m2: &Measure) -> f64 {
    let diff = |y: f64| (m1.tail(y) - m2.tail(y)).abs();
    let mut best = (m1.total_mass - m2.total_mass).abs();
    let mut pts = m1.breakpoints();
    pts.extend(m2.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    for &y in &pts {
        best = best.max(diff(y)).max((m1.tail_closed(y) - m2.tail_closed(y)).abs());
    }
    if m1.is_atomic() && m2.is_atomic() {
        return best;
    }
    let mut cells: Vec<(f64, f64)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    if !pts.is_empty() && (!m1.exp_tails.is_empty() || !m2.exp_tails.is_empty()) {
        let min_rate = m1.exp_tails.iter().chain(&m2.exp_tails).map(|e| e.rate).fold(f64::INFINITY, f64::min);
        let last = *pts.last().expect("non-empty");
        cells.push((last, last + 50.0 / min_rate));
    }
    for (u, v) in cells {
        if !(m1.has_density_on(u, v) || m2.has_density_on(u, v)) {
            continue;
        }
        const N: usize = 16;
        let xs: Vec<f64> = (0..=N).map(|i| u + (v - u) * i as f64 / N as f64).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| diff(x)).collect();
        let (imax, &vmax) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("samples");
        best = best.max(vmax);
        // golden-section refinement around the best sample
        let (mut a, mut b) = (xs[imax.saturating_sub(1)], xs[(imax + 1).min(N)]);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (diff(c), diff(d));
        for _ in 0..60 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = diff(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = diff(d);
            }
        }
        best = best.max(fc).max(fd);
    }
    best
}

/// Prohorov bound `(M+2)ε^{1/3}` from the tail distance `ε`, with `M` the
/// larger first moment.
pub fn prohorov_bound_from_tails(m1: &Measure, m2: &Measure) -> Result<f64, MeasureError> {
    let eps = tail_sup_distance(m1, m2);
    if eps >= 1.0 {
        return Err(MeasureError::BoundInapplicable { eps });
    }
    let big_m = m1.moment(1.0)?.max(m2.moment(1.0)?);
    Ok((big_m + 2.0) * eps.cbrt())
}

/// Bound `ε^{1/2} + (2M/q)ε^{q/2}` on the difference of first moments, for
/// measures at Prohorov distance below `eps` whose `(1+q)`-th moments are
/// below `big_m`.
///
/// The bound presumes masses of order one: `n` unit atoms at `0` against
/// `n` unit atoms at `δ` have distance `δ` and first moments `nδ` apart.
pub fn workload_diff_bound_for(eps: f64, q: f64, big_m: f64) -> Result<f64, MeasureError> {
    if !(eps < 1.0) {
        return Err(MeasureError::BoundInapplicable { eps });
    }
    Ok(eps.max(0.0).sqrt() + 2.0 * big_m / q * eps.max(0.0).powf(q / 2.0))
}

/// [`workload_diff_bound_for`] with `ε` the computed Prohorov distance.
pub fn workload_diff_bound(m1: &Measure, m2: &Measure, q: f64, big_m: f64, tol: f64) -> Result<f64, MeasureError> {
    for m in [m1, m2] {
        let mom = m.moment(1.0 + q)?;
        if mom >= big_m {
            return Err(MeasureError::MomentCondition { moment: mom, bound: big_m });
        }
    }
    workload_diff_bound_for(prohorov_distance(m1, m2, tol), q, big_m)
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExpTailField {
    One([f64; 3]),
    Many(Vec<[f64; 3]>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureRecord {
    #[serde(default)]
    atoms: Vec<[f64; 2]>,
    #[serde(default)]
    pieces: Vec<(f64, f64, [f64; 4])>,
    #[serde(default)]
    exp_tail: Option<ExpTailField>,
}

impl From<Measure> for MeasureRecord {
    fn from(m: Measure) -> Self {
        let tails: Vec<[f64; 3]> = m.exp_tails.iter().map(|e| [e.start, e.rate, e.scale]).collect();
        Self {
            atoms: m.atoms.iter().map(|&(l, w)| [l, w]).collect(),
            pieces: m.pieces.iter().map(|p| (p.a, p.b, p.coeffs)).collect(),
            exp_tail: match tails.len() {
                0 => None,
                1 => Some(ExpTailField::One(tails[0])),
                _ => Some(ExpTailField::Many(tails)),
            },
        }
    }
}

impl TryFrom<MeasureRecord> for Measure {
    type Error = MeasureError;

    fn try_from(r: MeasureRecord) -> Result<Self, Self::Error> {
        let tails = match r.exp_tail {
            None => Vec::new(),
            Some(ExpTailField::One(t)) => vec![t],
            Some(ExpTailField::Many(v)) => v,
        };
        Measure::new(
            r.atoms.into_iter().map(|[l, w]| (l, w)).collect(),
            r.pieces.into_iter().map(|(a, b, c)| Piece::new(a, b, c)).collect(),
            tails.into_iter().map(|[start, rate, scale]| ExpTail { start, rate, scale }).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp1() -> Measure {
        Measure::exponential(1.0, 1.0).unwrap()
    }

    /// Brute force over subsets of atoms for atomic measures.
    fn brute_force_prohorov(m1: &[(f64, f64)], m2: &[(f64, f64)], tol: f64) -> f64 {
        fn excess(a: &[(f64, f64)], b: &[(f64, f64)], eps: f64) -> f64 {
            let mut best: f64 = 0.0;
            for mask in 0u32..(1 << a.len()) {
                let chosen: Vec<f64> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i].0).collect();
                let ma: f64 = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i].1).sum();
                let mb: f64 = b.iter().filter(|(l, _)| chosen.iter().any(|c| (l - c).abs() < eps)).map(|x| x.1).sum();
                best = best.max(ma - mb);
            }
            best
        }
        let total = |m: &[(f64, f64)]| m.iter().map(|x| x.1).sum::<f64>();
        let (mut lo, mut hi) = (0.0, total(m1).max(total(m2)));
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if excess(m1, m2, mid) <= mid + 1e-12 && excess(m2, m1, mid) <= mid + 1e-12 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn tails_and_moments_of_simple_measures() {
        let d = Measure::dirac(2.0, 3.0).unwrap();
        assert_eq!(d.tail(1.0), 3.0);
        assert_eq!(d.tail(2.0), 0.0);
        assert_eq!(d.tail_closed(2.0), 3.0);
        assert_eq!(d.moment(1.0).unwrap(), 6.0);
        assert_eq!(d.moment(0.0).unwrap(), 3.0);
        assert!((exp1().tail(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((exp1().moment(2.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_exponential_second_moment() {
        // density e^{-x} on [0, 50) built from cubic pieces via the shifted exponential tails
        let trunc = Measure::new(
            Vec::new(),
            Vec::new(),
            vec![ExpTail { start: 0.0, rate: 1.0, scale: 1.0 }],
        )
        .unwrap();
        let tail_part = Measure::new(Vec::new(), Vec::new(), vec![ExpTail { start: 50.0, rate: 1.0, scale: (-50.0f64).exp() }]).unwrap();
        let full = trunc.moment(2.0).unwrap();
        let beyond = tail_part.moment(2.0).unwrap();
        assert!((full - beyond - 2.0).abs() < 1e-6);
        let oracle = integrate(|x: f64| x * x * (-x).exp(), 0.0, 50.0, 1e-13, 1e-13).unwrap();
        assert!((full - beyond - oracle).abs() < 1e-9);
    }

    #[test]
    fn fractional_moment_of_uniform() {
        let u = Measure::uniform(0.0, 2.0, 1.0).unwrap();
        let m = u.moment(1.5).unwrap();
        assert!((m - 2f64.powf(2.5) / 2.5 / 2.0).abs() < 1e-10);
    }

    #[test]
    fn addition_merges_pieces_and_atoms() {
        let a = Measure::uniform(0.0, 2.0, 2.0).unwrap().add(&Measure::dirac(1.0, 0.5).unwrap());
        let b = Measure::uniform(1.0, 3.0, 1.0).unwrap();
        let s = a.add(&b);
        assert!((s.total_mass() - 3.5).abs() < 1e-14);
        for y in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
            assert!((s.tail(y) - a.tail(y) - b.tail(y)).abs() < 1e-14);
        }
        assert_eq!(s.pieces().len(), 3);
    }

    #[test]
    fn quantiles_invert_the_cdf() {
        let e = exp1();
        assert!((e.quantile(0.5) - 2f64.ln()).abs() < 1e-12);
        let d = Measure::from_atoms([(1.0, 1.0), (2.0, 1.0)]).unwrap();
        assert_eq!(d.quantile(0.5), 1.0);
        assert_eq!(d.quantile(0.75), 2.0);
    }

    #[test]
    fn equilibrium_laws() {
        // exponential is its own equilibrium law
        let e = exp1().equilibrium().unwrap();
        assert!(tail_sup_distance(&e, &exp1()) < 1e-12);
        // deterministic d: uniform on [0, d)
        let d = Measure::dirac(2.0, 1.0).unwrap().equilibrium().unwrap();
        assert!((d.tail(0.5) - 0.75).abs() < 1e-14);
        // uniform(1,3): mean of the equilibrium law is E[v^2]/(2E[v])
        let u = Measure::uniform(1.0, 3.0, 1.0).unwrap();
        let ue = u.equilibrium().unwrap();
        let expected = u.moment(2.0).unwrap() / (2.0 * u.moment(1.0).unwrap());
        assert!((ue.moment(1.0).unwrap() - expected).abs() < 1e-12);
        assert!((ue.total_mass() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn prohorov_examples() {
        let d0 = Measure::dirac(0.0, 1.0).unwrap();
        let d3 = Measure::dirac(0.3, 1.0).unwrap();
        assert!(prohorov_distance(&d0, &d0, 1e-9) < 1e-8);
        assert!((prohorov_distance(&d0, &d3, 1e-9) - 0.3).abs() < 1e-8);
        let d0w2 = Measure::dirac(0.0, 2.0).unwrap();
        assert!((prohorov_distance(&d0w2, &d0, 1e-9) - 1.0).abs() < 1e-8);
        assert!(prohorov_distance(&exp1(), &exp1(), 1e-9) < 1e-8);
    }

    #[test]
    fn tail_sup_examples() {
        let d1 = Measure::dirac(1.0, 1.0).unwrap();
        let d2 = Measure::dirac(2.0, 1.0).unwrap();
        assert_eq!(tail_sup_distance(&d1, &d2), 1.0);
        let two = Measure::exponential(1.0, 2.0).unwrap();
        assert!((tail_sup_distance(&two, &exp1()) - 1.0).abs() < 1e-12);
        // unit-mean exponential against a 1.001-scaled copy
        let scaled = Measure::exponential(1.0, 1.001).unwrap();
        assert!((tail_sup_distance(&scaled, &exp1()) - 0.001).abs() < 1e-12);
        let b = prohorov_bound_from_tails(&scaled, &exp1()).unwrap();
        assert!((b - 3.001_f64 * 0.001f64.cbrt()).abs() < 1e-9);
    }

    #[test]
    fn workload_bound_example_and_counterexample() {
        let a = Measure::dirac(1.0, 1.0).unwrap();
        let b = Measure::dirac(1.01, 1.0).unwrap();
        let bound = workload_diff_bound(&a, &b, 1.0, 2.0, 1e-10).unwrap();
        assert!((bound - 5.0 * 0.1).abs() < 1e-6);
        assert!((a.moment(1.0).unwrap() - b.moment(1.0).unwrap()).abs() <= bound);

        // large total mass breaks the bound
        let n = 100.0;
        let c = Measure::dirac(0.0, n).unwrap();
        let d = Measure::dirac(0.01, n).unwrap();
        let eps = prohorov_distance(&c, &d, 1e-10);
        let diff = d.moment(1.0).unwrap() - c.moment(1.0).unwrap();
        let bound = workload_diff_bound_for(eps, 1.0, 2.0 * d.moment(2.0).unwrap()).unwrap();
        assert!(diff > bound);
    }

    #[test]
    fn serialization_round_trip() {
        let m = Measure::from_atoms([(0.5, 2.0)])
            .unwrap()
            .add(&Measure::uniform(0.0, 1.0, 1.0).unwrap())
            .add(&Measure::exponential(2.0, 0.5).unwrap());
        let s = serde_json::to_string(&m).unwrap();
        let back: Measure = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
        let parsed: Measure = serde_json::from_str(r#"{"atoms":[[1,2]],"pieces":[],"exp_tail":null}"#).unwrap();
        assert_eq!(parsed.total_mass(), 2.0);
        let mix: Measure = serde_json::from_str(r#"{"atoms":[],"pieces":[],"exp_tail":[[0,1,0.5],[0,2,1.0]]}"#).unwrap();
        assert!((mix.total_mass() - 1.0).abs() < 1e-15);
        assert!(serde_json::from_str::<Measure>(r#"{"atoms":[[-1,2]]}"#).is_err());
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(Measure::dirac(-1.0, 1.0).is_err());
        assert!(Measure::new(Vec::new(), vec![Piece::new(0.0, 1.0, [-1.0, 0.0, 0.0, 0.0])], Vec::new()).is_err());
        assert!(Measure::new(
            Vec::new(),
            vec![Piece::new(0.0, 2.0, [1.0, 0.0, 0.0, 0.0]), Piece::new(1.0, 3.0, [1.0, 0.0, 0.0, 0.0])],
            Vec::new()
        )
        .is_err());
        assert!(exp1().moment(-1.0).is_err());
    }

    fn atomic_strategy(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..2.0, 0.05f64..1.0), 1..=n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        #[test]
        fn knot_grid_matches_brute_force(a in atomic_strategy(5), b in atomic_strategy(5)) {
            let m1 = Measure::from_atoms(a.clone()).unwrap();
            let m2 = Measure::from_atoms(b.clone()).unwrap();
            let fast = prohorov_distance(&m1, &m2, 1e-9);
            let slow = brute_force_prohorov(m1.atoms(), m2.atoms(), 1e-9);
            prop_assert!((fast - slow).abs() < 1e-7, "{fast} vs {slow}");
        }

        #[test]
        fn metric_axioms(a in atomic_strategy(6), b in atomic_strategy(6), c in atomic_strategy(6)) {
            let tol = 1e-8;
            let (ma, mb, mc) = (Measure::from_atoms(a).unwrap(), Measure::from_atoms(b).unwrap(), Measure::from_atoms(c).unwrap());
            let ab = prohorov_distance(&ma, &mb, tol);
            prop_assert!((ab - prohorov_distance(&mb, &ma, tol)).abs() <= 2.0 * tol);
            let ac = prohorov_distance(&ma, &mc, tol);
            let bc = prohorov_distance(&mb, &mc, tol);
            prop_assert!(ac <= ab + bc + 3.0 * tol);
        }

        #[test]
        fn tail_integrates_to_first_moment(a in atomic_strategy(4), w in 0.1f64..2.0, rate in 0.5f64..3.0, lo in 0.0f64..1.0, len in 0.1f64..2.0) {
            let m = Measure::from_atoms(a).unwrap()
                .add(&Measure::exponential(rate, w).unwrap())
                .add(&Measure::uniform(lo, lo + len, w).unwrap());
            let mut cuts = m.breakpoints();
            cuts.push(m.support_bound(1e-18));
            cuts.sort_by(f64::total_cmp);
            let mut total = 0.0;
            let mut prev = 0.0;
            for &c in &cuts {
                total += integrate(|y| m.tail(y), prev, c, 1e-14, 1e-13).unwrap();
                prev = c;
            }
            let first = m.moment(1.0).unwrap();
            prop_assert!((total - first).abs() < 1e-8 * first);
        }
    }
}
