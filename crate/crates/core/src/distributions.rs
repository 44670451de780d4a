//! Job-size and interarrival laws.
//!
//! A [`DistributionSpec`] caches the law `ν` and its equilibrium law `ν_e`
//! (density `(1 - F(x))/β`) as [`Measure`]s, so that `F`, `F_e`, `β`, `β_e`
//! and all moments are read off one exact representation.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{ExpTail, Measure, MeasureError, Piece};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Supported families. Serialized as `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params")]
pub enum Family {
    #[serde(rename = "exp")]
    Exponential { rate: f64 },
    #[serde(rename = "hyperexp")]
    HyperExponential { probs: Vec<f64>, rates: Vec<f64> },
    #[serde(rename = "det")]
    Deterministic { d: f64 },
    #[serde(rename = "uniform")]
    Uniform { a: f64, b: f64 },
    /// Log-normal law truncated at `cap` (default: its `1 - 1e-8` quantile).
    #[serde(rename = "lognormal")]
    LogNormal {
        mu: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<f64>,
    },
}

pub const DEFAULT_P: f64 = 0.5;
const LOGNORMAL_SEGMENTS: usize = 2000;
const LOGNORMAL_CAP_PROB: f64 = 1.0 - 1e-8;

#[derive(Serialize, Deserialize)]
struct SpecRecord {
    #[serde(flatten)]
    family: Family,
    #[serde(default = "default_p")]
    p: f64,
}

fn default_p() -> f64 {
    DEFAULT_P
}

/// A law `ν` on `(0, ∞)` with its derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRecord", into = "SpecRecord")]
pub struct DistributionSpec {
    family: Family,
    p: f64,
    nu: Measure,
    nu_e: Measure,
    beta: f64,
    second_moment: f64,
    beta_e: f64,
    cap: Option<f64>,
}

impl From<DistributionSpec> for SpecRecord {
    fn from(s: DistributionSpec) -> Self {
        Self { family: s.family, p: s.p }
    }
}

impl TryFrom<SpecRecord> for DistributionSpec {
    type Error = DistributionError;

    fn try_from(r: SpecRecord) -> Result<Self, Self::Error> {
        Self::new(r.family, r.p)
    }
}

fn invalid(msg: impl Into<String>) -> DistributionError {
    DistributionError::InvalidParameter(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), DistributionError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl DistributionSpec {
    pub fn new(family: Family, p: f64) -> Result<Self, DistributionError> {
        positive("p", p)?;
        let mut cap = None;
        let nu = match &family {
            Family::Exponential { rate } => {
                positive("rate", *rate)?;
                Measure::exponential(*rate, 1.0)?
            }
            Family::HyperExponential { probs, rates } => {
                if probs.is_empty() || probs.len() != rates.len() {
                    return Err(invalid("hyperexp needs equally many probs and rates"));
                }
                for &q in probs {
                    if !(q.is_finite() && q >= 0.0) {
                        return Err(invalid(format!("branch probability {q} is invalid")));
                    }
                }
                for &r in rates {
                    positive("rate", r)?;
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(invalid("hyperexp branch probabilities must sum to 1"));
                }
                let tails = probs
                    .iter()
                    .zip(rates)
                    .map(|(&q, &r)| ExpTail { start: 0.0, rate: r, scale: q * r })
                    .collect();
                Measure::new(Vec::new(), Vec::new(), tails)?
            }
            Family::Deterministic { d } => {
                positive("d", *d)?;
                Measure::dirac(*d, 1.0)?
            }
            Family::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a >= 0.0 && b > a) {
                    return Err(invalid(format!("uniform needs 0 <= a < b, got a={a}, b={b}")));
                }
                Measure::uniform(*a, *b, 1.0)?
            }
            Family::LogNormal { mu, sigma, cap: c } => {
                if !mu.is_finite() {
                    return Err(invalid("mu must be finite"));
                }
                positive("sigma", *sigma)?;
                let resolved = match c {
                    Some(c) => {
                        positive("cap", *c)?;
                        *c
                    }
                    None => (mu + sigma * normal_quantile(LOGNORMAL_CAP_PROB)).exp(),
                };
                cap = Some(resolved);
                lognormal_measure(*mu, *sigma, resolved)?
            }
        };
        let nu_e = nu.equilibrium()?;
        let beta = nu.moment(1.0)?;
        let second_moment = nu.moment(2.0)?;
        let beta_e = nu_e.moment(1.0)?;
        Ok(Self { family, p, nu, nu_e, beta, second_moment, beta_e, cap })
    }

    pub fn exponential(rate: f64) -> Result<Self, DistributionError> {
        Self::new(Family::Exponential { rate }, DEFAULT_P)
    }

    pub fn hyperexponential(probs: Vec<f64>, rates: Vec<f64>) -> Result<Self, DistributionError> {
        Self::new(Family::HyperExponential { probs, rates }, DEFAULT_P)
    }

    pub fn deterministic(d: f64) -> Result<Self, DistributionError> {
        Self::new(Family::Deterministic { d }, DEFAULT_P)
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self, DistributionError> {
        Self::new(Family::Uniform { a, b }, DEFAULT_P)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self, DistributionError> {
        Self::new(Family::LogNormal { mu, sigma, cap: None }, DEFAULT_P)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// The law `ν`.
    pub fn nu(&self) -> &Measure {
        &self.nu
    }

    /// The equilibrium law `ν_e`.
    pub fn nu_e(&self) -> &Measure {
        &self.nu_e
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn beta_e(&self) -> f64 {
        self.beta_e
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        (self.second_moment - self.beta * self.beta) / (self.beta * self.beta)
    }

    pub fn moment(&self, k: f64) -> Result<f64, DistributionError> {
        Ok(self.nu.moment(k)?)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.nu.cdf(x)
    }

    pub fn equilibrium_cdf(&self, x: f64) -> f64 {
        self.nu_e.cdf(x)
    }

    pub fn has_atoms(&self) -> bool {
        !self.nu.atoms().is_empty()
    }

    /// The same family rescaled to mean `mean`.
    pub fn with_mean(&self, mean: f64) -> Result<Self, DistributionError> {
        positive("mean", mean)?;
        let c = mean / self.beta;
        let family = match &self.family {
            Family::Exponential { rate } => Family::Exponential { rate: rate / c },
            Family::HyperExponential { probs, rates } => {
                Family::HyperExponential { probs: probs.clone(), rates: rates.iter().map(|r| r / c).collect() }
            }
            Family::Deterministic { d } => Family::Deterministic { d: d * c },
            Family::Uniform { a, b } => Family::Uniform { a: a * c, b: b * c },
            Family::LogNormal { mu, sigma, cap } => Family::LogNormal { mu: mu + c.ln(), sigma: *sigma, cap: cap.map(|x| x * c) },
        };
        Self::new(family, self.p)
    }

    /// One draw from `ν`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.family {
            Family::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            Family::HyperExponential { probs, rates } => {
                let i = pick(probs, rng.random::<f64>());
                Exp::new(rates[i]).expect("validated rate").sample(rng)
            }
            Family::Deterministic { d } => *d,
            Family::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            Family::LogNormal { mu, sigma, .. } => {
                let cap = self.cap.expect("resolved cap");
                let law = LogNormal::new(*mu, *sigma).expect("validated parameters");
                loop {
                    let v = law.sample(rng);
                    if v <= cap {
                        return v;
                    }
                }
            }
        }
    }

    /// One draw from `ν_e`.
    pub fn sample_equilibrium<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.family {
            Family::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            Family::HyperExponential { probs, rates } => {
                // branch i carries weight p_i / (rate_i β) in ν_e
                let w: Vec<f64> = probs.iter().zip(rates).map(|(q, r)| q / (r * self.beta)).collect();
                let i = pick(&w, rng.random::<f64>());
                Exp::new(rates[i]).expect("validated rate").sample(rng)
            }
            Family::Deterministic { d } => d * rng.random::<f64>(),
            _ => self.nu_e.quantile(rng.random::<f64>()),
        }
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn normal_quantile(prob: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(prob)
}

/// Piecewise-linear log-normal density on a log-spaced grid up to `cap`,
/// renormalized to a probability measure.
fn lognormal_measure(mu: f64, sigma: f64, cap: f64) -> Result<Measure, DistributionError> {
    let density = |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            let z = (x.ln() - mu) / sigma;
            (-0.5 * z * z).exp() / (x * sigma * (2.0 * std::f64::consts::PI).sqrt())
        }
    };
    let z_lo = -9.0;
    let z_hi = (cap.ln() - mu) / sigma;
    if z_hi <= z_lo {
        return Err(invalid(format!("lognormal cap {cap} lies below the bulk of the law")));
    }
    let mut nodes = vec![0.0];
    nodes.extend((0..=LOGNORMAL_SEGMENTS).map(|i| {
        let z = z_lo + (z_hi - z_lo) * i as f64 / LOGNORMAL_SEGMENTS as f64;
        (mu + sigma * z).exp()
    }));
    *nodes.last_mut().expect("nodes") = cap;
    let values: Vec<f64> = nodes.iter().map(|&x| density(x)).collect();
    let pieces: Vec<Piece> = nodes
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, f)| Piece::new(x[0], x[1], [f[0], (f[1] - f[0]) / (x[1] - x[0]), 0.0, 0.0]))
        .collect();
    let raw = Measure::new(Vec::new(), pieces, Vec::new())?;
    Ok(raw.scale(1.0 / raw.total_mass())?)
}
