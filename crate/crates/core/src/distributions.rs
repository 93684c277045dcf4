//! Count response families in the mean parameterization used throughout the
//! crate.
//!
//! Parameters are always ordered `mu, sigma, nu, tau`. `mu` is the mean of the
//! count process (the non-inflated component for the zero-inflated mixtures),
//! dispersion parameters make the variance exceed the mean, and the
//! zero-inflation probability is the weight of the point mass at zero.
//!
//! | family | parameters | mixture weight |
//! |--------|------------|----------------|
//! | `PO`   | mu                    | none  |
//! | `NB`   | mu, sigma             | none  |
//! | `ZIP`  | mu, sigma             | sigma |
//! | `ZINB` | mu, sigma, nu         | nu    |
//! | `ZIPIG`| mu, sigma, nu         | nu    |
//! | `ZIBNB`| mu, sigma, nu, tau    | tau   |
//!
//! `ZIP` is parameterized so that `mu` is the mean of the whole mixture: the
//! Poisson component has rate `mu / (1 - sigma)`.
//!
//! The beta negative binomial kernel used by `ZIBNB` is
//!
//! ```text
//! P(y) = Γ(y + 1/ν) B(y + μν/σ, 1/σ + 1/ν + 1)
//!        / [Γ(y + 1) Γ(1/ν) B(μν/σ, 1/σ + 1)]
//! ```
//!
//! The `Γ(1/ν)` factor in the denominator is required for the masses to sum to
//! one; the form without it does not normalize unless `ν = 1` (see the
//! `printed_beta_negative_binomial_does_not_normalize` test).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkdesign::Link;
use crate::specfun::{log_add_exp, log_gamma_ratio_unchecked, log_gamma_unchecked};

/// Upper bound used internally for every zero-inflation probability.
pub const MAX_INFLATION: f64 = 1.0 - 1e-10;

/// Cumulative mass at which tail sums stop.
pub const TAIL_MASS: f64 = 1e-12;

/// Hard cap on the support searched by tail sums and the sampler.
pub const SUPPORT_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Mu,
    Sigma,
    Nu,
    Tau,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Mu, Param::Sigma, Param::Nu, Param::Tau];

    pub fn name(self) -> &'static str {
        match self {
            Param::Mu => "mu",
            Param::Sigma => "sigma",
            Param::Nu => "nu",
            Param::Tau => "tau",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Mean of the count process; `[0, ∞)`.
    Mean,
    /// Overdispersion; `[0, ∞)`, or `(0, ∞)` when `strict`.
    Dispersion { strict: bool },
    /// Zero-inflation probability; `[0, 1)`.
    Inflation,
}

impl ParamRole {
    pub fn default_link(self) -> Link {
        match self {
            ParamRole::Mean | ParamRole::Dispersion { .. } => Link::Log,
            ParamRole::Inflation => Link::Logit,
        }
    }

    pub fn contains(self, value: f64) -> bool {
        match self {
            ParamRole::Mean | ParamRole::Dispersion { strict: false } => {
                value >= 0.0 && value.is_finite()
            }
            ParamRole::Dispersion { strict: true } => value > 0.0 && value.is_finite(),
            ParamRole::Inflation => (0.0..1.0).contains(&value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamInfo {
    pub param: Param,
    pub role: ParamRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "PO")]
    Po,
    #[serde(rename = "NB")]
    Nb,
    #[serde(rename = "ZIP")]
    Zip,
    #[serde(rename = "ZINB")]
    Zinb,
    #[serde(rename = "ZIPIG")]
    Zipig,
    #[serde(rename = "ZIBNB")]
    Zibnb,
}

const MEAN: ParamInfo = ParamInfo { param: Param::Mu, role: ParamRole::Mean };
const fn dispersion(param: Param, strict: bool) -> ParamInfo {
    ParamInfo { param, role: ParamRole::Dispersion { strict } }
}
const fn inflation(param: Param) -> ParamInfo {
    ParamInfo { param, role: ParamRole::Inflation }
}

const PO_PARAMS: [ParamInfo; 1] = [MEAN];
const NB_PARAMS: [ParamInfo; 2] = [MEAN, dispersion(Param::Sigma, false)];
const ZIP_PARAMS: [ParamInfo; 2] = [MEAN, inflation(Param::Sigma)];
const ZINB_PARAMS: [ParamInfo; 3] =
    [MEAN, dispersion(Param::Sigma, false), inflation(Param::Nu)];
const ZIBNB_PARAMS: [ParamInfo; 4] = [
    MEAN,
    dispersion(Param::Sigma, false),
    dispersion(Param::Nu, true),
    inflation(Param::Tau),
];

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Po, Family::Nb, Family::Zip, Family::Zinb, Family::Zipig, Family::Zibnb];

    pub fn id(self) -> &'static str {
        match self {
            Family::Po => "PO",
            Family::Nb => "NB",
            Family::Zip => "ZIP",
            Family::Zinb => "ZINB",
            Family::Zipig => "ZIPIG",
            Family::Zibnb => "ZIBNB",
        }
    }

    /// Parameters in canonical order.
    pub fn params(self) -> &'static [ParamInfo] {
        match self {
            Family::Po => &PO_PARAMS,
            Family::Nb => &NB_PARAMS,
            Family::Zip => &ZIP_PARAMS,
            Family::Zinb | Family::Zipig => &ZINB_PARAMS,
            Family::Zibnb => &ZIBNB_PARAMS,
        }
    }

    pub fn n_params(self) -> usize {
        self.params().len()
    }

    pub fn has(self, param: Param) -> bool {
        self.params().iter().any(|p| p.param == param)
    }

    pub fn role(self, param: Param) -> Option<ParamRole> {
        self.params().iter().find(|p| p.param == param).map(|p| p.role)
    }

    /// Position of the zero-inflation probability, if the family has one.
    pub fn inflation_index(self) -> Option<usize> {
        self.params().iter().position(|p| p.role == ParamRole::Inflation)
    }

    pub fn validate(self, params: &[f64]) -> Result<()> {
        let info = self.params();
        if params.len() != info.len() {
            return Err(Error::Dimension { expected: info.len(), got: params.len() });
        }
        for (p, &v) in info.iter().zip(params) {
            if !p.role.contains(v) {
                return Err(Error::Domain(format!(
                    "{} parameter {} = {v} is outside its domain",
                    self.id(),
                    p.param
                )));
            }
        }
        Ok(())
    }

    /// `ln P(Y = y)`.
    pub fn log_pmf(self, params: &[f64], y: u64) -> Result<f64> {
        self.validate(params)?;
        Ok(self.log_pmf_unchecked(params, y))
    }

    /// `ln P(Y = y)` for parameters already known to be in the domain.
    pub(crate) fn log_pmf_unchecked(self, params: &[f64], y: u64) -> f64 {
        let mu = params[0];
        match self {
            Family::Po => poisson_log_pmf(mu, y),
            Family::Nb => nb_log_pmf(mu, params[1], y),
            Family::Zip => {
                let pi = params[1].min(MAX_INFLATION);
                zero_inflate(pi, y, poisson_log_pmf(mu / (1.0 - pi), y))
            }
            Family::Zinb => zero_inflate(params[2], y, nb_log_pmf(mu, params[1], y)),
            Family::Zipig => zero_inflate(params[2], y, pig_log_pmf(mu, params[1], y)),
            Family::Zibnb => {
                zero_inflate(params[3], y, bnb_log_pmf(mu, params[1], params[2], y))
            }
        }
    }

    /// `P(Y <= y)`; zero for negative `y`.
    pub fn cdf(self, params: &[f64], y: i64) -> Result<f64> {
        self.validate(params)?;
        Ok(self.cdf_pair(params, y).1)
    }

    /// `(P(Y <= y - 1), P(Y <= y))` from one cumulative pass.
    pub(crate) fn cdf_pair(self, params: &[f64], y: i64) -> (f64, f64) {
        if y < 0 {
            return (0.0, 0.0);
        }
        let top = (y as u64).min(SUPPORT_CAP);
        let mut sum = NeumaierSum::default();
        let mut prev = 0.0;
        for k in 0..=top {
            prev = sum.value();
            sum.add(self.log_pmf_unchecked(params, k).exp());
        }
        (prev.min(1.0), sum.value().min(1.0))
    }

    pub fn mean(self, params: &[f64]) -> Result<f64> {
        self.validate(params)?;
        let mu = params[0];
        Ok(match self {
            Family::Po | Family::Nb | Family::Zip => mu,
            Family::Zinb | Family::Zipig => (1.0 - params[2]) * mu,
            Family::Zibnb => (1.0 - params[3]) * mu,
        })
    }

    /// Smallest `y` with `P(Y <= y) >= 1 - TAIL_MASS`, capped at `SUPPORT_CAP`.
    pub fn truncation_point(self, params: &[f64]) -> Result<u64> {
        self.validate(params)?;
        Ok(self.cumulative_table(params).len() as u64 - 1)
    }

    fn cumulative_table(self, params: &[f64]) -> Vec<f64> {
        let mut table = Vec::new();
        let mut sum = NeumaierSum::default();
        for k in 0..=SUPPORT_CAP {
            sum.add(self.log_pmf_unchecked(params, k).exp());
            table.push(sum.value());
            if sum.value() >= 1.0 - TAIL_MASS {
                break;
            }
        }
        table
    }

    /// `n` independent draws by inverse-cdf search over the cumulative pmf.
    pub fn sample<R: Rng + ?Sized>(self, params: &[f64], rng: &mut R, n: usize) -> Result<Vec<u64>> {
        self.validate(params)?;
        let table = self.cumulative_table(params);
        let last = *table.last().expect("table has at least one entry");
        let draws = (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < last {
                    table.partition_point(|&c| c <= u) as u64
                } else {
                    table.len() as u64 - 1
                }
            })
            .collect();
        Ok(draws)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn point_mass_at_zero(y: u64) -> f64 {
    if y == 0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

fn zero_inflate(pi: f64, y: u64, base: f64) -> f64 {
    let pi = pi.min(MAX_INFLATION);
    let keep = (-pi).ln_1p();
    if y == 0 {
        log_add_exp(pi.ln(), keep + base)
    } else {
        keep + base
    }
}

fn poisson_log_pmf(rate: f64, y: u64) -> f64 {
    if rate == 0.0 {
        return point_mass_at_zero(y);
    }
    let y = y as f64;
    y * rate.ln() - rate - log_gamma_unchecked(y + 1.0)
}

/// Negative binomial with mean `mu` and variance `mu + sigma mu^2`.
fn nb_log_pmf(mu: f64, sigma: f64, y: u64) -> f64 {
    if sigma == 0.0 {
        return poisson_log_pmf(mu, y);
    }
    if mu == 0.0 {
        return point_mass_at_zero(y);
    }
    let r = 1.0 / sigma;
    let sm = sigma * mu;
    let yf = y as f64;
    let log1p_sm = sm.ln_1p();
    log_gamma_ratio_unchecked(r, yf) - log_gamma_unchecked(yf + 1.0) + yf * (sm.ln() - log1p_sm)
        - r * log1p_sm
}

/// Poisson inverse Gaussian with mean `mu` and variance `mu + sigma mu^2`.
///
/// The Bessel factor is carried as the sum of log ratios
/// `ln K_{y-1/2}(α) + α + ln sqrt(2α/π)`, and `1/σ - α` is rewritten as
/// `-2μ / (1 + sqrt(1 + 2μσ))`, so nothing large cancels when `σ` is small.
fn pig_log_pmf(mu: f64, sigma: f64, y: u64) -> f64 {
    if sigma == 0.0 {
        return poisson_log_pmf(mu, y);
    }
    if mu == 0.0 {
        return point_mass_at_zero(y);
    }
    let root = (1.0 + 2.0 * mu * sigma).sqrt();
    let alpha = root / sigma;
    let yf = y as f64;
    let mut log_ratio_sum = 0.0;
    let mut ratio = 1.0;
    for j in 1..y {
        ratio = 1.0 / ratio + (2 * j - 1) as f64 / alpha;
        log_ratio_sum += ratio.ln();
    }
    yf * mu.ln() - 2.0 * mu / (1.0 + root) + log_ratio_sum
        - yf * root.ln()
        - log_gamma_unchecked(yf + 1.0)
}

/// Beta negative binomial with mean `mu`; reduces to `NB(mu, nu)` at
/// `sigma = 0`.
fn bnb_log_pmf(mu: f64, sigma: f64, nu: f64, y: u64) -> f64 {
    if sigma == 0.0 {
        return nb_log_pmf(mu, nu, y);
    }
    if mu == 0.0 {
        return point_mass_at_zero(y);
    }
    let b = mu * nu / sigma;
    let a = 1.0 / sigma + 1.0;
    let r = 1.0 / nu;
    let yf = y as f64;
    // ln B(y + b, a + r) - ln B(b, a) split into three gamma ratios
    let beta_part = log_gamma_ratio_unchecked(b, yf) + log_gamma_ratio_unchecked(a, r)
        - log_gamma_ratio_unchecked(a + b, yf + r);
    log_gamma_ratio_unchecked(r, yf) - log_gamma_unchecked(yf + 1.0) + beta_part
}
