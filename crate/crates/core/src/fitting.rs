//! Joint maximum-likelihood fitting of every distribution parameter's linear
//! predictor.
//!
//! All coefficient vectors are stacked into one vector (parameters in
//! `mu, sigma, nu, tau` order, columns in design order) and the negative
//! log-likelihood is minimized with BFGS on finite-difference gradients, from
//! several perturbed starting points. Deviance is `-2 loglik` with no
//! saturated-model offset.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::ObservationTable;
use crate::distributions::{Family, Param, ParamRole, MAX_INFLATION};
use crate::error::{Error, Result};
use crate::linkdesign::{build_design, DesignMatrix, Link, TermList};
use crate::optim::{bfgs, numerical_hessian, BfgsOptions};

/// A fitted predictor beyond this magnitude on the link scale means the
/// parameter has run off toward the edge of its domain.
const BOUNDARY_ETA: f64 = 10.0;

impl Serialize for TermList {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TermList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TermList::from_str(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predictor {
    pub param: Param,
    pub terms: TermList,
    pub link: Link,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub predictors: Vec<Predictor>,
}

impl ModelSpec {
    /// One term list per family parameter, in order; default links.
    pub fn new(family: Family, terms: Vec<TermList>) -> Result<ModelSpec> {
        let info = family.params();
        if terms.len() != info.len() {
            return Err(Error::Dimension { expected: info.len(), got: terms.len() });
        }
        let predictors = info
            .iter()
            .zip(terms)
            .map(|(p, terms)| Predictor { param: p.param, terms, link: p.role.default_link() })
            .collect();
        Ok(ModelSpec { family, predictors })
    }

    /// Intercept-only predictors everywhere.
    pub fn constant(family: Family) -> ModelSpec {
        ModelSpec::new(family, vec![TermList::intercept(); family.n_params()])
            .expect("one term list per parameter")
    }

    /// Parse one term string per parameter.
    pub fn parse(family: Family, terms: &[&str]) -> Result<ModelSpec> {
        let lists = terms.iter().map(|s| s.parse()).collect::<Result<Vec<TermList>>>()?;
        ModelSpec::new(family, lists)
    }

    pub fn with_link(mut self, param: Param, link: Link) -> Result<ModelSpec> {
        let p = self
            .predictors
            .iter_mut()
            .find(|p| p.param == param)
            .ok_or_else(|| Error::Invalid(format!("{} has no parameter {param}", self.family)))?;
        p.link = link;
        Ok(self)
    }

    pub fn with_terms(mut self, param: Param, terms: TermList) -> Result<ModelSpec> {
        let p = self
            .predictors
            .iter_mut()
            .find(|p| p.param == param)
            .ok_or_else(|| Error::Invalid(format!("{} has no parameter {param}", self.family)))?;
        p.terms = terms;
        Ok(self)
    }

    pub fn terms(&self, param: Param) -> Option<&TermList> {
        self.predictors.iter().find(|p| p.param == param).map(|p| &p.terms)
    }

    fn check(&self) -> Result<()> {
        let expected: Vec<Param> = self.family.params().iter().map(|p| p.param).collect();
        let got: Vec<Param> = self.predictors.iter().map(|p| p.param).collect();
        if expected != got {
            return Err(Error::Invalid(format!(
                "{} needs predictors for {expected:?}, got {got:?}",
                self.family
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.family)?;
        for (i, p) in self.predictors.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            let terms = p.terms.to_string();
            write!(f, "{} ~ {}", p.param, terms.trim_start_matches('~'))?;
        }
        f.write_str(")")
    }
}

/// The likelihood of one model on one dataset, with observations that share a
/// covariate pattern and response collapsed into weighted records.
pub struct Objective {
    family: Family,
    links: Vec<Link>,
    roles: Vec<ParamRole>,
    /// Column ranges of each parameter inside theta.
    offsets: Vec<std::ops::Range<usize>>,
    /// Distinct design rows, per pattern and parameter.
    patterns: Vec<Vec<Vec<f64>>>,
    /// (pattern, y, multiplicity)
    records: Vec<(usize, u64, f64)>,
    /// Pattern of each original row.
    row_pattern: Vec<usize>,
    designs: Vec<DesignMatrix>,
}

impl Objective {
    pub fn new(spec: &ModelSpec, data: &ObservationTable) -> Result<Objective> {
        spec.check()?;
        if data.n_rows() == 0 {
            return Err(Error::Invalid("no observations".into()));
        }
        let designs = spec
            .predictors
            .iter()
            .map(|p| build_design(data, &p.terms))
            .collect::<Result<Vec<_>>>()?;
        let mut offsets = Vec::new();
        let mut start = 0;
        for d in &designs {
            offsets.push(start..start + d.n_cols());
            start += d.n_cols();
        }
        let mut pattern_ids: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut row_pattern = Vec::with_capacity(data.n_rows());
        for i in 0..data.n_rows() {
            let rows: Vec<Vec<f64>> =
                designs.iter().map(|d| d.matrix.row(i).iter().copied().collect()).collect();
            let key: Vec<u64> = rows.iter().flatten().map(|v| v.to_bits()).collect();
            let next = patterns.len();
            let id = *pattern_ids.entry(key).or_insert(next);
            if id == next {
                patterns.push(rows);
            }
            row_pattern.push(id);
        }
        let mut counts: HashMap<(usize, u64), f64> = HashMap::new();
        for (i, &y) in data.response.iter().enumerate() {
            *counts.entry((row_pattern[i], y)).or_default() += 1.0;
        }
        let mut records: Vec<(usize, u64, f64)> = counts.into_iter().map(|((p, y), w)| (p, y, w)).collect();
        records.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Ok(Objective {
            family: spec.family,
            links: spec.predictors.iter().map(|p| p.link).collect(),
            roles: spec.family.params().iter().map(|p| p.role).collect(),
            offsets,
            patterns,
            records,
            row_pattern,
            designs,
        })
    }

    pub fn n_coefficients(&self) -> usize {
        self.offsets.last().map_or(0, |r| r.end)
    }

    pub fn designs(&self) -> &[DesignMatrix] {
        &self.designs
    }

    /// Distribution parameters of one pattern; `None` when any of them falls
    /// outside the (clamped) domain.
    fn pattern_params(&self, pattern: usize, theta: &[f64]) -> Option<Vec<f64>> {
        let rows = &self.patterns[pattern];
        let mut out = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            let beta = &theta[self.offsets[k].clone()];
            let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
            let value = self.links[k].inverse(eta);
            let ok = match self.roles[k] {
                ParamRole::Inflation => (0.0..=MAX_INFLATION).contains(&value),
                role => role.contains(value),
            };
            if !ok {
                return None;
            }
            out.push(value);
        }
        Some(out)
    }

    /// Per-row distribution parameters at `theta`.
    pub fn row_params(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        if theta.len() != self.n_coefficients() {
            return Err(Error::Dimension { expected: self.n_coefficients(), got: theta.len() });
        }
        let per_pattern = (0..self.patterns.len())
            .map(|p| {
                self.pattern_params(p, theta).ok_or_else(|| {
                    Error::Domain("fitted parameters fall outside the family's domain".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.row_pattern.iter().map(|&p| per_pattern[p].clone()).collect())
    }

    /// Negative log-likelihood; `+inf` outside the domain.
    pub fn value(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.n_coefficients() {
            return f64::INFINITY;
        }
        let params: Vec<Option<Vec<f64>>> =
            (0..self.patterns.len()).map(|p| self.pattern_params(p, theta)).collect();
        let mut total = 0.0;
        for &(p, y, w) in &self.records {
            let Some(par) = &params[p] else {
                return f64::INFINITY;
            };
            total -= w * self.family.log_pmf_unchecked(par, y);
        }
        if total.is_nan() {
            f64::INFINITY
        } else {
            total
        }
    }
}

/// `-Σ ln P(y_i | θ)` for the stacked coefficient vector `theta`.
pub fn neg_log_likelihood(spec: &ModelSpec, data: &ObservationTable, theta: &[f64]) -> Result<f64> {
    let obj = Objective::new(spec, data)?;
    if theta.len() != obj.n_coefficients() {
        return Err(Error::Dimension { expected: obj.n_coefficients(), got: theta.len() });
    }
    Ok(obj.value(theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 500, tol: 1e-6, n_starts: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub label: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFit {
    pub param: Param,
    pub link: Link,
    pub terms: TermList,
    pub coefficients: Vec<Coefficient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Parameters whose fitted predictor ran toward the edge of the domain.
    pub boundary: Vec<Param>,
    /// Best objective reached from each start, in start order; absent when a
    /// start never reached a finite likelihood.
    pub start_objectives: Vec<Option<f64>>,
    pub best_start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
}

/// `aic = deviance + 2 df`, `bic = deviance + df ln n`.
pub fn information_criteria(deviance: f64, df: usize, n: usize) -> InformationCriteria {
    let df = df as f64;
    let bic_penalty = if df == 0.0 { 0.0 } else { df * (n as f64).ln() };
    InformationCriteria { aic: deviance + 2.0 * df, bic: deviance + bic_penalty }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub family: Family,
    pub n_obs: usize,
    /// Hash of the response and factor codes the model was fitted to.
    pub data_fingerprint: u64,
    pub parameters: Vec<ParamFit>,
    pub loglik: f64,
    pub deviance: f64,
    pub df: usize,
    pub aic: f64,
    pub bic: f64,
    /// Covariance of the stacked coefficients; absent when the observed
    /// information is not positive definite.
    pub vcov: Option<Vec<Vec<f64>>>,
    pub convergence: Convergence,
}

impl FittedModel {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            family: self.family,
            predictors: self
                .parameters
                .iter()
                .map(|p| Predictor { param: p.param, terms: p.terms.clone(), link: p.link })
                .collect(),
        }
    }

    /// Stacked coefficient vector.
    pub fn theta(&self) -> Vec<f64> {
        self.parameters.iter().flat_map(|p| p.coefficients.iter().map(|c| c.estimate)).collect()
    }

    pub fn param(&self, param: Param) -> Option<&ParamFit> {
        self.parameters.iter().find(|p| p.param == param)
    }

    /// Estimates for one parameter, in column order.
    pub fn estimates(&self, param: Param) -> Vec<f64> {
        self.param(param).map(|p| p.coefficients.iter().map(|c| c.estimate).collect()).unwrap_or_default()
    }

    pub fn information_criteria(&self) -> InformationCriteria {
        information_criteria(self.deviance, self.df, self.n_obs)
    }

    /// Fitted distribution parameters for every row of `data`.
    pub fn row_params(&self, data: &ObservationTable) -> Result<Vec<Vec<f64>>> {
        Objective::new(&self.spec(), data)?.row_params(&self.theta())
    }

    /// Converged to tolerance, or stalled with a parameter at the edge of its
    /// domain (the supremum of the likelihood is not attained inside it).
    pub fn is_usable(&self) -> bool {
        self.convergence.converged || !self.convergence.boundary.is_empty()
    }

    /// GAIC with penalty `k` per coefficient.
    pub fn gaic(&self, k: f64) -> f64 {
        self.deviance + k * self.df as f64
    }
}

/// Starting coefficients: every predictor constant at the link of a crude
/// moment estimate.
pub fn initial_theta(spec: &ModelSpec, data: &ObservationTable, obj: &Objective) -> Vec<f64> {
    let n = data.n_rows() as f64;
    let mean = data.response.iter().sum::<u64>() as f64 / n;
    let zeros = data.response.iter().filter(|&&y| y == 0).count() as f64 / n;
    let poisson_zero = (-mean).exp();
    let excess = if poisson_zero < 1.0 { (zeros - poisson_zero) / (1.0 - poisson_zero) } else { 0.0 };
    let mut theta = Vec::with_capacity(obj.n_coefficients());
    for ((pred, info), design) in spec.predictors.iter().zip(spec.family.params()).zip(obj.designs()) {
        let target = match info.role {
            ParamRole::Mean => mean.max(0.1),
            ParamRole::Dispersion { .. } => 1.0,
            ParamRole::Inflation => excess.clamp(0.01, 0.9),
        };
        let eta = match pred.link {
            Link::Identity if info.role == ParamRole::Inflation => target,
            link => link.forward(target),
        };
        theta.extend(design.constant_coefficients(eta));
    }
    theta
}

fn start_points(base: &[f64], options: &FitOptions) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    (0..options.n_starts.max(1))
        .map(|s| {
            if s == 0 {
                return base.to_vec();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_mul(0x9E37_79B9).wrapping_add(s as u64));
            base.iter().map(|&b| b + noise.sample(&mut rng)).collect()
        })
        .collect()
}

/// Maximum-likelihood fit of `spec` to `data`.
pub fn fit(spec: &ModelSpec, data: &ObservationTable, options: &FitOptions) -> Result<FittedModel> {
    let obj = Objective::new(spec, data)?;
    let base = initial_theta(spec, data, &obj);
    fit_from(spec, data, &obj, &base, options)
}

fn fit_from(
    spec: &ModelSpec,
    data: &ObservationTable,
    obj: &Objective,
    base: &[f64],
    options: &FitOptions,
) -> Result<FittedModel> {
    let f = |t: &[f64]| obj.value(t);
    let bfgs_opts = BfgsOptions { max_iter: options.max_iter, grad_tol: options.tol, ..Default::default() };
    let starts = start_points(base, options);
    let runs: Vec<_> = starts.par_iter().map(|x0| bfgs(&f, x0, &bfgs_opts)).collect();
    // Lowest objective wins; ties go to the earliest start.
    let best_start = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.value < runs[best].value { i } else { best });
    let best = &runs[best_start];
    if !best.value.is_finite() {
        return Err(Error::Invalid(format!("{spec}: no start reached a finite likelihood")));
    }

    let hessian = numerical_hessian(&f, &best.x);
    let vcov = covariance(hessian);
    let mut parameters = Vec::new();
    let mut boundary = Vec::new();
    for ((pred, design), range) in spec.predictors.iter().zip(obj.designs()).zip(obj.offsets.iter()) {
        let beta = &best.x[range.clone()];
        let eta = design.predictor(beta)?;
        let near_edge = eta.iter().any(|&e| match pred.link {
            Link::Log => e < -BOUNDARY_ETA,
            Link::Logit => e.abs() > BOUNDARY_ETA,
            Link::Identity => false,
        });
        if near_edge {
            boundary.push(pred.param);
        }
        let coefficients = design
            .column_labels
            .iter()
            .zip(beta)
            .zip(range.clone())
            .map(|((label, &estimate), k)| Coefficient {
                label: label.clone(),
                estimate,
                std_error: vcov.as_ref().map(|v| v[(k, k)].sqrt()),
            })
            .collect();
        parameters.push(ParamFit { param: pred.param, link: pred.link, terms: pred.terms.clone(), coefficients });
    }
    let df = obj.n_coefficients();
    let deviance = 2.0 * best.value;
    let ic = information_criteria(deviance, df, data.n_rows());
    Ok(FittedModel {
        family: spec.family,
        n_obs: data.n_rows(),
        data_fingerprint: data.fingerprint(),
        parameters,
        loglik: -best.value,
        deviance,
        df,
        aic: ic.aic,
        bic: ic.bic,
        vcov: vcov.map(|v| v.row_iter().map(|r| r.iter().copied().collect()).collect()),
        convergence: Convergence {
            converged: best.converged,
            iterations: best.iterations,
            gradient_norm: best.grad_norm,
            boundary,
            start_objectives: runs.iter().map(|r| r.value.is_finite().then_some(r.value)).collect(),
            best_start,
        },
    })
}

/// Inverse of the observed information, or `None` if it is not positive
/// definite.
fn covariance(hessian: DMatrix<f64>) -> Option<DMatrix<f64>> {
    if hessian.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sym = (&hessian + hessian.transpose()) * 0.5;
    let chol = sym.cholesky()?;
    let inv = chol.inverse();
    if inv.diagonal().iter().all(|&v| v > 0.0 && v.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::trajan;

    fn constant_data(value: u64, n: usize) -> ObservationTable {
        let mut d = trajan().select_rows(&(0..n).collect::<Vec<_>>());
        d.response = vec![value; n];
        d
    }

    #[test]
    fn poisson_constant_data_objective() {
        let d = constant_data(3, 10);
        let spec = ModelSpec::constant(Family::Po);
        let v = neg_log_likelihood(&spec, &d, &[3.0f64.ln()]).unwrap();
        let want = 10.0 * (3.0 - 3.0 * 3.0f64.ln() + 6.0f64.ln());
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
        assert!((v - 14.959_226_032_237_26).abs() < 1e-10);
    }

    #[test]
    fn poisson_mle_is_log_mean() {
        let d = constant_data(3, 10);
        let fm = fit(&ModelSpec::constant(Family::Po), &d, &FitOptions::default()).unwrap();
        assert!((fm.estimates(Param::Mu)[0] - 3.0f64.ln()).abs() < 1e-6);
        assert!(fm.convergence.converged);
        assert_eq!(fm.df, 1);
    }

    #[test]
    fn objective_dimension_and_domain_guards() {
        let d = trajan();
        let spec = ModelSpec::parse(Family::Zip, &["~0+photoperiod", "~0+photoperiod"]).unwrap();
        assert!(matches!(neg_log_likelihood(&spec, &d, &[1.0]), Err(Error::Dimension { .. })));
        // logit predictor of 40 puts the inflation at 1 - 4e-18 > MAX_INFLATION
        let v = neg_log_likelihood(&spec, &d, &[1.9, 1.0, 40.0, 0.0]).unwrap();
        assert_eq!(v, f64::INFINITY);
        let v = neg_log_likelihood(&spec, &d, &[1.9, 1.0, -4.0, 0.0]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn spec_shape_is_checked() {
        assert!(ModelSpec::parse(Family::Zinb, &["1", "1"]).is_err());
        let mut spec = ModelSpec::constant(Family::Nb);
        spec.predictors.swap(0, 1);
        assert!(neg_log_likelihood(&spec, &trajan(), &[0.0, 0.0]).is_err());
        assert!(ModelSpec::constant(Family::Po).with_link(Param::Nu, Link::Log).is_err());
    }

    #[test]
    fn rank_deficiency_rejected_before_fitting() {
        let d = trajan().subset("photoperiod", "8").unwrap();
        let spec = ModelSpec::parse(Family::Po, &["photoperiod"]).unwrap();
        assert!(matches!(fit(&spec, &d, &FitOptions::default()), Err(Error::RankDeficient(..))));
    }

    #[test]
    fn criteria_identities() {
        let ic = information_criteria(1233.623, 6, 270);
        assert!((ic.aic - 1245.623).abs() < 1e-9);
        assert!((ic.bic - 1267.214).abs() < 5e-4);
        let ic = information_criteria(1251.613, 4, 270);
        assert!((ic.aic - 1259.613).abs() < 1e-9);
        assert!((ic.bic - 1274.007).abs() < 5e-4);
        assert_eq!(information_criteria(0.0, 0, 270), InformationCriteria { aic: 0.0, bic: 0.0 });
    }
}
