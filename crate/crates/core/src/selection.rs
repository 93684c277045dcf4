//! Stepwise GAIC selection of per-parameter terms, and cross-family
//! comparison tables.
//!
//! The search runs seven passes in a fixed order: forward on mu, sigma, nu
//! and tau, then backward on nu, sigma and mu. Parameters the family lacks are
//! skipped. All predictors start intercept-only with treatment coding.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::distributions::{Family, Param};
use crate::error::{Error, Result};
use crate::fitting::{fit, FitOptions, FittedModel, ModelSpec};
use crate::linkdesign::{Term, TermList};

/// A change must lower GAIC by more than this to be accepted.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateScope {
    pub terms: Vec<Term>,
}

impl Default for CandidateScope {
    fn default() -> Self {
        CandidateScope {
            terms: vec![
                Term::Factor("photoperiod".into()),
                Term::Factor("bap".into()),
                Term::Interaction("photoperiod".into(), "bap".into()),
            ],
        }
    }
}

impl CandidateScope {
    /// Comma-separated terms, e.g. `photoperiod,bap,photoperiod:bap`.
    pub fn parse(s: &str) -> Result<CandidateScope> {
        let terms = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Term::parse)
            .collect::<Result<Vec<_>>>()?;
        let scope = CandidateScope { terms };
        if scope.terms.is_empty() {
            return Err(Error::Invalid("empty candidate scope".into()));
        }
        Ok(scope)
    }

    /// Every factor the scope mentions must exist in `data`.
    pub fn check(&self, data: &ObservationTable) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Invalid("empty candidate scope".into()));
        }
        for t in &self.terms {
            for f in t.factors() {
                data.factor(f)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

/// The seven passes in order, before dropping parameters a family lacks.
pub const STEPS: [(u8, Param, Direction); 7] = [
    (1, Param::Mu, Direction::Forward),
    (2, Param::Sigma, Direction::Forward),
    (3, Param::Nu, Direction::Forward),
    (4, Param::Tau, Direction::Forward),
    (5, Param::Nu, Direction::Backward),
    (6, Param::Sigma, Direction::Backward),
    (7, Param::Mu, Direction::Backward),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u8,
    pub param: Param,
    pub direction: Direction,
    /// Counts from 1 within a step; one round per accepted change plus the
    /// final round that found none.
    pub round: usize,
    /// Term label added or dropped.
    pub candidate: String,
    /// GAIC of the model the round started from.
    pub baseline: f64,
    /// GAIC with the candidate applied; absent when the fit was skipped.
    pub gaic: Option<f64>,
    pub accepted: bool,
    /// Why a candidate was skipped.
    pub note: Option<String>,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.direction {
            Direction::Forward => '+',
            Direction::Backward => '-',
        };
        write!(
            f,
            "step {} {} {} round {} {}{}: ",
            self.step, self.direction, self.param, self.round, sign, self.candidate
        )?;
        match self.gaic {
            Some(g) => write!(f, "gaic {g:.4} (from {:.4})", self.baseline)?,
            None => write!(f, "skipped ({})", self.note.as_deref().unwrap_or("fit failed"))?,
        }
        if self.accepted {
            f.write_str(" accepted")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub family: Family,
    pub k: f64,
    pub records: Vec<StepRecord>,
    pub final_spec: ModelSpec,
    pub final_fit: FittedModel,
}

impl SelectionTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    /// One line per record, then the final model.
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "family {} k {}", self.family, self.k)?;
        for r in &self.records {
            writeln!(w, "{r}")?;
        }
        writeln!(w, "final {} gaic {:.4}", self.final_spec, self.final_fit.gaic(self.k))?;
        Ok(())
    }
}

/// Memoized fits keyed by model, so replayed candidates are not refitted.
struct FitCache<'a> {
    data: &'a ObservationTable,
    options: &'a FitOptions,
    fits: HashMap<ModelSpec, std::result::Result<FittedModel, String>>,
}

impl<'a> FitCache<'a> {
    fn fit_all(&mut self, specs: &[ModelSpec]) {
        let missing: Vec<&ModelSpec> = specs.iter().filter(|s| !self.fits.contains_key(*s)).collect();
        let results: Vec<_> = missing
            .par_iter()
            .map(|s| {
                let r = fit(s, self.data, self.options).map_err(|e| e.to_string()).and_then(|fm| {
                    if fm.is_usable() {
                        Ok(fm)
                    } else {
                        Err(format!("not converged (gradient {:.2e})", fm.convergence.gradient_norm))
                    }
                });
                ((*s).clone(), r)
            })
            .collect();
        self.fits.extend(results);
    }

    fn get(&mut self, spec: &ModelSpec) -> &std::result::Result<FittedModel, String> {
        self.fit_all(std::slice::from_ref(spec));
        &self.fits[spec]
    }
}

fn with_terms(spec: &ModelSpec, param: Param, terms: Vec<Term>) -> ModelSpec {
    let list = if terms.is_empty() { TermList::intercept() } else { TermList::treatment(terms) };
    spec.clone().with_terms(param, list).expect("parameter belongs to family")
}

/// Interactions need both of their main effects.
fn marginal(terms: &[Term]) -> bool {
    terms.iter().all(|t| match t {
        Term::Factor(_) => true,
        Term::Interaction(a, b) => {
            terms.contains(&Term::Factor(a.clone())) && terms.contains(&Term::Factor(b.clone()))
        }
    })
}

/// Stepwise GAIC search with penalty `k` per coefficient.
pub fn step_gaic_all(
    family: Family,
    data: &ObservationTable,
    scope: &CandidateScope,
    k: f64,
    options: &FitOptions,
) -> Result<SelectionTrace> {
    if !(k > 0.0) {
        return Err(Error::Invalid(format!("penalty k must be positive, got {k}")));
    }
    scope.check(data)?;
    let mut scope_terms = scope.terms.clone();
    scope_terms.sort_by_key(|t| t.label());
    scope_terms.dedup();

    let mut cache = FitCache { data, options, fits: HashMap::new() };
    let mut spec = ModelSpec::constant(family);
    let mut records = Vec::new();

    for &(step, param, direction) in STEPS.iter().filter(|(_, p, _)| family.has(*p)) {
        let mut round = 0;
        loop {
            round += 1;
            let baseline = match cache.get(&spec) {
                Ok(fm) => fm.gaic(k),
                Err(e) => return Err(Error::Invalid(format!("cannot fit {spec}: {e}"))),
            };
            let current: Vec<Term> = spec.terms(param).map(|t| t.terms.clone()).unwrap_or_default();
            let candidates: Vec<(Term, Vec<Term>)> = match direction {
                Direction::Forward => scope_terms
                    .iter()
                    .filter(|t| !current.contains(t))
                    .map(|t| {
                        let mut next = current.clone();
                        next.push(t.clone());
                        (t.clone(), next)
                    })
                    .filter(|(_, next)| marginal(next))
                    .collect(),
                Direction::Backward => {
                    let mut terms = current.clone();
                    terms.sort_by_key(|t| t.label());
                    terms
                        .into_iter()
                        .map(|t| {
                            let next: Vec<Term> = current.iter().filter(|c| **c != t).cloned().collect();
                            (t, next)
                        })
                        .filter(|(_, next)| marginal(next))
                        .collect()
                }
            };
            if candidates.is_empty() {
                break;
            }
            let specs: Vec<ModelSpec> = candidates.iter().map(|(_, next)| with_terms(&spec, param, next.clone())).collect();
            cache.fit_all(&specs);

            let first = records.len();
            let mut best: Option<(usize, f64)> = None;
            for (i, ((term, _), cand)) in candidates.iter().zip(&specs).enumerate() {
                let (gaic, note) = match &cache.fits[cand] {
                    Ok(fm) => (Some(fm.gaic(k)), None),
                    Err(e) => (None, Some(e.clone())),
                };
                if let Some(g) = gaic {
                    // Candidates are in label order, so strict < keeps the
                    // lexicographically first of any tie.
                    if best.map_or(true, |(_, b)| g < b) {
                        best = Some((i, g));
                    }
                }
                records.push(StepRecord {
                    step,
                    param,
                    direction,
                    round,
                    candidate: term.label(),
                    baseline,
                    gaic,
                    accepted: false,
                    note,
                });
            }
            match best {
                Some((i, g)) if g < baseline - MIN_IMPROVEMENT => {
                    records[first + i].accepted = true;
                    spec = specs[i].clone();
                }
                _ => break,
            }
        }
    }
    let final_fit = match cache.get(&spec) {
        Ok(fm) => fm.clone(),
        Err(e) => return Err(Error::Invalid(format!("cannot fit {spec}: {e}"))),
    };
    Ok(SelectionTrace { family, k, records, final_spec: spec, final_fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Criterion> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            _ => Err(Error::Invalid(format!("unknown criterion {s:?} (expected aic or bic)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: Family,
    pub deviance: f64,
    pub df: usize,
    pub aic: f64,
    pub bic: f64,
    /// Term summary per family parameter, in parameter order.
    pub terms: Vec<(Param, String)>,
    pub converged: bool,
    /// Position in the input list.
    pub input_index: usize,
}

/// Rows sorted by `criterion`, ties kept in input order.
pub fn compare_models(fits: &[FittedModel], criterion: Criterion) -> Result<Vec<ComparisonRow>> {
    if let Some(first) = fits.first() {
        if let Some(other) = fits.iter().find(|f| f.data_fingerprint != first.data_fingerprint || f.n_obs != first.n_obs) {
            return Err(Error::Invalid(format!(
                "models were fitted to different data ({} and {})",
                first.family, other.family
            )));
        }
    }
    let mut rows: Vec<ComparisonRow> = fits
        .iter()
        .enumerate()
        .map(|(i, fm)| ComparisonRow {
            family: fm.family,
            deviance: fm.deviance,
            df: fm.df,
            aic: fm.aic,
            bic: fm.bic,
            terms: fm.parameters.iter().map(|p| (p.param, p.terms.summary())).collect(),
            converged: fm.convergence.converged,
            input_index: i,
        })
        .collect();
    let key = |r: &ComparisonRow| match criterion {
        Criterion::Aic => r.aic,
        Criterion::Bic => r.bic,
    };
    rows.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::trajan;

    #[test]
    fn scope_parsing() {
        let s = CandidateScope::parse("photoperiod, bap,photoperiod:bap").unwrap();
        assert_eq!(s, CandidateScope::default());
        assert!(CandidateScope::parse(" , ").is_err());
        assert!(matches!(
            CandidateScope::parse("light").unwrap().check(&trajan()),
            Err(Error::UnknownFactor(_))
        ));
    }

    #[test]
    fn marginality() {
        let a = Term::Factor("a".into());
        let b = Term::Factor("b".into());
        let ab = Term::Interaction("a".into(), "b".into());
        assert!(marginal(&[a.clone(), b.clone(), ab.clone()]));
        assert!(!marginal(&[a.clone(), ab.clone()]));
        assert!(marginal(&[]));
    }

    #[test]
    fn step_order_skips_missing_params() {
        let steps: Vec<(u8, Param)> =
            STEPS.iter().filter(|(_, p, _)| Family::Zip.has(*p)).map(|(s, p, _)| (*s, *p)).collect();
        assert_eq!(steps, vec![(1, Param::Mu), (2, Param::Sigma), (6, Param::Sigma), (7, Param::Mu)]);
    }

    #[test]
    fn rejects_nonpositive_penalty() {
        let r = step_gaic_all(Family::Po, &trajan(), &CandidateScope::default(), 0.0, &FitOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn poisson_selection_and_log() {
        let tr = step_gaic_all(Family::Po, &trajan(), &CandidateScope::default(), 2.0, &FitOptions::default()).unwrap();
        let mut prev = f64::INFINITY;
        for r in tr.accepted() {
            let g = r.gaic.unwrap();
            assert!(g < r.baseline && g < prev);
            prev = g;
        }
        let mut log = Vec::new();
        tr.write_log(&mut log).unwrap();
        let log = String::from_utf8(log).unwrap();
        assert!(log.starts_with("family PO k 2"));
        assert_eq!(log.lines().count(), tr.records.len() + 2);
    }

    #[test]
    fn huge_penalty_keeps_intercepts() {
        let tr =
            step_gaic_all(Family::Zip, &trajan(), &CandidateScope::default(), 1e9, &FitOptions::default()).unwrap();
        assert_eq!(tr.accepted().count(), 0);
        assert!(tr.final_spec.predictors.iter().all(|p| p.terms.is_intercept_only()));
    }

    #[test]
    fn comparison_ordering() {
        let d = trajan();
        let opts = FitOptions::default();
        let po = fit(&ModelSpec::constant(Family::Po), &d, &opts).unwrap();
        let nb = fit(&ModelSpec::constant(Family::Nb), &d, &opts).unwrap();
        let rows = compare_models(&[po.clone(), nb.clone(), po.clone()], Criterion::Aic).unwrap();
        assert_eq!(rows[0].family, Family::Nb);
        assert_eq!((rows[1].input_index, rows[2].input_index), (0, 2));
        assert_eq!(compare_models(&[po.clone()], Criterion::Bic).unwrap().len(), 1);
        let other = fit(&ModelSpec::constant(Family::Po), &d.subset("bap", "2.2").unwrap(), &opts).unwrap();
        assert!(compare_models(&[po, other], Criterion::Aic).is_err());
    }
}
