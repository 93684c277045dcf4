//! Link functions, term lists and factor design matrices.
//!
//! Term lists are written in a compact formula syntax:
//!
//! | string             | meaning                                           |
//! |--------------------|---------------------------------------------------|
//! | `1`                | intercept only                                    |
//! | `a`                | intercept + treatment-coded factor `a`            |
//! | `a+b`              | main effects                                      |
//! | `a*b`              | `a + b + a:b`                                     |
//! | `a:b`              | pairwise interaction only                         |
//! | `~0+a`             | cell means: one column per level of `a`, no intercept |
//!
//! A leading `~` is optional. Under cell-means coding the first main-effect
//! factor gets one column per level; any later factors stay treatment coded.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Factor, ObservationTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Log,
    Logit,
    Identity,
}

impl Link {
    /// Parameter scale to predictor scale.
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Link::Log => x.ln(),
            Link::Logit => (x / (1.0 - x)).ln(),
            Link::Identity => x,
        }
    }

    /// Predictor scale to parameter scale.
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Identity => eta,
        }
    }

    /// d inverse / d eta.
    pub fn inverse_derivative(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Logit => {
                let p = self.inverse(eta);
                p * (1.0 - p)
            }
            Link::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Log => "log",
            Link::Logit => "logit",
            Link::Identity => "identity",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "log" => Ok(Link::Log),
            "logit" => Ok(Link::Logit),
            "identity" => Ok(Link::Identity),
            _ => Err(Error::UnknownLink(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Factor(String),
    Interaction(String, String),
}

impl Term {
    pub fn label(&self) -> String {
        match self {
            Term::Factor(a) => a.clone(),
            Term::Interaction(a, b) => format!("{a}:{b}"),
        }
    }

    pub fn factors(&self) -> Vec<&str> {
        match self {
            Term::Factor(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
        }
    }

    /// Parse a single `a` or `a:b`.
    pub fn parse(s: &str) -> Result<Term> {
        let s = s.trim();
        let bad = |reason: &str| Error::TermSyntax { input: s.to_string(), reason: reason.into() };
        let valid = |name: &str| {
            !name.is_empty() && name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')
        };
        match s.split(':').collect::<Vec<_>>().as_slice() {
            [a] if valid(a) => Ok(Term::Factor(a.to_string())),
            [a, b] if valid(a) && valid(b) && a != b => Ok(Term::Interaction(a.to_string(), b.to_string())),
            _ => Err(bad("expected a factor name or a pairwise interaction `a:b`")),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coding {
    CellMeans,
    Treatment,
}

/// Ordered model terms for one distribution parameter. Treatment coding
/// always carries an intercept; cell-means coding never does.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermList {
    pub coding: Coding,
    pub terms: Vec<Term>,
}

impl TermList {
    pub fn intercept() -> TermList {
        TermList { coding: Coding::Treatment, terms: Vec::new() }
    }

    pub fn treatment(terms: Vec<Term>) -> TermList {
        TermList { coding: Coding::Treatment, terms }
    }

    pub fn cell_means(terms: Vec<Term>) -> TermList {
        TermList { coding: Coding::CellMeans, terms }
    }

    pub fn is_intercept_only(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, term: &Term) -> bool {
        self.terms.contains(term)
    }

    /// Term labels for display; `intercept` when there are none.
    pub fn summary(&self) -> String {
        if self.terms.is_empty() {
            "intercept".into()
        } else {
            self.terms.iter().map(Term::label).collect::<Vec<_>>().join("+")
        }
    }
}

impl fmt::Display for TermList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = self.terms.iter().map(Term::label).collect::<Vec<_>>().join("+");
        match (self.coding, body.is_empty()) {
            (Coding::Treatment, true) => f.write_str("1"),
            (Coding::Treatment, false) => f.write_str(&body),
            (Coding::CellMeans, _) => write!(f, "~0+{body}"),
        }
    }
}

impl FromStr for TermList {
    type Err = Error;

    fn from_str(input: &str) -> Result<TermList> {
        let compact: String = input.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = |reason: &str| Error::TermSyntax { input: input.to_string(), reason: reason.into() };
        let body = compact.strip_prefix('~').unwrap_or(&compact);
        if body.is_empty() {
            return Err(bad("empty term list"));
        }
        let (coding, body) = match body.strip_prefix("0+") {
            Some(rest) => (Coding::CellMeans, rest),
            None if body == "0" => return Err(bad("a model needs at least one column")),
            None => (Coding::Treatment, body),
        };
        let mut terms: Vec<Term> = Vec::new();
        let mut push = |t: Term| {
            if !terms.contains(&t) {
                terms.push(t);
            }
        };
        for piece in body.split('+') {
            if piece.is_empty() {
                return Err(bad("empty term between `+` signs"));
            }
            if piece == "1" {
                if coding == Coding::CellMeans {
                    return Err(bad("`~0+` cannot be combined with an intercept"));
                }
                continue;
            }
            if piece == "0" {
                return Err(bad("`0` is only allowed as the `~0+` prefix"));
            }
            if let Some((a, b)) = piece.split_once('*') {
                let (ta, tb) = (Term::parse(a)?, Term::parse(b)?);
                match (ta, tb) {
                    (Term::Factor(a), Term::Factor(b)) if a != b => {
                        push(Term::Factor(a.clone()));
                        push(Term::Factor(b.clone()));
                        push(Term::Interaction(a, b));
                    }
                    _ => return Err(bad("`*` joins two distinct factor names")),
                }
            } else {
                push(Term::parse(piece)?);
            }
        }
        if coding == Coding::CellMeans && !terms.iter().any(|t| matches!(t, Term::Factor(_))) {
            return Err(bad("cell-means coding needs a main-effect factor"));
        }
        Ok(TermList { coding, terms })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub column_labels: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.column_labels.first().is_some_and(|l| l == INTERCEPT_LABEL)
    }

    /// `design · coefficients`.
    pub fn predictor(&self, coefficients: &[f64]) -> Result<DVector<f64>> {
        if coefficients.len() != self.n_cols() {
            return Err(Error::Dimension { expected: self.n_cols(), got: coefficients.len() });
        }
        Ok(&self.matrix * DVector::from_column_slice(coefficients))
    }

    /// Least-squares coefficients that make the predictor equal `eta` on every
    /// row. Exact whenever a constant lies in the column space.
    pub fn constant_coefficients(&self, eta: f64) -> Vec<f64> {
        let target = DVector::from_element(self.n_rows(), eta);
        let svd = self.matrix.clone().svd(true, true);
        svd.solve(&target, 1e-12).map(|v| v.iter().copied().collect()).unwrap_or_else(|_| {
            vec![0.0; self.n_cols()]
        })
    }
}

pub const INTERCEPT_LABEL: &str = "(Intercept)";

fn level_label(f: &Factor, level: usize) -> String {
    format!("{}{}", f.name, f.levels[level])
}

/// Build the design matrix for `terms` on `data`.
///
/// Columns come in a fixed order: intercept (treatment coding only), then each
/// term in declaration order with levels in the data's level order. The result
/// must have full column rank.
pub fn build_design(data: &ObservationTable, terms: &TermList) -> Result<DesignMatrix> {
    let n = data.n_rows();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    if terms.coding == Coding::Treatment {
        columns.push(vec![1.0; n]);
        labels.push(INTERCEPT_LABEL.into());
    }
    let mut full_coded_done = terms.coding == Coding::Treatment;
    for term in &terms.terms {
        match term {
            Term::Factor(name) => {
                let f = data.factor(name)?;
                let first = if full_coded_done { 1 } else { 0 };
                full_coded_done = true;
                for level in first..f.levels.len() {
                    columns.push(f.indicator(level).collect());
                    labels.push(level_label(f, level));
                }
            }
            Term::Interaction(a, b) => {
                let (fa, fb) = (data.factor(a)?, data.factor(b)?);
                for la in 1..fa.levels.len() {
                    for lb in 1..fb.levels.len() {
                        columns.push(
                            fa.indicator(la).zip(fb.indicator(lb)).map(|(x, y)| x * y).collect(),
                        );
                        labels.push(format!("{}:{}", level_label(fa, la), level_label(fb, lb)));
                    }
                }
            }
        }
    }
    let p = columns.len();
    if p == 0 {
        return Err(Error::RankDeficient(terms.to_string(), 0, 0));
    }
    let matrix = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let rank = if n == 0 { 0 } else { matrix.rank(1e-9 * (n as f64).sqrt()) };
    if rank < p {
        return Err(Error::RankDeficient(terms.to_string(), p, rank));
    }
    Ok(DesignMatrix { matrix, column_labels: labels })
}

/// Per-row parameter values `link⁻¹(design · coefficients)`.
pub fn apply_link(link: Link, design: &DesignMatrix, coefficients: &[f64]) -> Result<Vec<f64>> {
    Ok(design.predictor(coefficients)?.iter().map(|&eta| link.inverse(eta)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::trajan;

    #[test]
    fn parse_forms() {
        let t: TermList = "1".parse().unwrap();
        assert_eq!(t, TermList::intercept());
        let t: TermList = "~0+photoperiod".parse().unwrap();
        assert_eq!(t, TermList::cell_means(vec![Term::Factor("photoperiod".into())]));
        let t: TermList = "photoperiod*bap".parse().unwrap();
        assert_eq!(t.terms.len(), 3);
        assert_eq!(t.terms[2], Term::Interaction("photoperiod".into(), "bap".into()));
        let t: TermList = " ~ photoperiod + bap ".parse().unwrap();
        assert_eq!(t.to_string(), "photoperiod+bap");
        assert_eq!("~0+photoperiod".parse::<TermList>().unwrap().to_string(), "~0+photoperiod");
        assert_eq!("1+photoperiod".parse::<TermList>().unwrap().to_string(), "photoperiod");
    }

    #[test]
    fn parse_errors() {
        for bad in ["", "~", "0", "~0+1+photoperiod", "a++b", "a*a", "a:b:c", "~0+a:b", "a-b"] {
            assert!(bad.parse::<TermList>().is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn cell_means_photoperiod() {
        let d = trajan();
        let x = build_design(&d, &"~0+photoperiod".parse().unwrap()).unwrap();
        assert_eq!((x.n_rows(), x.n_cols()), (270, 2));
        assert_eq!(x.column_labels, vec!["photoperiod8", "photoperiod16"]);
        assert_eq!(x.matrix.column(0).sum(), 140.0);
        assert_eq!(x.matrix.column(1).sum(), 130.0);
        for i in 0..270 {
            assert_eq!(x.matrix.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn intercept_and_treatment() {
        let d = trajan();
        let x = build_design(&d, &TermList::intercept()).unwrap();
        assert_eq!(x.n_cols(), 1);
        assert!(x.matrix.iter().all(|&v| v == 1.0));
        let x = build_design(&d, &"photoperiod".parse().unwrap()).unwrap();
        assert_eq!(x.column_labels, vec!["(Intercept)", "photoperiod16"]);
        assert_eq!(x.matrix.column(1).sum(), 130.0);
        let x = build_design(&d, &"photoperiod*bap".parse().unwrap()).unwrap();
        assert_eq!(x.n_cols(), 8);
        let x = build_design(&d, &"~0+photoperiod*bap".parse().unwrap()).unwrap();
        assert_eq!(x.n_cols(), 8);
        assert_eq!(x.column_labels[..2], ["photoperiod8", "photoperiod16"]);
    }

    #[test]
    fn design_errors() {
        let d = trajan();
        assert!(matches!(build_design(&d, &"nope".parse().unwrap()), Err(Error::UnknownFactor(_))));
        // 16h-only rows make the photoperiod contrast constant.
        let sub = d.subset("photoperiod", "16").unwrap();
        assert!(matches!(
            build_design(&sub, &"photoperiod".parse().unwrap()),
            Err(Error::RankDeficient(..))
        ));
    }

    #[test]
    fn apply_link_reference_values() {
        let d = trajan();
        let x = build_design(&d, &"~0+photoperiod".parse().unwrap()).unwrap();
        let mu = apply_link(Link::Log, &x, &[1.9725, 1.6954]).unwrap();
        let photo = d.factor("photoperiod").unwrap();
        for (i, m) in mu.iter().enumerate() {
            let want = if photo.level_of(i) == "8" { 7.188_625_606_616_819 } else { 5.448_825_059_388_664 };
            assert!((m - want).abs() < 1e-12);
        }
        let nu = apply_link(Link::Logit, &x, &[-4.3808, -0.1351]).unwrap();
        assert!((nu[0] - 0.012_360_644_641_971_187).abs() < 1e-15);
        assert!((nu[269] - 0.466_276_278_212_135).abs() < 1e-15);
        let one = build_design(&d, &TermList::intercept()).unwrap();
        assert!(apply_link(Link::Identity, &one, &[2.5]).unwrap().iter().all(|&v| v == 2.5));
        assert!(matches!(apply_link(Link::Log, &x, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn constant_coefficients_hit_target() {
        let d = trajan();
        for s in ["1", "~0+photoperiod", "photoperiod*bap", "~0+bap+photoperiod"] {
            let x = build_design(&d, &s.parse().unwrap()).unwrap();
            let beta = x.constant_coefficients(0.7);
            let eta = x.predictor(&beta).unwrap();
            assert!(eta.iter().all(|&e| (e - 0.7).abs() < 1e-10), "{s}");
        }
    }

    #[test]
    fn cell_means_invariant_to_level_order() {
        let d = trajan();
        let mut r = d.clone();
        r.reorder_levels("bap", &["17.6".into(), "2.2".into(), "8.8".into(), "4.4".into()]).unwrap();
        let t: TermList = "~0+bap".parse().unwrap();
        let (x, xr) = (build_design(&d, &t).unwrap(), build_design(&r, &t).unwrap());
        let beta = [0.1, 0.2, 0.3, 0.4];
        // Same level effects, permuted to match the new column order.
        let beta_r = [0.4, 0.1, 0.3, 0.2];
        let a = apply_link(Link::Log, &x, &beta).unwrap();
        let b = apply_link(Link::Log, &xr, &beta_r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn design_is_deterministic() {
        let d = trajan();
        let t: TermList = "photoperiod*bap".parse().unwrap();
        assert_eq!(build_design(&d, &t).unwrap(), build_design(&d, &t).unwrap());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn log_round_trip(x in 1e-8f64..1e8) {
                prop_assert!((Link::Log.inverse(Link::Log.forward(x)) - x).abs() <= 1e-12 * x);
            }

            #[test]
            fn logit_round_trip(x in 1e-6f64..(1.0 - 1e-6)) {
                prop_assert!((Link::Logit.inverse(Link::Logit.forward(x)) - x).abs() <= 1e-12);
            }

            #[test]
            fn inverse_maps_into_domain(eta in -700.0f64..700.0) {
                prop_assert!(Link::Log.inverse(eta) > 0.0);
                let p = Link::Logit.inverse(eta);
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!(Link::Identity.inverse(Link::Identity.forward(eta)) == eta);
            }
        }
    }
}
