//! Quantile residuals, normal Q-Q and worm series, and term effects.
//!
//! For a discrete response the residual of `y` is `Φ⁻¹(u)` with `u` drawn
//! uniformly between the fitted `F(y-1)` and `F(y)` (randomized mode) or taken
//! as their midpoint.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::distributions::Param;
use crate::error::{Error, Result};
use crate::fitting::FittedModel;
use crate::specfun::{std_normal_pdf, std_normal_quantile};

/// Smallest group a worm series is drawn for.
pub const MIN_WORM_GROUP: usize = 8;
/// Two-sided 95% normal quantile used for bands and intervals.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    #[default]
    Randomized,
    Midpoint,
}

impl std::str::FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<ResidualMode> {
        match s.to_ascii_lowercase().as_str() {
            "randomized" => Ok(ResidualMode::Randomized),
            "midpoint" => Ok(ResidualMode::Midpoint),
            _ => Err(Error::Invalid(format!("unknown residual mode {s:?} (expected randomized or midpoint)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub index: usize,
    pub y: u64,
    pub cdf_lower: f64,
    pub cdf_upper: f64,
    pub u: f64,
    /// Absent when `cdf_lower == cdf_upper` (the fit gives `y` no mass).
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub residuals: Vec<Residual>,
    pub seed: u64,
    pub mode: ResidualMode,
}

impl ResidualSet {
    /// Residuals that have a `z`, with their row index.
    pub fn values(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.residuals.iter().filter_map(|r| r.z.map(|z| (r.index, z)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "y", "cdf_lower", "cdf_upper", "u", "z"])?;
        for r in &self.residuals {
            out.write_record([
                r.index.to_string(),
                r.y.to_string(),
                format!("{:.17e}", r.cdf_lower),
                format!("{:.17e}", r.cdf_upper),
                format!("{:.17e}", r.u),
                r.z.map(|z| format!("{z:.17e}")).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `Φ⁻¹(u)`, or `None` for a degenerate interval.
fn residual_of(lower: f64, upper: f64, u: f64) -> Option<f64> {
    if !(upper > lower) {
        return None;
    }
    // u can round onto 0 or 1 when the interval touches either end.
    let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    std_normal_quantile(u).ok()
}

/// Quantile residual of one observation with cdf interval `(lower, upper]`.
pub fn interval_residual(lower: f64, upper: f64, mode: ResidualMode, rng: &mut impl Rng) -> (f64, Option<f64>) {
    let u = match mode {
        ResidualMode::Midpoint => 0.5 * (lower + upper),
        ResidualMode::Randomized => {
            let v: f64 = rng.sample(Open01);
            lower + (upper - lower) * v
        }
    };
    (u, residual_of(lower, upper, u))
}

/// Quantile residuals of every row of `data` under `fm`.
pub fn quantile_residuals(fm: &FittedModel, data: &ObservationTable, seed: u64, mode: ResidualMode) -> Result<ResidualSet> {
    if !fm.is_usable() {
        return Err(Error::Invalid("model did not converge; residuals are not meaningful".into()));
    }
    let params = fm.row_params(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residuals = Vec::with_capacity(data.n_rows());
    for (i, (&y, par)) in data.response.iter().zip(&params).enumerate() {
        let (lower, upper) = fm.family.cdf_pair(par, y as i64);
        let (u, z) = interval_residual(lower, upper, mode, &mut rng);
        residuals.push(Residual { index: i, y, cdf_lower: lower, cdf_upper: upper, u, z });
    }
    Ok(ResidualSet { residuals, seed, mode })
}

/// Blom-type plotting position `(i - 3/8) / (m + 1/4)` for 1-based `i`.
pub fn plotting_position(i: usize, m: usize) -> f64 {
    (i as f64 - 0.375) / (m as f64 + 0.25)
}

/// Pointwise 95% band half-width of a worm plot at plotting position `p`.
pub fn worm_band(p: f64, m: usize) -> Result<f64> {
    let q = std_normal_quantile(p)?;
    Ok(Z95 * (p * (1.0 - p) / m as f64).sqrt() / std_normal_pdf(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WormPoint {
    pub q: f64,
    pub deviation: f64,
    pub band: f64,
}

impl WormPoint {
    pub fn inside(&self) -> bool {
        self.deviation.abs() <= self.band
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WormSeries {
    /// Factor level, or `None` for all residuals together.
    pub group: Option<String>,
    pub points: Vec<WormPoint>,
}

impl WormSeries {
    /// Sorted residuals against their normal scores.
    pub fn from_residuals(group: Option<String>, z: &[f64]) -> Result<WormSeries> {
        let m = z.len();
        if m < MIN_WORM_GROUP {
            return Err(Error::Invalid(format!(
                "worm series for {} has {m} residuals; at least {MIN_WORM_GROUP} are needed",
                group.as_deref().unwrap_or("all rows")
            )));
        }
        let mut sorted = z.to_vec();
        sorted.sort_by(f64::total_cmp);
        let points = sorted
            .iter()
            .enumerate()
            .map(|(i, &zi)| {
                let p = plotting_position(i + 1, m);
                let q = std_normal_quantile(p)?;
                Ok(WormPoint { q, deviation: zi - q, band: worm_band(p, m)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WormSeries { group, points })
    }

    pub fn fraction_inside(&self) -> f64 {
        self.points.iter().filter(|p| p.inside()).count() as f64 / self.points.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["group", "q", "deviation", "band"])?;
        let group = self.group.clone().unwrap_or_else(|| "all".into());
        for p in &self.points {
            out.write_record([
                group.clone(),
                format!("{:.17e}", p.q),
                format!("{:.17e}", p.deviation),
                format!("{:.17e}", p.band),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One worm series over all residuals, or one per level of `group`.
pub fn worm_series(rs: &ResidualSet, data: &ObservationTable, group: Option<&str>) -> Result<Vec<WormSeries>> {
    if rs.residuals.len() != data.n_rows() {
        return Err(Error::Dimension { expected: data.n_rows(), got: rs.residuals.len() });
    }
    let Some(name) = group else {
        let z: Vec<f64> = rs.values().map(|(_, z)| z).collect();
        return Ok(vec![WormSeries::from_residuals(None, &z)?]);
    };
    let factor = data.factor(name)?;
    let mut by_level: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (i, z) in rs.values() {
        by_level.entry(factor.codes[i]).or_default().push(z);
    }
    by_level
        .into_iter()
        .map(|(level, z)| WormSeries::from_residuals(Some(factor.levels[level].clone()), &z))
        .collect()
}

/// Normal Q-Q pairs `(theoretical, sample)` of the present residuals.
pub fn qq_series(rs: &ResidualSet) -> Result<Vec<(f64, f64)>> {
    let mut z: Vec<f64> = rs.values().map(|(_, z)| z).collect();
    z.sort_by(f64::total_cmp);
    let m = z.len();
    z.into_iter()
        .enumerate()
        .map(|(i, zi)| Ok((std_normal_quantile(plotting_position(i + 1, m))?, zi)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEffect {
    pub param: Param,
    pub label: String,
    /// Link-scale coefficient.
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl TermEffect {
    pub fn interval(&self) -> Option<(f64, f64)> {
        self.lower.zip(self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEffects {
    pub effects: Vec<TermEffect>,
    /// False when the fit has no covariance, so no intervals were formed.
    pub intervals_available: bool,
}

impl TermEffects {
    pub fn get(&self, param: Param, label: &str) -> Option<&TermEffect> {
        self.effects.iter().find(|e| e.param == param && e.label == label)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["param", "label", "estimate", "std_error", "lower", "upper"])?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_default();
        for e in &self.effects {
            out.write_record([
                e.param.name().to_string(),
                e.label.clone(),
                format!("{:.17e}", e.estimate),
                opt(e.std_error),
                opt(e.lower),
                opt(e.upper),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Every coefficient with `estimate ± 1.96 se` on the link scale.
pub fn term_effects(fm: &FittedModel) -> TermEffects {
    let effects: Vec<TermEffect> = fm
        .parameters
        .iter()
        .flat_map(|p| {
            p.coefficients.iter().map(move |c| TermEffect {
                param: p.param,
                label: c.label.clone(),
                estimate: c.estimate,
                std_error: c.std_error,
                lower: c.std_error.map(|se| c.estimate - Z95 * se),
                upper: c.std_error.map(|se| c.estimate + Z95 * se),
            })
        })
        .collect();
    let intervals_available = fm.vcov.is_some();
    TermEffects { effects, intervals_available }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::trajan;
    use crate::distributions::Family;
    use crate::fitting::{fit, FitOptions, ModelSpec};
    use proptest::prelude::*;

    #[test]
    fn midpoint_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (u, z) = interval_residual(0.2, 0.6, ResidualMode::Midpoint, &mut rng);
        assert!((u - 0.4).abs() < 1e-15);
        assert!((z.unwrap() - -0.253_347_103_135_799_8).abs() < 1e-9);
        let (_, z) = interval_residual(0.5 - 1e-12, 0.5, ResidualMode::Midpoint, &mut rng);
        assert!(z.unwrap().abs() < 1e-11);
    }

    #[test]
    fn degenerate_interval_has_no_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(interval_residual(0.7, 0.7, ResidualMode::Randomized, &mut rng).1, None);
    }

    #[test]
    fn band_at_median() {
        let b = worm_band(0.5, 270).unwrap();
        assert!((b - 0.149_497_568_034_415_6).abs() < 1e-12, "{b}");
    }

    #[test]
    fn perfect_residuals_have_zero_deviation() {
        let m = 50;
        let z: Vec<f64> = (1..=m).map(|i| std_normal_quantile(plotting_position(i, m)).unwrap()).collect();
        let w = WormSeries::from_residuals(None, &z).unwrap();
        assert!(w.points.iter().all(|p| p.deviation.abs() < 1e-15));
        assert_eq!(w.fraction_inside(), 1.0);
    }

    #[test]
    fn small_groups_rejected() {
        assert!(WormSeries::from_residuals(None, &[0.0; 7]).is_err());
        assert!(WormSeries::from_residuals(None, &[0.0; 8]).is_ok());
    }

    #[test]
    fn band_shape() {
        let w = WormSeries::from_residuals(None, &vec![0.0; 101]).unwrap();
        for pair in w.points.windows(2) {
            assert!(pair[1].q > pair[0].q);
        }
        let mid = 50;
        for i in 0..mid {
            assert!(w.points[i].band > 0.0);
            assert!(w.points[i].band > w.points[i + 1].band);
            assert!(w.points[100 - i].band > w.points[99 - i].band);
        }
    }

    #[test]
    fn residuals_reproducible_and_bounded() {
        let d = trajan();
        let fm = fit(&ModelSpec::constant(Family::Nb), &d, &FitOptions::default()).unwrap();
        let a = quantile_residuals(&fm, &d, 7, ResidualMode::Randomized).unwrap();
        let b = quantile_residuals(&fm, &d, 7, ResidualMode::Randomized).unwrap();
        let c = quantile_residuals(&fm, &d, 8, ResidualMode::Randomized).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (r, s) in a.residuals.iter().zip(&c.residuals) {
            assert!(r.cdf_lower <= r.u && r.u <= r.cdf_upper);
            assert_eq!((r.cdf_lower, r.cdf_upper), (s.cdf_lower, s.cdf_upper));
        }
        let m = quantile_residuals(&fm, &d, 1, ResidualMode::Midpoint).unwrap();
        let m2 = quantile_residuals(&fm, &d, 2, ResidualMode::Midpoint).unwrap();
        assert_eq!(m.residuals, m2.residuals);
        assert!(m.residuals.iter().all(|r| r.u == 0.5 * (r.cdf_lower + r.cdf_upper)));
    }

    #[test]
    fn worm_groups_follow_levels() {
        let d = trajan();
        let fm = fit(&ModelSpec::constant(Family::Po), &d, &FitOptions::default()).unwrap();
        let rs = quantile_residuals(&fm, &d, 1, ResidualMode::Randomized).unwrap();
        let ws = worm_series(&rs, &d, Some("photoperiod")).unwrap();
        let sizes: Vec<(Option<String>, usize)> = ws.iter().map(|w| (w.group.clone(), w.points.len())).collect();
        assert_eq!(sizes, vec![(Some("8".into()), 140), (Some("16".into()), 130)]);
        assert_eq!(worm_series(&rs, &d, None).unwrap()[0].points.len(), 270);
        assert!(worm_series(&rs, &d, Some("light")).is_err());
    }

    #[test]
    fn intercept_only_effects() {
        let d = trajan();
        let fm = fit(&ModelSpec::constant(Family::Po), &d, &FitOptions::default()).unwrap();
        let te = term_effects(&fm);
        assert!(te.intervals_available);
        assert_eq!(te.effects.len(), 1);
        let mean = d.response.iter().sum::<u64>() as f64 / 270.0;
        let e = &te.effects[0];
        assert!((e.estimate - mean.ln()).abs() < 1e-6);
        let (lo, hi) = e.interval().unwrap();
        assert!(lo < e.estimate && e.estimate < hi);
        assert!(((hi - lo) - 2.0 * Z95 * e.std_error.unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn randomized_u_stays_in_interval(a in 0.0f64..1.0, w in 0.0f64..1.0, seed in any::<u64>()) {
            let b = a + (1.0 - a) * w;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (u, z) = interval_residual(a, b, ResidualMode::Randomized, &mut rng);
            prop_assert!(a <= u && u <= b);
            prop_assert_eq!(z.is_some(), b > a);
        }
    }
}
