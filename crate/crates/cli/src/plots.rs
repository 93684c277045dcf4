//! The diagnostic charts written by `diagnose --plots`.

use zicount::dataset::ObservationTable;
use zicount::diagnostics::{TermEffects, WormSeries};
use zicount::distributions::Param;
use zicount::fitting::FittedModel;

use crate::commands::CliError;
use crate::svg::Chart;

pub fn qq(pairs: &[(f64, f64)]) -> String {
    let lo = pairs.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
    Chart::new("Normal Q-Q plot of quantile residuals", "Theoretical quantiles", "Sample quantiles")
        .line(vec![(lo, lo), (hi, hi)], "#999", true)
        .points(pairs.to_vec(), "#1f4e9c")
        .render()
}

pub fn worm(series: &WormSeries, factor: Option<&str>) -> String {
    let title = match (&series.group, factor) {
        (Some(level), Some(f)) => format!("Worm plot, {f} = {level}"),
        (Some(level), None) => format!("Worm plot, {level}"),
        _ => "Worm plot".to_string(),
    };
    let upper: Vec<(f64, f64)> = series.points.iter().map(|p| (p.q, p.band)).collect();
    let lower: Vec<(f64, f64)> = series.points.iter().map(|p| (p.q, -p.band)).collect();
    let (q0, q1) = (series.points[0].q, series.points[series.points.len() - 1].q);
    Chart::new(&title, "Unit normal quantile", "Deviation")
        .line(vec![(q0, 0.0), (q1, 0.0)], "#999", true)
        .line(upper, "#b22", true)
        .line(lower, "#b22", true)
        .points(series.points.iter().map(|p| (p.q, p.deviation)).collect(), "#1f4e9c")
        .render()
}

/// Link-scale estimates with 95% intervals for one parameter.
pub fn terms(param: Param, effects: &TermEffects) -> String {
    let own: Vec<_> = effects.effects.iter().filter(|e| e.param == param).collect();
    let points: Vec<(f64, f64)> = own.iter().enumerate().map(|(i, e)| (i as f64 + 1.0, e.estimate)).collect();
    let bars: Vec<(f64, f64, f64)> = own
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.interval().map(|(lo, hi)| (i as f64 + 1.0, lo, hi)))
        .collect();
    let n = own.len() as f64;
    Chart::new(&format!("Term plot for {param}"), "Coefficient", &format!("Effect on the {param} predictor"))
        .categories(own.iter().map(|e| e.label.clone()).collect())
        .line(vec![(0.5, 0.0), (n + 0.5, 0.0)], "#999", true)
        .segments(bars, "#1f4e9c", 2.0)
        .points(points, "#1f4e9c")
        .with_zero()
        .render()
}

/// Observed relative frequencies with the fitted marginal pmf (the average of
/// the per-row pmfs) drawn as spikes.
pub fn histogram(fm: &FittedModel, data: &ObservationTable) -> Result<String, CliError> {
    let params = fm.row_params(data)?;
    let top = data.response.iter().copied().max().unwrap_or(0);
    let n = data.n_rows() as f64;
    let mut observed = vec![0.0; top as usize + 1];
    for &y in &data.response {
        observed[y as usize] += 1.0 / n;
    }
    let mut fitted = vec![0.0; top as usize + 1];
    for p in &params {
        for (y, f) in fitted.iter_mut().enumerate() {
            *f += fm.family.log_pmf(p, y as u64)?.exp() / n;
        }
    }
    let bars = observed.iter().enumerate().map(|(y, &f)| (y as f64 - 0.5, y as f64 + 0.5, f)).collect();
    let spikes = fitted.iter().enumerate().map(|(y, &f)| (y as f64, 0.0, f)).collect();
    let tops = fitted.iter().enumerate().map(|(y, &f)| (y as f64, f)).collect();
    Ok(Chart::new(&format!("{} fitted to {}", fm.family, data.response_name), &data.response_name, "Relative frequency")
        .bars(bars, "#c9d6ea")
        .segments(spikes, "#b22", 1.5)
        .points(tops, "#b22")
        .render())
}
