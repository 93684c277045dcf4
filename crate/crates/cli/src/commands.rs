use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use zicount::dataset::{read_csv, trajan, CsvSchema, ObservationTable};
use zicount::diagnostics::{qq_series, quantile_residuals, term_effects, worm_series};
use zicount::distributions::{Family, Param};
use zicount::fitting::{fit, FitOptions, FittedModel, ModelSpec};
use zicount::linkdesign::TermList;
use zicount::selection::{compare_models, step_gaic_all, CandidateScope, ComparisonRow};
use zicount::Error;

use crate::plots;
use crate::{Command, DataArgs, FitArgs, TermArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Convergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Convergence(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownFactor(_) | Error::UnknownFamily(_) | Error::UnknownLink(_) | Error::TermSyntax { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_data(args: &DataArgs) -> Result<ObservationTable> {
    if args.data == "trajan" {
        return Ok(trajan());
    }
    let Some(response) = &args.response else {
        return Err(CliError::Usage("--response is required with a CSV file".into()));
    };
    let schema = CsvSchema { response: response.clone(), factors: args.factors.clone() };
    Ok(read_csv(&args.data, &schema)?)
}

fn options(args: &FitArgs) -> FitOptions {
    FitOptions { max_iter: args.max_iter, tol: args.tol, n_starts: args.starts, seed: args.seed }
}

/// Model from per-parameter flags; parameters without a flag get `default`.
fn build_spec(family: Family, terms: &TermArgs, default: impl Fn(Param) -> TermList) -> Result<ModelSpec> {
    let given = [
        (Param::Mu, &terms.mu, terms.mu_link),
        (Param::Sigma, &terms.sigma, terms.sigma_link),
        (Param::Nu, &terms.nu, terms.nu_link),
        (Param::Tau, &terms.tau, terms.tau_link),
    ];
    let mut spec = ModelSpec::constant(family);
    for (param, list, link) in given {
        if !family.has(param) {
            if list.is_some() || link.is_some() {
                return Err(CliError::Usage(format!("{family} has no parameter {param}")));
            }
            continue;
        }
        spec = spec.with_terms(param, list.clone().unwrap_or_else(|| default(param)))?;
        if let Some(link) = link {
            spec = spec.with_link(param, link)?;
        }
    }
    Ok(spec)
}

/// Predictors of the Trajan comparison table: photoperiod (cell means) on
/// the mean and inflation, and on the NB dispersion.
fn table_terms(family: Family, param: Param, data: &ObservationTable) -> TermList {
    if data.factor("photoperiod").is_err() {
        return TermList::intercept();
    }
    let photo: TermList = "~0+photoperiod".parse().expect("valid terms");
    let with_photo = match family {
        Family::Po | Family::Nb | Family::Zip | Family::Zinb => true,
        Family::Zipig => param != Param::Sigma,
        Family::Zibnb => matches!(param, Param::Mu | Param::Tau),
    };
    if with_photo {
        photo
    } else {
        TermList::intercept()
    }
}

fn scope(arg: &Option<String>, data: &ObservationTable) -> Result<CandidateScope> {
    let scope = match arg {
        Some(s) => CandidateScope::parse(s).map_err(|e| CliError::Usage(e.to_string()))?,
        None => CandidateScope::default(),
    };
    scope.check(data)?;
    Ok(scope)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn prepare_out(dir: &PathBuf) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn convergence_note(fm: &FittedModel) -> String {
    let c = &fm.convergence;
    let status = if c.converged {
        "converged".to_string()
    } else if !c.boundary.is_empty() {
        let names: Vec<&str> = c.boundary.iter().map(|p| p.name()).collect();
        format!("stopped at the boundary of {}", names.join(", "))
    } else {
        "NOT converged".to_string()
    };
    format!("{status} (iterations {}, gradient {:.2e}, best start {})", c.iterations, c.gradient_norm, c.best_start)
}

fn print_fit(fm: &FittedModel) {
    println!("model {}", fm.spec());
    println!("n {}  df {}", fm.n_obs, fm.df);
    println!("deviance {:.3}  AIC {:.3}  BIC {:.3}", fm.deviance, fm.aic, fm.bic);
    println!("{}", convergence_note(fm));
    println!("{:<6} {:<9} {:<22} {:>11} {:>11}", "param", "link", "coefficient", "estimate", "std.error");
    for p in &fm.parameters {
        for c in &p.coefficients {
            let se = c.std_error.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
            println!("{:<6} {:<9} {:<22} {:>11.4} {:>11}", p.param.name(), p.link.name(), c.label, c.estimate, se);
        }
    }
}

fn print_table(rows: &[ComparisonRow]) {
    println!(
        "{:<7} {:>10} {:>10} {:>10}  {:<18} {:<18} {:<18} {:<18}",
        "Model", "-2logLik", "AIC", "BIC", "mu", "sigma", "nu", "tau"
    );
    for r in rows {
        let term = |p: Param| {
            r.terms.iter().find(|(q, _)| *q == p).map(|(_, t)| t.clone()).unwrap_or_else(|| "-".into())
        };
        println!(
            "{:<7} {:>10.3} {:>10.3} {:>10.3}  {:<18} {:<18} {:<18} {:<18}",
            r.family.id(),
            r.deviance,
            r.aic,
            r.bic,
            term(Param::Mu),
            term(Param::Sigma),
            term(Param::Nu),
            term(Param::Tau)
        );
    }
}

fn require_usable(fm: &FittedModel) -> Result<()> {
    if fm.is_usable() {
        Ok(())
    } else {
        Err(CliError::Convergence(format!(
            "{} did not converge: gradient norm {:.2e} after {} iterations",
            fm.spec(),
            fm.convergence.gradient_norm,
            fm.convergence.iterations
        )))
    }
}

/// Keeps letters, digits, `.`, `-` and `_` so levels make safe file names.
fn file_part(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' }).collect()
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit { data, model, fit: fa, out } => {
            let d = load_data(&data)?;
            let spec = build_spec(model.family, &model.terms, |_| TermList::intercept())?;
            let fm = fit(&spec, &d, &options(&fa))?;
            prepare_out(&out.out)?;
            write_json(&out.out, "fit.json", &fm)?;
            print_fit(&fm);
            require_usable(&fm)
        }
        Command::Select { data, family, scope: scope_arg, k, fit: fa, out } => {
            let d = load_data(&data)?;
            let scope = scope(&scope_arg, &d)?;
            if !(k > 0.0) {
                return Err(CliError::Usage(format!("--k must be positive, got {k}")));
            }
            let trace = step_gaic_all(family, &d, &scope, k, &options(&fa))?;
            prepare_out(&out.out)?;
            let mut log = create(&out.out, "trace.log")?;
            trace.write_log(&mut log)?;
            log.flush()?;
            write_json(&out.out, "trace.json", &trace)?;
            write_json(&out.out, "fit.json", &trace.final_fit)?;
            print_table(&compare_models(std::slice::from_ref(&trace.final_fit), Default::default())?);
            println!("{}", convergence_note(&trace.final_fit));
            require_usable(&trace.final_fit)
        }
        Command::Compare { data, families, criterion, select, scope: scope_arg, k, terms, fit: fa, out } => {
            let d = load_data(&data)?;
            if families.is_empty() {
                return Err(CliError::Usage("--families needs at least one family".into()));
            }
            let scope = if select { Some(scope(&scope_arg, &d)?) } else { None };
            let mut fits = Vec::with_capacity(families.len());
            for &family in &families {
                let fm = match &scope {
                    Some(s) => step_gaic_all(family, &d, s, k, &options(&fa))?.final_fit,
                    None => {
                        // Term flags for parameters a family lacks are ignored here.
                        let own = TermArgs::only_present(&terms, family);
                        let spec = build_spec(family, &own, |p| table_terms(family, p, &d))?;
                        fit(&spec, &d, &options(&fa))?
                    }
                };
                fits.push(fm);
            }
            let rows = compare_models(&fits, criterion)?;
            prepare_out(&out.out)?;
            write_compare_csv(&out.out, &rows)?;
            print_table(&rows);
            for fm in &fits {
                require_usable(fm)?;
            }
            Ok(())
        }
        Command::Diagnose { data, fit_file, family, terms, fit: fa, mode, group, plots: want_plots, out } => {
            let d = load_data(&data)?;
            let fm = match (fit_file, family) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
                    let fm: FittedModel = serde_json::from_str(&text)
                        .map_err(|e| CliError::Data(format!("{} is not a fit file: {e}", path.display())))?;
                    if fm.data_fingerprint != d.fingerprint() {
                        return Err(CliError::Data(format!("{} was fitted to different data", path.display())));
                    }
                    fm
                }
                (None, Some(family)) => {
                    let spec = build_spec(family, &terms, |_| TermList::intercept())?;
                    fit(&spec, &d, &options(&fa))?
                }
                (None, None) => {
                    return Err(CliError::Usage("diagnose needs --fit-file or --family".into()));
                }
            };
            if let Some(g) = &group {
                d.factor(g)?;
            }
            require_usable(&fm)?;
            prepare_out(&out.out)?;
            let rs = quantile_residuals(&fm, &d, fa.seed, mode)?;
            let mut w = create(&out.out, "residuals.csv")?;
            rs.write_csv(&mut w)?;
            w.flush()?;

            let mut series = worm_series(&rs, &d, None)?;
            if let Some(g) = &group {
                series.extend(worm_series(&rs, &d, Some(g))?);
            }
            for s in &series {
                let stem = match &s.group {
                    None => "worm_all".to_string(),
                    Some(level) => format!("worm_{}_{}", file_part(group.as_deref().unwrap_or("group")), file_part(level)),
                };
                let mut w = create(&out.out, &format!("{stem}.csv"))?;
                s.write_csv(&mut w)?;
                w.flush()?;
                if want_plots {
                    fs::write(out.out.join(format!("{stem}.svg")), plots::worm(s, group.as_deref()))?;
                }
                println!("{stem}: {} points, {:.1}% inside the 95% band", s.points.len(), 100.0 * s.fraction_inside());
            }

            let effects = term_effects(&fm);
            let mut w = create(&out.out, "terms.csv")?;
            effects.write_csv(&mut w)?;
            w.flush()?;
            if !effects.intervals_available {
                println!("note: covariance unavailable, term effects have no intervals");
            }
            let missing = rs.residuals.iter().filter(|r| r.z.is_none()).count();
            if missing > 0 {
                println!("note: {missing} observations have zero fitted probability and no residual");
            }

            if want_plots {
                fs::write(out.out.join("qq.svg"), plots::qq(&qq_series(&rs)?))?;
                for p in &fm.parameters {
                    let name = format!("terms_{}.svg", p.param.name());
                    fs::write(out.out.join(name), plots::terms(p.param, &effects))?;
                }
                fs::write(out.out.join("histogram.svg"), plots::histogram(&fm, &d)?)?;
            }
            Ok(())
        }
    }
}

impl TermArgs {
    /// The flags that apply to `family`.
    fn only_present(t: &TermArgs, family: Family) -> TermArgs {
        let keep = |p: Param| family.has(p);
        TermArgs {
            mu: t.mu.clone().filter(|_| keep(Param::Mu)),
            sigma: t.sigma.clone().filter(|_| keep(Param::Sigma)),
            nu: t.nu.clone().filter(|_| keep(Param::Nu)),
            tau: t.tau.clone().filter(|_| keep(Param::Tau)),
            mu_link: t.mu_link.filter(|_| keep(Param::Mu)),
            sigma_link: t.sigma_link.filter(|_| keep(Param::Sigma)),
            nu_link: t.nu_link.filter(|_| keep(Param::Nu)),
            tau_link: t.tau_link.filter(|_| keep(Param::Tau)),
        }
    }
}

fn write_compare_csv(dir: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = create(dir, "compare.csv")?;
    writeln!(w, "family,deviance,df,aic,bic,mu,sigma,nu,tau,converged")?;
    for r in rows {
        let term = |p: Param| r.terms.iter().find(|(q, _)| *q == p).map(|(_, t)| t.clone()).unwrap_or_default();
        writeln!(
            w,
            "{},{:.6},{},{:.6},{:.6},{},{},{},{},{}",
            r.family.id(),
            r.deviance,
            r.df,
            r.aic,
            r.bic,
            term(Param::Mu),
            term(Param::Sigma),
            term(Param::Nu),
            term(Param::Tau),
            r.converged
        )?;
    }
    w.flush()?;
    Ok(())
}
