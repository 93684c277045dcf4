//! `zicount`: fit, select, compare and diagnose zero-inflated count models.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 convergence failure.

mod commands;
mod plots;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zicount::diagnostics::ResidualMode;
use zicount::distributions::Family;
use zicount::linkdesign::{Link, TermList};
use zicount::selection::Criterion;

#[derive(Parser)]
#[command(name = "zicount", version, about = "Zero-inflated count regression with per-parameter predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model with the given predictors.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stepwise GAIC selection of terms for every parameter of a family.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_family)]
        family: Family,
        /// Comma-separated candidate terms, e.g. "photoperiod,bap,photoperiod:bap".
        #[arg(long)]
        scope: Option<String>,
        /// Penalty per coefficient (2 gives AIC).
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit several families and rank them by AIC or BIC.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated family ids.
        #[arg(long, value_delimiter = ',', value_parser = parse_family, default_value = "ZIP,ZINB,ZIPIG,ZIBNB")]
        families: Vec<Family>,
        #[arg(long, value_parser = parse_criterion, default_value = "aic")]
        criterion: Criterion,
        /// Choose each family's terms by stepwise selection instead of the
        /// default predictors.
        #[arg(long)]
        select: bool,
        #[arg(long)]
        scope: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        #[command(flatten)]
        terms: TermArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Quantile residuals, worm series, term effects and plots.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        /// A fit.json written by `fit` or `select`; otherwise give --family
        /// and predictors.
        #[arg(long, conflicts_with = "family")]
        fit_file: Option<PathBuf>,
        #[arg(long, value_parser = parse_family)]
        family: Option<Family>,
        #[command(flatten)]
        terms: TermArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, value_parser = parse_mode, default_value = "randomized")]
        mode: ResidualMode,
        /// Factor whose levels get their own worm series.
        #[arg(long)]
        group: Option<String>,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// "trajan" for the embedded data set, or a CSV path.
    #[arg(long, default_value = "trajan")]
    data: String,
    /// Response column of a CSV file.
    #[arg(long)]
    response: Option<String>,
    /// Comma-separated factor columns of a CSV file.
    #[arg(long, value_delimiter = ',')]
    factors: Vec<String>,
}

#[derive(Args, Clone)]
struct TermArgs {
    #[arg(long, value_parser = parse_terms)]
    mu: Option<TermList>,
    #[arg(long, value_parser = parse_terms)]
    sigma: Option<TermList>,
    #[arg(long, value_parser = parse_terms)]
    nu: Option<TermList>,
    #[arg(long, value_parser = parse_terms)]
    tau: Option<TermList>,
    #[arg(long, value_parser = parse_link)]
    mu_link: Option<Link>,
    #[arg(long, value_parser = parse_link)]
    sigma_link: Option<Link>,
    #[arg(long, value_parser = parse_link)]
    nu_link: Option<Link>,
    #[arg(long, value_parser = parse_link)]
    tau_link: Option<Link>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_parser = parse_family)]
    family: Family,
    #[command(flatten)]
    terms: TermArgs,
}

#[derive(Args, Clone, Copy)]
struct FitArgs {
    /// Seed for start perturbations and residual randomization.
    #[arg(long, env = "ZICOUNT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 5)]
    starts: usize,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory, created if absent.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: zicount::Error| e.to_string())
}

fn parse_terms(s: &str) -> Result<TermList, String> {
    s.parse().map_err(|e: zicount::Error| e.to_string())
}

fn parse_link(s: &str) -> Result<Link, String> {
    s.parse().map_err(|e: zicount::Error| e.to_string())
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: zicount::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ResidualMode, String> {
    s.parse().map_err(|e: zicount::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
