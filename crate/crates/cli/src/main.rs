mod commands;
mod input;
mod simconfig;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latentpath::report::StarConvention;

/// Structural equation modeling from the command line.
#[derive(Debug, Parser)]
#[command(name = "latentpath", version, about)]
pub struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Significance star thresholds used in text tables.
    #[arg(long, global = true, value_enum, default_value_t = Stars::Lenient)]
    pub stars: Stars,
    /// Random seed (bootstrap and simulation).
    #[arg(long, global = true, env = "LATENTPATH_SEED")]
    pub seed: Option<u64>,
    /// Field delimiter of data files (a single byte).
    #[arg(long, global = true, default_value = ",", conflicts_with = "tab")]
    pub delimiter: String,
    /// Data files are tab separated.
    #[arg(long, global = true)]
    pub tab: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stars {
    /// * < .1, ** < .05, *** < .001
    Lenient,
    /// * < .05, ** < .01, *** < .001
    Conventional,
}

impl From<Stars> for StarConvention {
    fn from(s: Stars) -> Self {
        match s {
            Stars::Lenient => StarConvention::Lenient,
            Stars::Conventional => StarConvention::Conventional,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a structural equation model.
    Fit(FitArgs),
    /// Fit the measurement part only and assess convergent and discriminant validity.
    Cfa(FitArgs),
    /// Exploratory factor analysis with optional varimax rotation.
    Efa(EfaArgs),
    /// Cronbach's alpha, composite reliability and AVE per construct.
    Reliability(ReliabilityArgs),
    /// Total, direct and indirect effects with confidence intervals.
    Mediate(MediateArgs),
    /// Draw a normal sample from a model with given parameter values.
    Simulate(SimulateArgs),
    /// Full analysis: validity, reliability, fit, paths, effects and hypotheses.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChisqN {
    #[value(name = "n")]
    N,
    #[value(name = "n-1")]
    NMinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IdentificationArg {
    Marker,
    UnitVariance,
}

#[derive(Debug, Args)]
pub struct Estimation {
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub gtol: f64,
    /// Sample size multiplier of the chi-square statistic.
    #[arg(long, value_enum, default_value_t = ChisqN::NMinusOne)]
    pub chisq_n: ChisqN,
    #[arg(long, value_enum, default_value_t = IdentificationArg::Marker)]
    pub identification: IdentificationArg,
}

#[derive(Debug, Args)]
pub struct ModelData {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: ModelData,
    #[command(flatten)]
    pub estimation: Estimation,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rotation {
    Varimax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractionArg {
    /// Principal components.
    Pc,
    /// Iterated principal axis.
    Paf,
}

#[derive(Debug, Args)]
pub struct EfaArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated item columns (default: every column).
    #[arg(long, value_delimiter = ',')]
    pub items: Vec<String>,
    /// `kaiser` or `m=<k>`.
    #[arg(long, default_value = "kaiser")]
    pub retain: String,
    /// Hide loadings whose magnitude is below this value.
    #[arg(long, default_value_t = 0.4)]
    pub suppress: f64,
    #[arg(long, value_enum, default_value_t = Rotation::Varimax)]
    pub rotation: Rotation,
    #[arg(long, value_enum, default_value_t = ExtractionArg::Pc)]
    pub extraction: ExtractionArg,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `Name=item1,item2,...`; repeat for each construct.
    #[arg(long = "construct", required = true)]
    pub constructs: Vec<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntervalArg {
    Bootstrap,
    Delta,
}

#[derive(Debug, Args)]
pub struct Intervals {
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 2000)]
    pub boot: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Worker threads for the bootstrap (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Significance level for hypothesis verdicts.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct MediateArgs {
    #[command(flatten)]
    pub input: ModelData,
    /// `SRC:MED:DST`; repeat for several effects.
    #[arg(long = "effect", required = true)]
    pub effects: Vec<String>,
    /// `ID=SRC:MED:DST` mediation hypothesis; repeatable.
    #[arg(long = "hypothesis")]
    pub hypotheses: Vec<String>,
    #[arg(long, value_enum, default_value_t = IntervalArg::Bootstrap)]
    pub method: IntervalArg,
    #[command(flatten)]
    pub intervals: Intervals,
    #[command(flatten)]
    pub estimation: Estimation,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// TOML file with sample size, seed and parameter values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample size (overrides the config).
    #[arg(long)]
    pub n: Option<usize>,
    /// Where to write the simulated table (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the run report (default: standard error).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: ModelData,
    /// Tabulate this column's levels; repeatable.
    #[arg(long)]
    pub frequency: Vec<String>,
    #[arg(long, value_enum, default_value_t = IntervalArg::Delta)]
    pub method: IntervalArg,
    #[command(flatten)]
    pub intervals: Intervals,
    #[command(flatten)]
    pub estimation: Estimation,
    #[command(flatten)]
    pub output: Output,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(run) => {
            let status = if run.domain_failure.is_some() { 1 } else { 0 };
            if let Err(e) = run.emit(&cli) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            if let Some(msg) = &run.domain_failure {
                eprintln!("error: {msg}");
            }
            ExitCode::from(status)
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.code())
        }
    }
}
