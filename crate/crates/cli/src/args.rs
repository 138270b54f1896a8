use std::path::PathBuf;

use arw_core::{SchedulerPolicy, DEFAULT_BUDGET};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "arw", version, about = "Activated random walk on finite boxes of Z^2")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stabilize one configuration and report (M, S, Φ).
    Stabilize(StabilizeArgs),
    /// Stabilize with several scheduler policies and compare the outputs.
    AbelianCheck(AbelianArgs),
    /// Monte Carlo estimate of P(S(B_N) ≥ ρ|B_N|).
    Tail(TailArgs),
    /// Mean sleeping density over a (λ, ζ) grid.
    Curve(CurveArgs),
    /// Heuristic bracket for the critical density.
    ZetaC(ZetaCArgs),
    /// Compare the single-particle oracle with simulation.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct Output {
    /// Master seed. Required: there is no implicit random seed.
    #[arg(long, required = true)]
    pub seed: u64,
    /// Data file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Also write the JSON summary here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    /// full, bernoulli, poisson, single or file=PATH (CSV with header x,y,count).
    #[arg(long, default_value = "full", value_parser = parse_init)]
    pub init: InitSpec,
    /// Density for bernoulli/poisson initial conditions.
    #[arg(long, value_parser = parse_density)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Full,
    Bernoulli,
    Poisson,
    Single,
    File(PathBuf),
}

#[derive(Debug, Clone, Args)]
pub struct StabilizeArgs {
    #[arg(short = 'N', long = "radius")]
    pub radius: u32,
    #[arg(long, value_parser = parse_rate, allow_negative_numbers = true)]
    pub lambda: f64,
    #[command(flatten)]
    pub init: InitArgs,
    #[arg(long, default_value = "lifo", value_parser = parse_scheduler)]
    pub scheduler: SchedulerPolicy,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    /// Emit per-site fields (needs --format csv).
    #[arg(long)]
    pub fields: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct AbelianArgs {
    #[arg(short = 'N', long = "radius")]
    pub radius: u32,
    #[arg(long, value_parser = parse_rate, allow_negative_numbers = true)]
    pub lambda: f64,
    #[command(flatten)]
    pub init: InitArgs,
    /// Policies to compare; defaults to all four.
    #[arg(long = "policies", value_delimiter = ',', value_parser = parse_scheduler)]
    pub policies: Vec<SchedulerPolicy>,
    /// Number of independent (seed, η₀) tuples to check.
    #[arg(long, default_value_t = 1)]
    pub replicas: u64,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct TailArgs {
    #[arg(short = 'N', long = "radius")]
    pub radius: u32,
    #[arg(long, value_parser = parse_positive_rate, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, value_parser = parse_rho, allow_negative_numbers = true)]
    pub rho: f64,
    #[command(flatten)]
    pub init: InitArgs,
    #[arg(long, default_value_t = 1000)]
    pub replicas: u64,
    #[arg(long, default_value = "lifo", value_parser = parse_scheduler)]
    pub scheduler: SchedulerPolicy,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    /// Verify every k-th replica with the balance checks (0 = never).
    #[arg(long, default_value_t = 64)]
    pub verify_every: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    #[arg(short = 'N', long = "radius")]
    pub radius: u32,
    /// Comma-separated sleep rates.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_rate, allow_negative_numbers = true)]
    pub lambda: Vec<f64>,
    /// Comma-separated Poisson densities.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_density, allow_negative_numbers = true)]
    pub zeta: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub replicas: u64,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct ZetaCArgs {
    #[arg(short = 'N', long = "radius")]
    pub radius: u32,
    #[arg(long, value_parser = parse_rate, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub replicas: u64,
    #[arg(long, default_value_t = 0.02, value_parser = parse_tolerance)]
    pub tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(short = 'N', long = "radius")]
    pub radius: u32,
    #[arg(long, value_parser = parse_positive_rate, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100_000)]
    pub replicas: u64,
    #[command(flatten)]
    pub output: Output,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("{s:?} is not a number: {e}"))
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("sleep rate must be finite and ≥ 0, got {s}"))
    }
}

fn parse_positive_rate(s: &str) -> Result<f64, String> {
    let v = parse_rate(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("sleep rate must be > 0 for this command, got {s}"))
    }
}

fn parse_density(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("density must be finite and ≥ 0, got {s}"))
    }
}

fn parse_rho(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("ρ must be positive, got {s}"))
    }
}

fn parse_tolerance(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("tolerance must be in (0,1), got {s}"))
    }
}

fn parse_scheduler(s: &str) -> Result<SchedulerPolicy, String> {
    s.parse().map_err(|e: arw_core::engine::UnknownScheduler| e.to_string())
}

fn parse_init(s: &str) -> Result<InitSpec, String> {
    match s {
        "full" => Ok(InitSpec::Full),
        "bernoulli" => Ok(InitSpec::Bernoulli),
        "poisson" => Ok(InitSpec::Poisson),
        "single" => Ok(InitSpec::Single),
        other => match other.strip_prefix("file=") {
            Some(path) if !path.is_empty() => Ok(InitSpec::File(PathBuf::from(path))),
            _ => Err(format!(
                "unknown initial condition {s:?} (expected full, bernoulli, poisson, single or file=PATH)"
            )),
        },
    }
}
