use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Pulsed-injection charge-qubit simulator for a two-dot quantum-dot
/// molecule.
///
/// Parameters come from built-in defaults, then `--params FILE`, then
/// `--set` and `--temperature` (later sources win). Every output file
/// carries the parameters it was made with as `# key = value` comments.
#[derive(Debug, Parser)]
#[command(name = "qdm", version)]
pub struct Cli {
    /// Parameter file of `key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    pub params: Option<PathBuf>,

    /// Output directory, created if missing
    #[arg(long, global = true, value_name = "DIR", default_value = "qdm-out")]
    pub out: PathBuf,

    /// Seed for every random stream (fit multi-starts)
    #[arg(long, global = true, value_name = "N", default_value_t = 42)]
    pub seed: u64,

    /// Override one parameter; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Override the temperature, K
    #[arg(long, global = true, value_name = "K")]
    pub temperature: Option<f64>,

    /// Run data-parallel loops on one thread
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate substrate current versus pulse width
    Sweep(SweepArgs),
    /// Detect oscillation periods in windows of a trace
    Analyze(AnalyzeArgs),
    /// Fit a damped cosine to a window, or device parameters to a trace
    Fit(FitArgs),
    /// Per-pulse charge accounting from measured currents
    Account(AccountArgs),
    /// dI/dV double-peak curve, optionally Zeeman split
    Spectrum(SpectrumArgs),
    /// Regenerate the full set of reference results
    ReproducePaper(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Pulse-width grid lo:hi:step, ps
    #[arg(long, value_name = "LO:HI:STEP", default_value = "0:500:1")]
    pub dt: String,

    /// Add a dI/dΔt column (central differences)
    #[arg(long)]
    pub derivative: bool,

    /// Also write the single-electron density-matrix trajectory on the grid
    #[arg(long)]
    pub trajectory: bool,

    /// Write a gnuplot script next to each CSV
    #[arg(long)]
    pub gnuplot: bool,

    /// Output file name inside the output directory
    #[arg(long, value_name = "NAME", default_value = "sweep.csv")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace CSV as written by `sweep`
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Half-open window (lo, hi], ps; repeatable [default: 100:150, 290:340, 350:400, 400:450]
    #[arg(long = "window", value_name = "LO:HI")]
    pub windows: Vec<String>,

    /// Peak-to-median significance needed to report a period
    #[arg(long, value_name = "RATIO", default_value_t = 4.0)]
    pub threshold: f64,

    /// Write one spectrum CSV per window
    #[arg(long)]
    pub spectra: bool,

    /// Write a gnuplot script next to each CSV
    #[arg(long)]
    pub gnuplot: bool,

    /// Output file name inside the output directory
    #[arg(long, value_name = "NAME", default_value = "analysis.csv")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Cosine,
    Device,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// What to fit
    #[arg(long, value_enum, default_value = "cosine")]
    pub model: FitModel,

    /// Trace CSV as written by `sweep`
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Window for the cosine model, ps
    #[arg(long, value_name = "LO:HI", default_value = "100:150")]
    pub window: String,

    /// Comma-separated parameters to vary (device model)
    #[arg(long, value_name = "NAME,NAME", value_delimiter = ',')]
    pub free: Vec<String>,

    /// Search interval for a free parameter; repeatable (device model)
    #[arg(long = "bounds", value_name = "NAME=LO:HI")]
    pub bounds: Vec<String>,

    /// Output file name inside the output directory
    #[arg(long, value_name = "NAME", default_value = "fit.txt")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    /// Measured substrate current(s), pA, comma-separated
    #[arg(long, value_name = "PA", value_delimiter = ',', required = true)]
    pub isub: Vec<f64>,

    /// Pulse width(s), ps, one per current
    #[arg(long, value_name = "PS", value_delimiter = ',', required = true)]
    pub dt: Vec<f64>,

    /// Lower bound on the decay time, ps
    #[arg(long, value_name = "PS", default_value_t = 1e6)]
    pub tau: f64,

    /// DC current for the decay-time bound, µA
    #[arg(long, value_name = "UA")]
    pub idc: Option<f64>,

    /// Also write accounting.csv to the output directory
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Magnetic field, T
    #[arg(long, value_name = "T", default_value_t = 0.0)]
    pub b_field: f64,

    /// Zeeman g factor [default: g_factor parameter]
    #[arg(long, value_name = "G")]
    pub g_factor: Option<f64>,

    /// Lorentzian half width, meV
    #[arg(long, value_name = "MEV", default_value_t = 0.15)]
    pub width: f64,

    /// Lowest bias, V [default: 1 meV below the S peak]
    #[arg(long, value_name = "V", allow_hyphen_values = true)]
    pub v_min: Option<f64>,

    /// Highest bias, V [default: 1 meV above the AS peak]
    #[arg(long, value_name = "V", allow_hyphen_values = true)]
    pub v_max: Option<f64>,

    /// Number of bias points
    #[arg(long, value_name = "N", default_value_t = 2001)]
    pub points: usize,

    /// Write a gnuplot script next to the CSV
    #[arg(long)]
    pub gnuplot: bool,

    /// Output file name inside the output directory
    #[arg(long, value_name = "NAME", default_value = "didv.csv")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Pulse-width grid lo:hi:step, ps
    #[arg(long, value_name = "LO:HI:STEP", default_value = "0:500:1")]
    pub dt: String,

    /// Temperature of the washout run, K
    #[arg(long, value_name = "K", default_value_t = 88.0)]
    pub washout_temperature: f64,

    /// Write gnuplot scripts next to the CSVs
    #[arg(long)]
    pub gnuplot: bool,
}
