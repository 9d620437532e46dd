use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hammerpuf::pattern::RhType;

mod commands;
mod config;

use config::{parse_iv_flag, parse_rh_type, parse_size};

/// Rowhammer PUF simulator.
#[derive(Debug, Parser)]
#[command(name = "hammerpuf", version)]
struct Cli {
    /// Workspace root (default: $HAMMERPUF_WORKSPACE, else the current directory).
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,

    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulated devices.
    #[command(subcommand)]
    Device(DeviceCommand),
    /// PUF queries.
    #[command(subcommand)]
    Puf(PufCommand),
    /// Jaccard and entropy metrics over measurement files.
    Metrics(MetricsArgs),
    /// Fuzzy extractor.
    #[command(subcommand)]
    Fe(FeCommand),
    /// Evaluation sweeps and calibration.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Subcommand)]
enum DeviceCommand {
    /// Write a device descriptor and print its id.
    Gen(DeviceGenArgs),
}

#[derive(Debug, Args)]
struct DeviceGenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    banks: Option<u32>,
    #[arg(long)]
    rows_per_bank: Option<u32>,
    #[arg(long, value_parser = parse_size)]
    row_size: Option<u64>,
    /// Calibration file with model parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum PufCommand {
    /// Run one query and write the measurement.
    Query(QueryArgs),
}

#[derive(Debug, Args, Clone)]
struct QueryFlagArgs {
    #[arg(long, value_parser = parse_rh_type)]
    rh_type: Option<RhType>,
    #[arg(long)]
    puf_address: Option<u32>,
    #[arg(long, value_parser = parse_size)]
    puf_size: Option<u64>,
    /// Byte literal such as 0x55.
    #[arg(long, value_parser = parse_iv_flag)]
    hammer_iv: Option<u8>,
    /// Byte literal such as 0xAA.
    #[arg(long, value_parser = parse_iv_flag)]
    puf_iv: Option<u8>,
    /// Seconds.
    #[arg(long)]
    rh_time: Option<f64>,
    /// Degrees Celsius.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    device: PathBuf,
    #[command(flatten)]
    query: QueryFlagArgs,
    #[arg(long, default_value_t = 0)]
    measurement_seed: u64,
    /// Disable refresh without hammering.
    #[arg(long)]
    decay_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricsMode {
    Intra,
    Inter,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long, value_enum)]
    mode: MetricsMode,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Key size for the key-material estimate in entropy mode.
    #[arg(long, default_value_t = 128)]
    key_bits: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(required = true)]
    measurements: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum FeCommand {
    /// Derive a key and helper data from enrollment measurements.
    Enroll(EnrollArgs),
    /// Recover the key from fresh measurements; exit code 1 on mismatch.
    Reconstruct(ReconstructArgs),
}

#[derive(Debug, Args)]
struct FeFlagArgs {
    #[arg(long)]
    key_bits: Option<u32>,
    #[arg(long)]
    repetition: Option<u32>,
    #[arg(long)]
    enroll_count: Option<u32>,
    #[arg(long)]
    fe_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EnrollArgs {
    #[command(flatten)]
    fe: FeFlagArgs,
    /// Seed of the key generator.
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the key as hex to this file.
    #[arg(long)]
    key_out: Option<PathBuf>,
    /// Print the key.
    #[arg(long)]
    reveal_key: bool,
    #[arg(long)]
    force: bool,
    #[arg(required = true)]
    measurements: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    helper: PathBuf,
    #[arg(long)]
    key_out: Option<PathBuf>,
    #[arg(long)]
    reveal_key: bool,
    #[arg(long)]
    force: bool,
    #[arg(required = true)]
    measurements: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentName {
    IvMatrix,
    Temperature,
    RhType,
    Decay,
    Uniqueness,
    Calibrate,
    /// Every experiment except calibrate.
    All,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    name: ExperimentName,
    /// Shrinks PUF sizes (not below 4 KB) and repetitions, in (0, 1].
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    targets: Option<PathBuf>,
    #[command(flatten)]
    query: QueryFlagArgs,
    /// Also render SVG histograms.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    /// Exit with code 1 when a target fails.
    #[arg(long)]
    strict: bool,
    /// Calibration: maximum suite evaluations.
    #[arg(long, default_value_t = 40)]
    budget: usize,
    /// Calibration: comma-separated model parameters to fit (default: all).
    #[arg(long, value_delimiter = ',')]
    knobs: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
