// Licensed under the Apache-2.0 license

//! `lirav`: provision simulated devices, run attestation sessions between
//! them, and drive the benchmarks and attack catalog.
//!
//! Exit codes: 0 success, 1 session aborted or a check failed, 2 usage or
//! input error, 3 transport failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Transport(_) => 3,
        }
    }
}

pub type CliResult = Result<(), CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Text,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "lirav",
    version,
    about = "Mutual remote attestation between simulated RISC-V devices"
)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a device profile and print its trust-store record.
    Provision(ProvisionArgs),
    /// Print the CRTM measurement of an image or profile.
    Measure(MeasureArgs),
    /// Accept sessions as the responder.
    Serve(ServeArgs),
    /// Dial a responder and attest mutually as the initiator.
    Attest(AttestArgs),
    /// Time the CRTM and complete protocol runs.
    Bench(BenchArgs),
    /// Run the attack catalog.
    Attack(AttackArgs),
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    /// First attested address (hex).
    #[arg(long, value_parser = parse_hex_u32)]
    pub start: Option<u32>,
    /// End of the attested range, exclusive (hex).
    #[arg(long, value_parser = parse_hex_u32)]
    pub end: Option<u32>,
    /// Block size in bytes.
    #[arg(long)]
    pub block: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ProvisionArgs {
    /// Device identifier.
    #[arg(long)]
    pub id: String,
    /// Firmware image to place at the start of flash.
    #[arg(long)]
    pub image: PathBuf,
    /// Where to write the profile. Defaults to `<id>.toml`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Identity entropy as hex, at least 32 bytes. For tests only.
    #[arg(long)]
    pub seed: Option<String>,
    #[command(flatten)]
    pub range: RangeArgs,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[command(flatten)]
    pub range: RangeArgs,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// This device's profile, as written by `provision`. Holds the signing seed.
    #[arg(long)]
    pub profile: PathBuf,
    /// Trust store listing the peers this device accepts.
    #[arg(long)]
    pub trust: PathBuf,
    /// HOST:PORT to listen on or dial.
    #[arg(long)]
    pub addr: String,
    /// Receive and connect timeout in seconds.
    #[arg(long, default_value_t = 5.0)]
    pub timeout: f64,
    /// Deterministic session randomness (hex u64). For tests only.
    #[arg(long, value_parser = parse_hex_u64)]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Exit after this many sessions.
    #[arg(long)]
    pub max_sessions: Option<usize>,
    /// Handle connections concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct AttestArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Peer to attest. May be omitted when the trust store has one peer.
    #[arg(long)]
    pub peer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchPart {
    Crtm,
    Protocol,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = lirav_core::bench::DEFAULT_ITERS)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Run only one part.
    #[arg(long, value_enum)]
    pub only: Option<BenchPart>,
    /// Restrict the CRTM grid to one block size.
    #[arg(long)]
    pub block: Option<u32>,
    /// Largest CRTM size in bytes.
    #[arg(long)]
    pub max_size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Run a single scenario by name.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// World seed (hex u64).
    #[arg(long, value_parser = parse_hex_u64)]
    pub seed: Option<u64>,
}

fn strip_0x(s: &str) -> &str {
    s.strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s)
}

fn parse_hex_u32(s: &str) -> Result<u32, String> {
    u32::from_str_radix(strip_0x(s), 16).map_err(|e| format!("{s:?} is not a hex u32: {e}"))
}

fn parse_hex_u64(s: &str) -> Result<u64, String> {
    u64::from_str_radix(strip_0x(s), 16).map_err(|e| format!("{s:?} is not a hex u64: {e}"))
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let res = match cli.command {
        Command::Provision(a) => commands::provision(a),
        Command::Measure(a) => commands::measure(a),
        Command::Serve(a) => commands::serve(a),
        Command::Attest(a) => commands::attest(a),
        Command::Bench(a) => commands::bench(a),
        Command::Attack(a) => commands::attack(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lirav: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
