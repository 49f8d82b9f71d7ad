//! Command-line front end: sweeps, closed-form reports and the asymptotic
//! efficiency curve, all emitted as CSV.

pub mod commands;
pub mod config;
pub mod format;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use coopmud::mud::DetectorKind;

pub use commands::{run, CliError};

#[derive(Debug, Parser)]
#[command(name = "coopmud", version, about = "Cooperative CDMA multiuser-detection simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo sweep over relay position, transmit power or user count.
    Sweep(SweepArgs),
    /// Closed-form error rates, bounds and figures of merit.
    Analyze(AnalyzeArgs),
    /// Asymptotic multiuser efficiency of user 1 versus relay amplitude.
    Efficiency(EfficiencyArgs),
}

const SWEEP_HELP: &str = "\
CONFIG FILE (TOML)
  variable  = \"relay_position\" | \"transmit_power\" | \"num_users\"
  grid      = [0.5, 1.0, ...]        swept values (power in dB)
  protocols = [\"no_relay\", \"relay_user:1\", \"xor:1+2\", \"mimo_bound\", ...]
  trials    = 100000                 per grid point, at least 100
  seed      = 0                      optional; --seed overrides
  per_user  = false                  optional; also emit per-user rows

  [scenario]
  user_positions    = [4.0, 6.0]     distances from the base station
  relay_positions   = [1.6]
  transmit_power_db = 32.5
  sigma             = 1.0
  pathloss_exponent = 3.0            optional
  spreading_gain    = 16             optional; random signatures per trial
  correlation       = 0.2            optional; fixed pairwise correlation instead
  detector          = \"sc\"           optional; mf, sc or ml
  duplex            = \"full\"         optional; full or half
  user_range        = [4.0, 8.0]     required for num_users sweeps

Protocol labels use 1-based node numbers: sources first, then relays.
Other labels: relay_strongest, relay_weakest, relay_optimized,
xor_nearest_two, xor_optimized; append @N to pick relay N or @opt.

CSV columns: sweep_var,value,protocol,user,ber_mean,ci95_low,ci95_high,trials
With --output, <output>.manifest records the resolved config and can be
passed back with --config to reproduce the CSV.";

#[derive(Debug, Args)]
#[command(after_long_help = SWEEP_HELP)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["preset", "config"]))]
pub struct SweepArgs {
    /// Built-in experiment: fig3, fig4, fig5 or fig6.
    #[arg(long)]
    pub preset: Option<String>,
    /// Sweep configuration file (see --help).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed [default: 0, or the config's seed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trials per grid point, overriding the preset or config.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Output CSV path; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Detector at relays and base station: mf, sc or ml [default: sc].
    #[arg(long)]
    pub detector: Option<DetectorKind>,
    /// Also write one row per user.
    #[arg(long)]
    pub per_user: bool,
}

const ANALYZE_HELP: &str = "\
CONFIG FILE (TOML)
  sigma          = 0.5
  spreading_gain = 16               optional
  amplitudes     = [2.0, 1.0]       per user, at the base station
  correlation    = 0.3              optional; enables the union bounds
  correlation_rows = [[1.0, 0.3], [0.3, 1.0]]   optional; full matrix

  [relay_single]         p_direct, p_source_relay, p_relay_base
  [relay_coded]          target, members (1-based), p_direct = [...],
                         p_relay_in = [...], p_relay_out
  [coding_gain]          p_top_old, p_top_new
  [mimo_bound]           p_direct, p_relay_links = [...]
  [spectral_efficiency]  users, relays

Output: quantity,user,value; sections print only when configured.";

#[derive(Debug, Args)]
#[command(after_long_help = ANALYZE_HELP)]
pub struct AnalyzeArgs {
    /// Analysis configuration file (see --help).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EfficiencyArgs {
    #[arg(long, default_value_t = 1.0)]
    pub a1: f64,
    #[arg(long)]
    pub a2: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: f64,
    /// Relay amplitudes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub ar: Vec<f64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}
