use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::quantity::{
    db_grid, db_hz, decibels, density_dbm_hz, duration_s, frequency_grid, frequency_hz, power_dbm, DbGrid,
    FrequencyGrid,
};
use crate::report::Format;

/// GPS L1 C/A interference analysis, limit levels and compliance checks.
///
/// Powers take explicit units (`-60dBm`, `1nW`), frequencies take Hz, kHz
/// or MHz, times take s, ms or us. Receiver powers and noise levels are at
/// the antenna unless `--input-plane correlator` says otherwise.
#[derive(Debug, Parser)]
#[command(name = "l1emc", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,

    /// Root seed for tone phases, random phasing and the oracle.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,

    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict C/N0 under a noise spectrum, with a per-band breakdown.
    Analyze(AnalyzeArgs),
    /// Build narrowband, mesoband and broadband limit curves.
    Limit(LimitArgs),
    /// Check a spectrum against the threshold or a limit table.
    /// Exits 1 when the spectrum fails.
    Check(CheckArgs),
    /// Run the time-domain correlator on a noise spectrum.
    Simulate(SimulateArgs),
    /// Step the noise power and report analytic and simulated C/N0.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ReceiverArgs {
    /// TOML file with `[receiver]` and `[simulation]` tables; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Satellite signal power at the antenna.
    #[arg(long, value_name = "POWER", value_parser = power_dbm, allow_hyphen_values = true)]
    pub signal_power: Option<f64>,

    /// Thermal noise density at the antenna.
    #[arg(long, value_name = "DENSITY", value_parser = density_dbm_hz, allow_hyphen_values = true)]
    pub noise_density: Option<f64>,

    /// Gain from the antenna to the correlator input.
    #[arg(long, value_name = "DB", value_parser = decibels, allow_hyphen_values = true)]
    pub gain: Option<f64>,

    /// Coherent integration time; the output period follows it.
    #[arg(long, value_name = "TIME", value_parser = duration_s)]
    pub integration_time: Option<f64>,

    /// Residual Doppler between signal and replica.
    #[arg(long, value_name = "FREQ", value_parser = frequency_hz, allow_hyphen_values = true)]
    pub doppler: Option<f64>,

    /// Lowest acceptable C/N0 in dB-Hz.
    #[arg(long, value_name = "DBHZ", value_parser = db_hz)]
    pub threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Plane {
    Antenna,
    Correlator,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["cwi", "mesoband", "rect", "capture"])))]
pub struct NoiseArgs {
    /// A single continuous-wave tone.
    #[arg(long)]
    pub cwi: bool,

    /// Band of equal-power tones with this bandwidth.
    #[arg(long, value_name = "BW", value_parser = frequency_hz)]
    pub mesoband: Option<f64>,

    /// Flat noise with this bandwidth.
    #[arg(long, value_name = "BW", value_parser = frequency_hz)]
    pub rect: Option<f64>,

    /// Spectrum-analyzer capture file.
    #[arg(long, value_name = "FILE")]
    pub capture: Option<PathBuf>,

    /// Center offset from the carrier.
    #[arg(long, visible_alias = "offset", value_name = "FREQ", value_parser = frequency_hz,
          allow_hyphen_values = true, default_value = "0")]
    pub center: f64,

    /// Total noise power.
    #[arg(long, value_name = "POWER", value_parser = power_dbm, allow_hyphen_values = true,
          conflicts_with = "psd")]
    pub power: Option<f64>,

    /// Noise density, for --mesoband and --rect.
    #[arg(long, value_name = "DENSITY", value_parser = density_dbm_hz, allow_hyphen_values = true)]
    pub psd: Option<f64>,

    /// Tone phase in radians, for --cwi.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub phase: f64,

    /// Number of tones for --mesoband; one per 1/Td by default.
    #[arg(long)]
    pub tones: Option<usize>,

    /// Tone spacing for --rect; 1/Td by default.
    #[arg(long, value_name = "FREQ", value_parser = frequency_hz)]
    pub spacing: Option<f64>,

    /// Give synthesized tones zero phase instead of seeded random phases.
    #[arg(long)]
    pub zero_phases: bool,

    /// Level change applied to the noise, e.g. -10 for 10 dB of attenuation.
    #[arg(long, value_name = "DB", value_parser = decibels, allow_hyphen_values = true, default_value = "0")]
    pub atten: f64,

    /// Where the noise levels are referred.
    #[arg(long, value_enum, default_value_t = Plane::Antenna)]
    pub input_plane: Plane,

    /// Carrier frequency of the capture.
    #[arg(long, value_name = "FREQ", value_parser = frequency_hz)]
    pub carrier: Option<f64>,

    /// Extra correction added to every capture level; repeatable.
    #[arg(long = "correction", value_name = "DB", value_parser = decibels, allow_hyphen_values = true)]
    pub corrections: Vec<f64>,

    /// Drop capture tones this far below the strongest one.
    #[arg(long, value_name = "DB", value_parser = decibels, conflicts_with = "no_floor")]
    pub floor: Option<f64>,

    /// Keep every capture tone.
    #[arg(long)]
    pub no_floor: bool,

    /// Half width of the band kept around the carrier.
    #[arg(long, value_name = "FREQ", value_parser = frequency_hz)]
    pub half_band: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhasingArg {
    /// Use the tone phases as they are.
    Given,
    /// Closed-form average over random phases.
    Expected,
    /// Average over seeded random phase draws.
    Random,
}

#[derive(Debug, Args)]
pub struct CouplingArgs {
    /// Couple through this satellite's exact code lines instead of the
    /// averaged envelope.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=32))]
    pub prn: Option<u8>,

    #[arg(long, value_enum, default_value_t = PhasingArg::Random)]
    pub phasing: PhasingArg,

    /// Draws for --phasing random.
    #[arg(long, default_value_t = 1000)]
    pub realizations: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub coupling: CouplingArgs,
    #[command(flatten)]
    pub rx: ReceiverArgs,

    /// Also write the analyzed spectrum as a capture file.
    #[arg(long, value_name = "FILE")]
    pub export_capture: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    #[command(flatten)]
    pub rx: ReceiverArgs,

    /// Bandwidth of the characterized mesoband at the carrier.
    #[arg(long, value_name = "BW", value_parser = frequency_hz, default_value = "20kHz")]
    pub baseline_bw: f64,

    /// Tones in the characterized mesoband; one per 1/Td by default.
    #[arg(long)]
    pub baseline_tones: Option<usize>,

    /// Mesoband curve bandwidths, as a list or start:stop:step.
    #[arg(long, value_name = "LIST", value_parser = frequency_grid, default_value = "20kHz,40kHz,80kHz")]
    pub bandwidths: FrequencyGrid,

    /// Curve offsets, as a list or start:stop:step.
    #[arg(long, value_name = "LIST", value_parser = frequency_grid, allow_hyphen_values = true,
          default_value = "-2MHz:2MHz:10kHz")]
    pub offsets: FrequencyGrid,

    /// C/N0 at which the broadband curve is anchored.
    #[arg(long, value_name = "DBHZ", value_parser = db_hz, default_value = "25")]
    pub loss_of_lock: f64,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub rx: ReceiverArgs,

    /// Limit table from `l1emc limit --format csv`; without it the
    /// spectrum is checked directly against the threshold.
    #[arg(long, value_name = "FILE")]
    pub limits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Satellite whose code is simulated.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=32))]
    pub prn: u8,

    #[arg(long, value_name = "FREQ", value_parser = frequency_hz)]
    pub sample_rate: Option<f64>,

    /// Number of integration windows.
    #[arg(long)]
    pub windows: Option<usize>,

    /// Replica delay in samples; zero is aligned.
    #[arg(long, allow_hyphen_values = true)]
    pub code_phase: Option<i64>,

    /// Leave out thermal noise.
    #[arg(long)]
    pub no_thermal: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub rx: ReceiverArgs,
    #[command(flatten)]
    pub sim: SimArgs,

    /// Write the synthesized input samples to this file.
    #[arg(long, value_name = "FILE")]
    pub dump: Option<PathBuf>,

    /// Windows written by --dump.
    #[arg(long, default_value_t = 1)]
    pub dump_windows: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Analytic,
    Oracle,
    Both,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub rx: ReceiverArgs,
    #[command(flatten)]
    pub sim: SimArgs,

    /// Power steps applied to the noise, as a list or start:stop:step.
    #[arg(long, value_name = "LIST", value_parser = db_grid, allow_hyphen_values = true, default_value = "-20:10:2")]
    pub levels: DbGrid,

    #[arg(long, value_enum, default_value_t = SweepMode::Both)]
    pub mode: SweepMode,

    /// Worker threads for oracle points; all cores by default.
    #[arg(long)]
    pub jobs: Option<usize>,
}
