//! Command-line front end: argument definitions, dispatch and the mapping
//! from errors to exit codes.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use demokit::demofile::DemoFileError;
use demokit::eval::EvalError;
use demokit::filter::FilterError;
use demokit::ingest::IngestError;
use demokit::keypose::KeyPoseError;
use demokit::model::{ModelError, PinchPolarity};
use demokit::sim::SimError;
use demokit::synth::SynthError;

pub mod commands;
pub mod config;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PROTOCOL: u8 = 4;

/// Bad or inconsistent arguments discovered after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Input that parsed but does not make sense.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataError(pub String);

/// The peer answered with a protocol-level refusal.
#[derive(Debug, thiserror::Error)]
#[error("server refused the session (code {code}): {message}")]
pub struct Refused {
    pub code: u16,
    pub message: String,
}

#[derive(Debug, Parser)]
#[command(name = "demokit", version, about = "Record, clean up and replay robot demonstrations")]
pub struct Cli {
    /// Pipeline configuration file (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice made by the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Arm description (JSON); the built-in 7-DoF arm when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub arm: Option<PathBuf>,
    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the recording server and store incoming demonstrations.
    Record(RecordArgs),
    /// Stream a demonstration file to a recording server.
    Send(SendArgs),
    /// Generate a synthetic demonstration corpus with ground truth.
    Synth(SynthArgs),
    /// Detect key poses and write the report as JSON.
    Detect(DetectArgs),
    /// Downsample a demonstration, keeping its key poses.
    Filter(FilterArgs),
    /// Replay a demonstration on the simulated arm and judge the task.
    Replay(ReplayArgs),
    /// Compare raw and filtered demonstrations over a corpus.
    Eval(EvalArgs),
    /// Write a demonstration as CSV for plotting.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskName {
    Reach,
    Push,
    PickAndPlace,
}

impl TaskName {
    pub fn tag(self) -> &'static str {
        match self {
            TaskName::Reach => "reach",
            TaskName::Push => "push",
            TaskName::PickAndPlace => "pick-and-place",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Polarity {
    SmallIsClosed,
    LargeIsClosed,
}

impl From<Polarity> for PinchPolarity {
    fn from(p: Polarity) -> Self {
        match p {
            Polarity::SmallIsClosed => PinchPolarity::SmallIsClosed,
            Polarity::LargeIsClosed => PinchPolarity::LargeIsClosed,
        }
    }
}

/// Key-pose detector overrides shared by several commands.
#[derive(Debug, Clone, Default, Args)]
pub struct DetectorArgs {
    /// Detector settings (TOML, same keys as the `[detector]` section).
    #[arg(long, value_name = "FILE")]
    pub detector_config: Option<PathBuf>,
    /// Window length in frames (odd, >= 3).
    #[arg(long)]
    pub window: Option<usize>,
    /// Turning angle above which a frame is a sharp turn, radians.
    #[arg(long, value_name = "RAD")]
    pub sharp: Option<f64>,
    /// Dense threshold as a multiple of mean frame spacing times the window.
    #[arg(long, conflicts_with = "dense_meters")]
    pub dense_factor: Option<f64>,
    /// Dense threshold in meters.
    #[arg(long, value_name = "M")]
    pub dense_meters: Option<f64>,
    /// Do not add gripper open/close transitions to the key set.
    #[arg(long)]
    pub no_gripper_events: bool,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Directory that receives the recorded files.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Listen address, e.g. 0.0.0.0:10000 (port 0 picks a free port).
    #[arg(long)]
    pub addr: Option<String>,
    /// Exit after this many sessions have finished.
    #[arg(long, value_name = "N")]
    pub sessions: Option<usize>,
    /// Largest accepted message payload, bytes.
    #[arg(long, value_name = "BYTES")]
    pub max_frame_len: Option<usize>,
    /// Pinch distance that closes the gripper in raw-hand streams, meters.
    #[arg(long, value_name = "M")]
    pub close_threshold: Option<f64>,
    /// Pinch distance that opens the gripper in raw-hand streams, meters.
    #[arg(long, value_name = "M")]
    pub open_threshold: Option<f64>,
    /// Whether a small or a large pinch distance means closed.
    #[arg(long, value_enum)]
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Args)]
pub struct SendArgs {
    /// Demonstration file to stream.
    pub demo: PathBuf,
    /// Server address.
    #[arg(long)]
    pub addr: Option<String>,
    /// Playback speed relative to the recorded frequency; 0 sends unpaced.
    #[arg(long, default_value_t = 0.0)]
    pub rate: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Task to demonstrate.
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    /// Number of demonstrations.
    #[arg(long, short = 'n')]
    pub count: Option<usize>,
    /// Output directory for the files and manifest.json.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Tremor standard deviation per axis, meters (0 for clean motion).
    #[arg(long, value_name = "M")]
    pub tremor: Option<f64>,
    /// Stationary frames at each intermediate target.
    #[arg(long, value_name = "FRAMES")]
    pub dwell: Option<usize>,
    /// Sample rate, Hz.
    #[arg(long)]
    pub hz: Option<f64>,
    /// Mean hand speed, m/s.
    #[arg(long, value_name = "M_PER_S")]
    pub speed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Demonstration file.
    pub demo: PathBuf,
    /// Report destination; standard output when omitted.
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Demonstration file.
    pub demo: PathBuf,
    /// Destination for the filtered demonstration.
    #[arg(long, short, value_name = "FILE")]
    pub out: PathBuf,
    /// Key-pose report from `detect`; detection runs here when omitted.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Keep every K-th frame.
    #[arg(long, short)]
    pub k: Option<usize>,
    /// Always keep the last frame.
    #[arg(long, value_name = "BOOL")]
    pub keep_endpoints: Option<bool>,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Demonstration file.
    pub demo: PathBuf,
    /// Task to judge; taken from the file's task tag when omitted.
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    /// Write the simulated trajectory as CSV.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus manifest written by `synth`.
    pub manifest: Option<PathBuf>,
    /// Per-demonstration metrics as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Keep every K-th frame.
    #[arg(long, short)]
    pub k: Option<usize>,
    /// Treat no frame as key, not even gripper transitions.
    #[arg(long)]
    pub disable_detector: bool,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Demonstration file.
    pub demo: PathBuf,
    /// Key-pose report; detection runs here when omitted.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// CSV destination; standard output when omitted.
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

fn code_of(e: &(dyn std::error::Error + 'static)) -> Option<u8> {
    if e.is::<UsageError>() {
        return Some(EXIT_USAGE);
    }
    if e.is::<DataError>() {
        return Some(EXIT_DATA);
    }
    if e.is::<Refused>() {
        return Some(EXIT_PROTOCOL);
    }
    if e.is::<std::io::Error>() {
        return Some(EXIT_IO);
    }
    if e.is::<KeyPoseError>() || e.is::<FilterError>() || e.is::<SimError>() || e.is::<ModelError>() {
        return Some(EXIT_DATA);
    }
    if let Some(e) = e.downcast_ref::<DemoFileError>() {
        return Some(match e {
            DemoFileError::Io { .. } => EXIT_IO,
            _ => EXIT_DATA,
        });
    }
    if let Some(e) = e.downcast_ref::<SynthError>() {
        return match e {
            SynthError::Io { .. } => Some(EXIT_IO),
            SynthError::File(inner) => code_of(inner),
            _ => Some(EXIT_DATA),
        };
    }
    if let Some(e) = e.downcast_ref::<EvalError>() {
        return match e {
            EvalError::Missing(_) => Some(EXIT_IO),
            EvalError::File(inner) => code_of(inner),
            _ => Some(EXIT_DATA),
        };
    }
    if let Some(e) = e.downcast_ref::<IngestError>() {
        return match e {
            IngestError::Wire(_) | IngestError::UnexpectedReply(_) => Some(EXIT_PROTOCOL),
            IngestError::InvalidConfig(_) => Some(EXIT_DATA),
            IngestError::File(inner) => code_of(inner),
            _ => Some(EXIT_IO),
        };
    }
    None
}

/// Exit code for a failed command: the first recognized error in the chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(code_of).unwrap_or(EXIT_DATA)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match commands::run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) if is_broken_pipe(&e) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|e| e.downcast_ref::<std::io::Error>())
        .any(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

/// The error chain joined with `: `, skipping causes the outer messages
/// already spell out.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for e in err.chain() {
        let msg = e.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}
