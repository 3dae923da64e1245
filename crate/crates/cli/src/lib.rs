//! The `mprof` command line.
//!
//! Every subcommand accepts `--config file.json`; the file holds the same
//! settings as the flags (snake_case keys) and flags win over it.

pub mod bench;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use bench::{bench_strip, BenchReport};
pub use config::UsageError;

#[derive(Debug, Parser)]
#[command(name = "mprof", version, about = "Motion profiles and maneuver detection over them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream a video's frames through a pixel belt into a motion profile.
    BuildProfile(BuildProfileArgs),
    /// Render a synthetic dataset with ground truth and a 60/20/20 split.
    Synth(SynthArgs),
    /// Train the detector on a synthetic dataset.
    Train(TrainArgs),
    /// Run the neural or the classic detector over profiles.
    Detect(DetectArgs),
    /// Score detections against ground-truth events.
    Eval(EvalArgs),
    /// Time strip extraction against the 60 fps frame budget.
    Bench(BenchArgs),
}

// Boolean flags take an optional value: `--flag` alone means true and
// `--flag false` overrides a config file that set it.

#[derive(Debug, clap::Args, Serialize)]
pub struct BuildProfileArgs {
    /// JSON settings file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Video manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Belt below the horizon: `lo:hi` in rows, or far, medium, close [default: medium].
    #[arg(long)]
    pub belt: Option<String>,
    /// Profile channels, 1 (luma) or 3 [default: 1].
    #[arg(long)]
    pub channels: Option<usize>,
    /// Output raster; the sidecar goes next to it as `<stem>.meta.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SynthArgs {
    /// JSON settings file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Number of samples [default: 100].
    #[arg(long)]
    pub count: Option<usize>,
    /// Dataset seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Profile width in columns [default: 256].
    #[arg(long)]
    pub width: Option<usize>,
    /// Profile height in rows [default: 256].
    #[arg(long)]
    pub height: Option<usize>,
    /// Gaussian noise sigma in 8-bit units [default: 6].
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Most maneuvers per sample [default: 2].
    #[arg(long)]
    pub max_maneuvers: Option<usize>,
    /// Relative class weights LR,LL,OR,OL [default: 1,1,1,1].
    #[arg(long, value_delimiter = ',')]
    pub class_mix: Option<Vec<f64>>,
    /// Overtakes only on a flat background, with the right-side pattern a
    /// translate of the left one, so only position tells the classes apart.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub position_critical: Option<bool>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainArgs {
    /// JSON settings file; flags override its keys. It may also carry a
    /// full `detector` architecture object.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss log CSV [default: <out>.loss.csv].
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    /// Start from this checkpoint. A plain-conv checkpoint is inflated when
    /// CoordConv is on.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Epochs [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size [default: 8].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 weight decay on kernels [default: 0.001].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Initialisation, shuffling and augmentation seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// CoordConv backbone [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub coordconv: Option<bool>,
    /// Random left-right flips with class swap [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub mirror_augment: Option<bool>,
    /// Random time shifts of up to a quarter window [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shift_augment: Option<bool>,
    /// Skip the objectness loss of unassigned slots whose box overlaps a
    /// ground-truth box by more than this IoU [default: off].
    #[arg(long)]
    pub ignore_iou: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Neural,
    Classic,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct DetectArgs {
    /// JSON settings file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Detector [default: neural].
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Checkpoint for the neural detector.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON file of classic detector parameters [default: built-in].
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Dataset directory; every profile of `--split` is processed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split of `--data`: train, val or test [default: test].
    #[arg(long)]
    pub split: Option<String>,
    /// A profile file; repeatable.
    #[arg(long = "profile")]
    pub profiles: Option<Vec<PathBuf>>,
    /// Detections JSONL [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Confidence threshold, neural only [default: 0.2].
    #[arg(long)]
    pub conf: Option<f64>,
    /// NMS IoU threshold, neural only [default: 0.5].
    #[arg(long)]
    pub nms: Option<f64>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct EvalArgs {
    /// JSON settings file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Detections JSONL.
    #[arg(long)]
    pub dets: Option<PathBuf>,
    /// Ground-truth events JSONL.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// IoU needed for a match [default: 0.3].
    #[arg(long)]
    pub iou: Option<f64>,
    /// Confidence threshold for precision, recall and F1 [default: 0.2].
    #[arg(long)]
    pub conf: Option<f64>,
    /// JSON report [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a per-class CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Only score these classes, e.g. `OL,OR` [default: all].
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Dataset label copied into the report.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct BenchArgs {
    /// JSON settings file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Frame width [default: 1280].
    #[arg(long)]
    pub width: Option<usize>,
    /// Belt height in rows [default: 65].
    #[arg(long)]
    pub belt_height: Option<usize>,
    /// Timed strips, at least 100 [default: 1000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Untimed strips first [default: 50].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Seed for the random frames [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Parse `args` (program name first) and run. Returns the exit code:
/// 0 on success, 2 for usage errors, 1 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let msg = e.kind().as_str().unwrap_or("invalid arguments").to_string();
            eprintln!("{}", error_line("usage", &msg));
            return 2;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            eprintln!("{}", error_line(if usage { "usage" } else { "runtime" }, &format!("{e:#}")));
            if usage {
                2
            } else {
                1
            }
        }
    }
}
