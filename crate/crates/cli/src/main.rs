//! `passt`: synthetic tasks, toy training, embedding extraction, probes,
//! score reports and the throughput bench. Every subcommand prints JSON.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use passt::dsp::HopPreset;
use passt::embed::{LevelSpec, RFSpec};
use passt::synth::SynthKind;

#[derive(Parser, Debug)]
#[command(name = "passt", version, about = "Patchout spectrogram transformer tools")]
pub struct Cli {
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with its manifest.
    Synth(SynthArgs),
    /// Write a freshly initialized checkpoint.
    Init(InitArgs),
    /// Train a toy model on a scene task.
    TrainToy(TrainArgs),
    /// One embedding per clip (10 s windows, averaged).
    ExtractScene(SceneArgs),
    /// One embedding every hop around each timestamp.
    ExtractTimestamp(TimestampArgs),
    /// Train a probe on frozen embeddings and score the test split.
    Probe(ProbeArgs),
    /// Normalize raw scores by reference maxima and aggregate per category.
    Report(ReportArgs),
    /// Sequence accounting and train-step throughput across hop presets.
    Bench(BenchArgs),
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<[T; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b] = parts.as_slice() else {
        return Err(format!("expected two comma-separated values, got {s:?}"));
    };
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse {v:?}"));
    Ok([p(a)?, p(b)?])
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    match s {
        "pitch-class" | "pitch" => Ok(SynthKind::PitchClass),
        "event-detect" | "events" => Ok(SynthKind::EventDetect),
        other => Err(format!("unknown task kind {other:?}; use pitch-class or event-detect")),
    }
}

fn parse_preset(s: &str) -> Result<HopPreset, String> {
    s.parse().map_err(|e: passt::Error| e.to_string())
}

fn parse_levels(s: &str) -> Result<LevelSpec, String> {
    s.parse().map_err(|e: passt::Error| e.to_string())
}

fn parse_rf(s: &str) -> Result<RFSpec, String> {
    s.parse().map_err(|e: passt::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_kind, default_value = "pitch-class")]
    pub kind: SynthKind,
    /// Dataset root to create.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n_clips: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long)]
    pub clip_s: Option<f64>,
    /// SNR range in dB, e.g. `10,30`.
    #[arg(long, value_parser = parse_pair::<f64>)]
    pub snr_db: Option<[f64; 2]>,
    /// Events per clip, e.g. `1,3`.
    #[arg(long, value_parser = parse_pair::<usize>)]
    pub events: Option<[usize; 2]>,
    #[arg(long)]
    pub harmonics: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Full SynthSpec as JSON; overrides the other generation flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelSize {
    Toy,
    Base,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[arg(long, value_enum, default_value = "toy")]
    pub model: ModelSize,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, value_parser = parse_preset, default_value = "hop10ms")]
    pub hop_preset: HopPreset,
    #[arg(long, default_value_t = 10.0)]
    pub max_clip_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Continue from this checkpoint instead of a fresh toy model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset, default_value = "hop10ms")]
    pub hop_preset: HopPreset,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// `F,T` structured, `u:N` unstructured, or `none`.
    #[arg(long, default_value = "2,2")]
    pub patchout: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ExtractCommon {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A WAV file, or a dataset root (every clip of the manifest).
    #[arg(long)]
    pub input: PathBuf,
    /// Embedding file for a WAV input, directory for a dataset input.
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, value_parser = parse_levels, default_value = "M")]
    pub levels: LevelSpec,
    /// Must match the checkpoint's preset when given.
    #[arg(long, value_parser = parse_preset)]
    pub hop_preset: Option<HopPreset>,
}

#[derive(Args, Debug)]
pub struct SceneArgs {
    #[command(flatten)]
    pub common: ExtractCommon,
    #[arg(long, default_value_t = 10.0)]
    pub window_s: f64,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
}

#[derive(Args, Debug)]
pub struct TimestampArgs {
    #[command(flatten)]
    pub common: ExtractCommon,
    /// `160`, `640` or `2rf`.
    #[arg(long, value_parser = parse_rf, default_value = "160")]
    pub rf: RFSpec,
    #[arg(long, default_value_t = 50)]
    pub hop_ms: u32,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// ProbeConfig as JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hidden widths, comma-separated; empty for a linear probe.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// JSON: raw scores or probe results, one object or an array.
    #[arg(long)]
    pub scores: PathBuf,
    /// JSON object mapping task name to its reference maximum.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub tasks_csv: Option<PathBuf>,
    #[arg(long)]
    pub categories_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Report the exact accounting only.
    #[arg(long)]
    pub no_measure: bool,
    /// Comma-separated presets.
    #[arg(long, default_value = "hop10ms,hop5ms,hop3ms")]
    pub presets: String,
    #[arg(long, default_value_t = 10.0)]
    pub clip_s: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let report = serde_json::json!({ "error": "usage", "message": e.render().to_string() });
            eprintln!("{report}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("error report serializes"));
            ExitCode::from(1)
        }
    }
}
