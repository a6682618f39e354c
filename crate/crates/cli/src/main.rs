//! `protoscore`: score prototype sets, run outlier studies, generate data.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime, 3 adapter / protocol.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "protoscore", version, about = "Explanation-quality scores for prototype models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score a prototype set against a model and dataset.
    Score(ScoreArgs),
    /// Consistency of the base prototypes against rerun models.
    Consistency(ConsistencyArgs),
    /// Paired clean / outlier runs with a per-metric delta table.
    OutlierStudy(OutlierArgs),
    /// Write the two-class sawtooth / sine time-series dataset.
    GenSawsine(SawsineArgs),
    /// Write planted latent blobs, prototypes at the blob centers, and inputs
    /// decoded through the toy adapter's projection.
    GenPlanted(PlantedArgs),
    /// Run a scoring pass against a live adapter and save the transcript.
    RecordReplay(RecordArgs),
}

#[derive(Args, Debug, Clone)]
struct AdapterArgs {
    /// Adapter command line, e.g. "python my_adapter.py --ckpt m.pt".
    #[arg(long, value_name = "CMD", required_unless_present = "replay", conflicts_with = "replay")]
    adapter_cmd: Option<String>,
    /// Recorded transcript to answer requests from.
    #[arg(long, value_name = "FILE")]
    replay: Option<PathBuf>,
    /// Send every request twice and require identical answers.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_name = "SECS", default_value_t = 120)]
    timeout_secs: u64,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long, value_name = "MANIFEST")]
    dataset: PathBuf,
    #[arg(long, value_name = "MANIFEST")]
    prototypes: PathBuf,
    #[command(flatten)]
    adapter: AdapterArgs,
    /// JSON run config; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Force the sequential code path.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory for report.json and report.md.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Row label in the score table.
    #[arg(long)]
    label: Option<String>,
    /// Validation loss to show next to the scores.
    #[arg(long, value_name = "MSE")]
    val_loss: Option<f64>,
    /// Add per-stage wall-clock seconds to the report.
    #[arg(long)]
    timings: bool,
}

#[derive(Args, Debug)]
struct ConsistencyArgs {
    #[arg(long, value_name = "MANIFEST")]
    prototypes: PathBuf,
    #[command(flatten)]
    adapter: AdapterArgs,
    /// Run config with a `consistency.reruns` list.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Accepted for uniformity; consistency draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

#[derive(Args, Debug)]
struct OutlierArgs {
    #[command(flatten)]
    run: RunArgs,
    /// JSON outlier config (fraction, magnitude_fraction).
    #[arg(long, value_name = "FILE")]
    outlier_config: Option<PathBuf>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    magnitude_fraction: Option<f64>,
    /// Directory for clean.json, mixed.json and study.md.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

#[derive(Args, Debug)]
struct SawsineArgs {
    /// Manifest path to write.
    #[arg(long, value_name = "MANIFEST")]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 8000)]
    num_samples: usize,
    #[arg(long, default_value_t = 100)]
    series_length: usize,
    #[arg(long, default_value_t = 1.1)]
    noise_amp_max: f64,
    /// Store values as f32 on disk.
    #[arg(long)]
    f32: bool,
}

#[derive(Args, Debug)]
struct PlantedArgs {
    /// Directory for dataset.json, latent.json and prototypes.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    num_classes: usize,
    #[arg(long, default_value_t = 2)]
    clusters_per_class: usize,
    #[arg(long, default_value_t = 100)]
    points_per_cluster: usize,
    #[arg(long, default_value_t = 0.05)]
    cluster_sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    #[arg(long, default_value_t = 2)]
    latent_dim: usize,
    /// Input width of the toy model that decodes the latents.
    #[arg(long, default_value_t = 8)]
    input_dim: usize,
}

#[derive(Args, Debug)]
struct RecordArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Transcript file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
