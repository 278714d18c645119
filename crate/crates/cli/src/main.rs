use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Cascaded classification with two complementary models.
#[derive(Debug, Parser)]
#[command(name = "duocascade", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pairwise complementarity of two or more models.
    Complementarity(ComplementarityArgs),
    /// Search the score function and threshold that maximize accuracy.
    Calibrate(CalibrateArgs),
    /// Run the cascade over replayed predictions and meter it.
    Run(RunArgs),
    /// Print the fingerprint of one PNM image.
    Hash(HashArgs),
    /// Energy of engines over streams with duplicated samples.
    Duplication(DuplicationArgs),
    /// Percentage reductions of a candidate run report against a baseline.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ComplementarityArgs {
    /// Prediction record files (JSON Lines); the file stem names the model.
    #[arg(required = true, num_args = 2..)]
    records: Vec<PathBuf>,
    /// Where to write the matrix CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreChoice {
    Max,
    Diff,
    Entropy,
    /// Try every score function and both model orders.
    Auto,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Records of the first model.
    #[arg(long)]
    records_a: PathBuf,
    /// Records of the second model.
    #[arg(long)]
    records_b: PathBuf,
    /// Score function, or `auto` to search all of them.
    #[arg(long, value_enum)]
    score: ScoreChoice,
    /// Always take the second model's answer after escalating.
    #[arg(long)]
    no_post_check: bool,
    /// Where to write the cascade config JSON.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the lambda,accuracy,usage curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Records of the config's first model. A file whose stem matches a
    /// model name in the config is used for that model; otherwise the order
    /// of --records-a / --records-b decides.
    #[arg(long)]
    records_a: PathBuf,
    /// Records of the config's second model; required for two-model configs.
    #[arg(long)]
    records_b: Option<PathBuf>,
    /// Directory holding `<id>.pgm` or `<id>.ppm` per sample; required when
    /// the config enables memory.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Cost profile JSON.
    #[arg(long)]
    costs: PathBuf,
    /// Score predictions against the labels in the record files.
    #[arg(long)]
    labels: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Cascade config JSON.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Where to write the run report.
    #[arg(long)]
    report: PathBuf,
    /// Report format.
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Where to write per-sample stage traces (JSON Lines).
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HashMethod {
    Dhash,
    Moments,
}

#[derive(Debug, Args)]
struct HashArgs {
    /// Fingerprint method.
    #[arg(long, value_enum)]
    method: HashMethod,
    /// Binary PGM (P5) or PPM (P6) image.
    image: PathBuf,
}

#[derive(Debug, Args)]
struct DuplicationArgs {
    /// Cascade config JSON; repeat to compare engines. The file stem names
    /// the engine in the output.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated duplication ratios in [0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<f64>,
    /// Alteration applied to duplicates: identity, rot90, rot180, mirror_h,
    /// mirror_v or random.
    #[arg(long, default_value = "identity")]
    transform: String,
    /// Seed for the random transform.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the curve CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Baseline run report (JSON).
    baseline: PathBuf,
    /// Candidate run report (JSON).
    candidate: PathBuf,
    /// Where to also write the reductions as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Complementarity(args) => commands::complementarity(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Run(args) => commands::run(args),
        Command::Hash(args) => commands::hash(args),
        Command::Duplication(args) => commands::duplication(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
