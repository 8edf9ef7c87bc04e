//! `cltm`: command-line pipeline for cross-lingual transfer matrices.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "cltm", version, about = "Cross-lingual transfer matrix toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a record file and write it back in canonical form.
    Ingest(IngestArgs),
    /// Check training metadata against the data-balancing constraints.
    ValidateBalance(BalanceArgs),
    /// Detect the dynamic training interval of each language's learning curve.
    Interval(IntervalArgs),
    /// Aggregate records into the transfer matrix.
    Compute(ComputeArgs),
    /// Summary statistics of a transfer matrix.
    Diagnose(DiagnoseArgs),
    /// Seed-level standard errors and self-gain summary.
    Stability(StabilityArgs),
    /// Build gender-controlled speaker-verification trials.
    Trials(TrialsArgs),
    /// Cosine-score trials from embeddings and report the AUC.
    Score(ScoreArgs),
    /// Euclidean distances between per-language embedding centroids.
    Centroids(CentroidArgs),
    /// Render a transfer matrix as an SVG heatmap.
    Heatmap(HeatmapArgs),
    /// Generate a synthetic experiment with a known transfer matrix.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Record file (.csv, or .jsonl/.ndjson/.json for JSON lines).
    #[arg(long)]
    records: PathBuf,
    /// Output file; the extension picks the format. Defaults to stdout in the input format.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BalanceArgs {
    /// CSV with `language,speaker_id[,label]` rows for the training side.
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IntervalArgs {
    /// Base-condition records at four or more sample counts per language.
    #[arg(long)]
    records: PathBuf,
    /// Fraction of the peak log-derivative that bounds the region.
    #[arg(long, default_value_t = cltm_core::curves::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    records: PathBuf,
    /// Language list: CSV with a `code,family` header (family optional).
    #[arg(long)]
    langs: PathBuf,
    /// Base training size N; augmented conditions must report 2N.
    #[arg(long = "n")]
    n_samples: u64,
}

#[derive(Args, Debug)]
struct ComputeArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Fail on any language whose self-gain is not positive instead of marking the row invalid.
    #[arg(long)]
    strict: bool,
    /// Matrix output; `.csv` writes CSV, anything else JSON. Defaults to JSON on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write self and cross gains as JSON.
    #[arg(long)]
    gains: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReciprocityArg {
    /// Mirror-positive share of the positive entries.
    Positive,
    /// Mutually positive entries over all off-diagonal entries.
    AllPairs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Matrix file written by `compute` (.json or .csv).
    #[arg(long)]
    matrix: PathBuf,
    /// Language families as `code,family` CSV; enables intra-family+.
    #[arg(long)]
    families: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReciprocityArg::Positive)]
    reciprocity: ReciprocityArg,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrialsArgs {
    /// Utterance JSON lines with `id`, `speaker_id`, `gender`, `language`.
    #[arg(long)]
    utterances: PathBuf,
    /// Keep at most this many trials of each label.
    #[arg(long)]
    max_per_class: Option<usize>,
    /// Seed for subsampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Embedding JSON lines (`vector`, `vectors` or `layers`).
    #[arg(long)]
    embeddings: PathBuf,
    /// Trial CSV written by `trials`.
    #[arg(long)]
    trials: PathBuf,
    /// Number of final layers averaged when `layers` are given.
    #[arg(long, default_value_t = 1)]
    last_k: usize,
    /// Per-trial scores as CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Summary JSON (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CentroidArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 1)]
    last_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = -1.5, allow_negative_numbers = true)]
    scale_min: f64,
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    scale_max: f64,
    #[arg(long, default_value = "#2166AC")]
    negative: String,
    #[arg(long, default_value = "#FFFFFF")]
    midpoint: String,
    #[arg(long, default_value = "#B2182B")]
    positive: String,
    #[arg(long, default_value_t = 32)]
    cell_px: u32,
    #[arg(long, default_value_t = 11)]
    font_px: u32,
    /// Print each value inside its cell.
    #[arg(long)]
    annotate: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Block,
    Flat,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Shipped configuration; ignored when `--truth` is given.
    #[arg(long, value_enum, default_value_t = PresetArg::Block)]
    preset: PresetArg,
    /// Ground-truth JSON to simulate instead of a preset.
    #[arg(long, conflicts_with_all = ["languages", "seeds", "noise_sd", "n_samples"])]
    truth: Option<PathBuf>,
    /// Master seed for the noise streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    languages: Option<usize>,
    /// Number of training seeds per cell.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long = "n")]
    n_samples: Option<u64>,
    /// Record output (.csv or .jsonl); defaults to CSV on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the language list (`code,family`).
    #[arg(long)]
    langs_out: Option<PathBuf>,
    /// Write the ground truth as JSON.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Write the planted transfer matrix in the `compute` JSON format.
    #[arg(long)]
    planted_out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = commands::thread_count()?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a.records, a.out.as_deref()),
        Command::ValidateBalance(a) => commands::validate_balance(&a.metadata, a.out.as_deref()),
        Command::Interval(a) => commands::interval(&a.records, a.threshold, threads, a.out.as_deref()),
        Command::Compute(a) => commands::compute(
            &commands::GridInput { records: a.grid.records, langs: a.grid.langs, n_samples: a.grid.n_samples },
            a.strict,
            a.out.as_deref(),
            a.gains.as_deref(),
        ),
        Command::Diagnose(a) => commands::diagnose(
            &a.matrix,
            a.families.as_deref(),
            match a.reciprocity {
                ReciprocityArg::Positive => cltm_core::diagnostics::ReciprocityDenominator::PositiveEntries,
                ReciprocityArg::AllPairs => cltm_core::diagnostics::ReciprocityDenominator::AllOffDiagonal,
            },
            matches!(a.format, ReportFormat::Table),
            a.out.as_deref(),
        ),
        Command::Stability(a) => commands::stability(
            &commands::GridInput { records: a.grid.records, langs: a.grid.langs, n_samples: a.grid.n_samples },
            a.out.as_deref(),
        ),
        Command::Trials(a) => commands::trials(&a.utterances, a.max_per_class, a.seed, a.out.as_deref()),
        Command::Score(a) => commands::score(&a.embeddings, &a.trials, a.last_k, a.scores.as_deref(), a.out.as_deref()),
        Command::Centroids(a) => commands::centroids(&a.embeddings, a.last_k, a.out.as_deref()),
        Command::Heatmap(a) => {
            let spec = cltm_core::heatmap::HeatmapSpec {
                scale_min: a.scale_min,
                scale_max: a.scale_max,
                negative: cltm_core::heatmap::Rgb::parse(&a.negative).map_err(cltm_core::Error::from)?,
                midpoint: cltm_core::heatmap::Rgb::parse(&a.midpoint).map_err(cltm_core::Error::from)?,
                positive: cltm_core::heatmap::Rgb::parse(&a.positive).map_err(cltm_core::Error::from)?,
                cell_px: a.cell_px,
                font_px: a.font_px,
                annotate: a.annotate,
            };
            commands::heatmap(&a.matrix, &spec, a.out.as_deref())
        }
        Command::Simulate(a) => commands::simulate(&commands::SimulateInput {
            preset: match a.preset {
                PresetArg::Block => cltm_core::synth::Preset::Block,
                PresetArg::Flat => cltm_core::synth::Preset::Flat,
            },
            truth: a.truth,
            master_seed: a.seed,
            languages: a.languages,
            seeds: a.seeds,
            noise_sd: a.noise_sd,
            n_samples: a.n_samples,
            out: a.out,
            langs_out: a.langs_out,
            truth_out: a.truth_out,
            planted_out: a.planted_out,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let error = json!({ "error": "usage", "message": message.trim_end() });
            eprintln!("{error}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
