//! `topicseg`: chop, train, tune, segment and score broadcast news shows.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "topicseg", version, about = "Topic segmentation of speech transcripts")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split shows into units and write the unit table.
    Chop(ChopArgs),
    /// Cluster training stories and estimate the topic cluster model.
    TrainLm(TrainLmArgs),
    /// Train a boundary decision tree on a labeled feature table.
    TrainTree(TrainTreeArgs),
    /// Grid-search decoding parameters on dev shows.
    Tune(TuneArgs),
    /// Segment shows with a tuned configuration.
    Segment(SegmentArgs),
    /// Score hypotheses against reference boundaries.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Fixed,
    Turn,
    Pause,
    Sentence,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Lm,
    Pm,
    CmDt,
    CmHmm,
}

#[derive(Clone, Copy, Default, ValueEnum)]
pub enum ReportFormat {
    #[default]
    Json,
    Tsv,
}

#[derive(Args)]
pub struct ChopArgs {
    #[arg(long)]
    pub shows: PathBuf,
    /// TOML file with a `[criterion]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    #[arg(long)]
    pub block_length: Option<usize>,
    /// Seconds; a unit ends where the pause is strictly longer.
    #[arg(long)]
    pub pause_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub stories: PathBuf,
    #[arg(long)]
    pub stoplist: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_words: Option<u64>,
    #[arg(long)]
    pub max_words: Option<u64>,
    /// Also estimate BEGIN/END unigrams from this many words at story edges.
    #[arg(long)]
    pub begin_end_words: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainTreeArgs {
    /// Labeled feature table.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pick features on a held-out table before the final fit.
    #[arg(long, requires = "heldout")]
    pub select_features: bool,
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Require the POST_TOPIC column (training the CM-DT tree).
    #[arg(long)]
    pub posterior_feature: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TuneArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Dev shows with reference boundaries.
    #[arg(long = "shows")]
    pub dev_shows: PathBuf,
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub prosody_tree: Option<PathBuf>,
    #[arg(long)]
    pub cm_dt_tree: Option<PathBuf>,
    /// Starting combiner config; CM-DT takes its switch penalty from here.
    #[arg(long)]
    pub lm_config: Option<PathBuf>,
    /// TOML grid and scoring parameters.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub word_k: Option<usize>,
    #[arg(long)]
    pub use_begin_end: bool,
    /// Format of the report on stdout.
    #[arg(long, value_enum, default_value_t)]
    pub report: ReportFormat,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Tuned combiner config (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SegmentArgs {
    /// Combiner config written by `tune`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub shows: PathBuf,
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub prosody_tree: Option<PathBuf>,
    #[arg(long)]
    pub cm_dt_tree: Option<PathBuf>,
    /// Boundary log likelihoods replacing the prosody tree:
    /// `show_id TAB boundary_index TAB loglike_yes TAB loglike_no`.
    #[arg(long)]
    pub boundary_likes: Option<PathBuf>,
    /// Also write the feature table augmented with POST_TOPIC.
    #[arg(long)]
    pub emit_features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub word_k: usize,
    /// Probe duration in seconds.
    #[arg(long, default_value_t = 15.0)]
    pub time_delta: f64,
    #[arg(long, value_enum, default_value_t)]
    pub report: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Draw from this model instead of a planted one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// TOML generator profile.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Shows per source.
    #[arg(long)]
    pub shows: Option<usize>,
    #[arg(long)]
    pub stories: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            anyhow::bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Chop(a) => commands::chop_cmd(a),
        Command::TrainLm(a) => commands::train_lm_cmd(a),
        Command::TrainTree(a) => commands::train_tree_cmd(a),
        Command::Tune(a) => commands::tune_cmd(a),
        Command::Segment(a) => commands::segment_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Synth(a) => commands::synth_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
