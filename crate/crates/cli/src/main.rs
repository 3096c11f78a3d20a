use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use physaffect::LabelMode;

mod commands;
mod output;

use output::Failure;

#[derive(Parser)]
#[command(name = "physaffect", version, about = "Emotion recognition from physiological recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the 343-feature table from a corpus.
    Extract {
        /// Corpus directory or manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Output features.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train one forest on every row of a feature table.
    Train {
        /// features.csv
        #[arg(long)]
        data: PathBuf,
        /// Output model.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Run a validation protocol; writes report.json and histogram.csv.
    Evaluate {
        /// features.csv
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// oob: one forest per subject instead of one pooled forest.
        #[arg(long)]
        per_subject: bool,
        /// loso-neighbors: train one model on the neighbors' rows instead of
        /// letting their personal models vote.
        #[arg(long)]
        pooled: bool,
        /// Number of folds for kfold.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Correlation threshold for loso-neighbors; defaults to 0.30 for
        /// arousal and 0.35 otherwise.
        #[arg(long)]
        rho: Option<f64>,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Rank the features of a trained model by mean Gini decrease.
    Importance {
        /// model.json
        #[arg(long)]
        model: PathBuf,
        /// Output ranking.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Group subjects by the correlation of their ratings.
    Cluster {
        /// Corpus directory or manifest.json; only the labels are read.
        #[arg(long)]
        data: PathBuf,
        /// Output graph.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_mode, default_value = "valence")]
        label_mode: LabelMode,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Generate a synthetic corpus from a JSON spec.
    Synth {
        /// Spec with n_subjects, recipe and an optional label plan.
        #[arg(long, required_unless_present = "print_spec", requires = "out")]
        spec: Option<PathBuf>,
        /// Output corpus directory; must not exist or be empty.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Print a starter spec (baseline recipe, quadrant classes planted on
        /// the temperature channel) and exit.
        #[arg(long, conflicts_with_all = ["spec", "out"])]
        print_spec: bool,
    },
}

#[derive(Args, Clone)]
struct ForestArgs {
    #[arg(long, value_parser = parse_mode, default_value = "valence")]
    label_mode: LabelMode,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 19)]
    mtry: usize,
    /// Stratified bootstrap capping each class at ratio times the rarest.
    #[arg(long)]
    balanced: bool,
    #[arg(long, default_value_t = 6.0)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Skip the per-subject z-scoring of every feature.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Protocol {
    Oob,
    Kfold,
    Loto,
    Loso,
    LosoNeighbors,
}

impl Protocol {
    fn name(self) -> &'static str {
        match self {
            Protocol::Oob => "oob",
            Protocol::Kfold => "kfold",
            Protocol::Loto => "loto",
            Protocol::Loso => "loso",
            Protocol::LosoNeighbors => "loso-neighbors",
        }
    }
}

fn parse_mode(s: &str) -> Result<LabelMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
