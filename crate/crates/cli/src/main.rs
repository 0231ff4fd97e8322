mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use svdcnn::architecture::{ArchitectureSpec, Family};
use svdcnn::bench::{DEFAULT_REPS, DEFAULT_WARMUP};
use svdcnn::training::TrainConfig;

#[derive(Parser, Debug)]
#[command(
    name = "svdcnn",
    version,
    about = "Character-level SVDCNN and VDCNN text classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print parameter counts and storage for one configuration.
    Describe {
        #[command(flatten)]
        model: ModelArgs,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check parameter accounting against the reference table.
    Verify {
        /// Reference table; the bundled one is used when omitted.
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Relative tolerance per category.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Train a model and write a checkpoint plus a JSON-lines history.
    Train(TrainArgs),
    /// Classify one text with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        json: bool,
    },
    /// Time eval-mode forward passes, or compare two saved results.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Svdcnn,
    Vdcnn,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Svdcnn => Family::Svdcnn,
            FamilyArg::Vdcnn => Family::Vdcnn,
        }
    }
}

fn depth_parser() -> impl TypedValueParser<Value = usize> {
    PossibleValuesParser::new(["9", "17", "29", "49"]).map(|s| s.parse::<usize>().expect("listed depth"))
}

fn parse_reps(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        Ok(n) => Err(format!(
            "at least 2 repetitions are needed for a standard deviation, got {n}"
        )),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "svdcnn")]
    family: FamilyArg,
    #[arg(long, default_value = "9", value_parser = depth_parser())]
    depth: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Characters per sample.
    #[arg(long = "s", default_value_t = ArchitectureSpec::DEFAULT_SEQ_LEN)]
    seq_len: usize,
    /// k-max size (VDCNN) or pooled length (SVDCNN).
    #[arg(long, default_value_t = ArchitectureSpec::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = ArchitectureSpec::DEFAULT_EMBED_DIM)]
    embed: usize,
    /// Hidden width of the VDCNN classifier.
    #[arg(long, default_value_t = ArchitectureSpec::DEFAULT_FC_HIDDEN)]
    hidden: usize,
}

impl ModelArgs {
    fn spec(&self) -> ArchitectureSpec {
        let mut spec = ArchitectureSpec::new(self.family.into(), self.depth, self.classes)
            .with_seq_len(self.seq_len)
            .with_k(self.k);
        spec.embed_dim = self.embed;
        spec.fc_hidden = self.hidden;
        spec
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Training CSV: class in the first column, text after it.
    #[arg(long, requires = "val", conflicts_with = "synthetic")]
    csv: Option<PathBuf>,
    /// Validation CSV in the same format.
    #[arg(long, requires = "csv")]
    val: Option<PathBuf>,
    /// Train on generated letter-frequency data instead of a CSV.
    #[arg(long, required_unless_present = "csv")]
    synthetic: bool,
    #[arg(long, default_value_t = 400)]
    train_size: usize,
    #[arg(long, default_value_t = 200)]
    val_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().eval_every)]
    eval_every: usize,
    /// Seeds weight initialisation, shuffling and synthetic data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// History file; defaults to the checkpoint path with `.history.jsonl`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Time a saved model instead of a freshly built one.
    #[arg(long, conflicts_with = "compare")]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_REPS, value_parser = parse_reps)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the statistics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Print the latency ratio of two saved results instead of timing.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    compare: Option<Vec<PathBuf>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Describe { model, json } => commands::describe(&model.spec(), json),
        Command::Verify { golden, tolerance } => commands::verify(golden.as_deref(), tolerance),
        Command::Train(args) => commands::train(&args),
        Command::Predict { checkpoint, text, json } => commands::predict(&checkpoint, &text, json),
        Command::Bench(args) => commands::bench(&args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
