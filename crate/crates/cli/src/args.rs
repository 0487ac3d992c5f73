use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cgp_core::data::Split;
use cgp_core::eval::{Method, Sweep};
use cgp_core::interpret::Normalization;
use cgp_core::stage2::TaskMode;

#[derive(Debug, Parser)]
#[command(
    name = "cgp",
    version,
    about = "Concept-guided prompt tuning for interpretable disease classification"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for single runs; replaces the seed list of protocol runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shot count(s), comma separated; single runs use the largest.
    #[arg(long, global = true, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    /// Encoder bundle name (`mock` is the only bundled one).
    #[arg(long, global = true)]
    pub encoder: Option<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Layered configuration: a preset name or TOML file, then `--set` overrides.
#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Preset name (`quickstart`) or path to a TOML config.
    #[arg(long, default_value = "quickstart")]
    pub config: String,
    /// Dotted-key override, e.g. `--set protocol.stage1.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
}

/// Data paths that replace the config's data source when both are given.
#[derive(Debug, Args, Clone)]
pub struct OptionalDataArgs {
    #[arg(long, requires = "bank")]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Concept bank construction and review.
    #[command(subcommand)]
    Bank(BankCommand),
    /// Manifests, episodes and splits.
    #[command(subcommand)]
    Data(DataCommand),
    /// Prompt-context training and concept inference.
    #[command(subcommand)]
    Stage1(Stage1Command),
    /// Concept-to-disease classifiers.
    #[command(subcommand)]
    Stage2(Stage2Command),
    /// Evaluation protocols.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Concept contribution reports.
    #[command(subcommand)]
    Interpret(InterpretCommand),
    /// End-to-end runs.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
}

#[derive(Debug, Subcommand)]
pub enum BankCommand {
    /// Generate concepts for each disease and keep those that recur.
    Build {
        /// Disease name. Repeatable.
        #[arg(long = "disease", required_unless_present = "diseases_file")]
        diseases: Vec<String>,
        /// File with one disease name per line.
        #[arg(long)]
        diseases_file: Option<PathBuf>,
        /// JSON fixture table: disease -> template -> responses.
        #[arg(long, conflicts_with_all = ["live", "retinal_fixture"])]
        fixture: Option<PathBuf>,
        /// Use the built-in retinal fixture.
        #[arg(long, conflicts_with = "live")]
        retinal_fixture: bool,
        /// Call a chat-completion endpoint configured by CGP_LLM_* variables.
        #[arg(long)]
        live: bool,
        /// Generations per template.
        #[arg(long, default_value_t = 2)]
        repeats: u32,
        /// `all` or an integer >= 2.
        #[arg(long, default_value = "all")]
        min_support: String,
        /// JSON object mapping surface forms to concept ids.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Raw generations sidecar (default `<out>.raw.json`).
        #[arg(long)]
        raw_out: Option<PathBuf>,
    },
    /// Record a reviewer decision for one or more concepts.
    Review {
        #[arg(long)]
        bank: PathBuf,
        /// Concept id. Repeatable.
        #[arg(long = "concept", required_unless_present = "all_generated")]
        concepts: Vec<String>,
        /// Apply the decision to every concept still in `generated` state.
        #[arg(long)]
        all_generated: bool,
        /// `validated` or `rejected`.
        #[arg(long)]
        decision: String,
        #[arg(long)]
        reviewer: String,
        /// Allow overriding an earlier decision.
        #[arg(long)]
        force: bool,
    },
    /// Make the bank read-only; unvalidated concepts drop out of disease sets.
    Freeze {
        #[arg(long)]
        bank: PathBuf,
    },
    /// Print a summary of the bank.
    Show {
        #[arg(long)]
        bank: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Check a manifest against a frozen bank.
    Validate(DataArgs),
    /// Draw an n-shot episode (`--shots`, `--seed`).
    Episode {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Rank diseases by training frequency and split into base and novel halves.
    SplitBaseNovel {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic bank and manifest.
    Synth {
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        concepts_per_disease: usize,
        #[arg(long, default_value_t = 20)]
        images_per_disease: usize,
        #[arg(long, default_value_t = 0.0)]
        shared_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum Stage1Command {
    /// Train the prompt context on an n-shot episode.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Per-epoch loss and learning-rate history as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score every concept for the images of a split.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        context: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitFilter::Test)]
        split: SplitFilter,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum Stage2Command {
    /// Fit a classifier on concept logits.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        logits: PathBuf,
        /// lr, svm, rf or mlp.
        #[arg(long, default_value = "lr")]
        method: Method,
        #[arg(long)]
        mode: Option<TaskMode>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Predict diseases from concept logits.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        logits: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// n-shot classification over every shot count and seed.
    FewShot(EvalArgs),
    /// Train on base diseases, score novel ones through the bank prior.
    BaseNovel(EvalArgs),
    /// Sweep the token position, the number of context tokens, or the Stage 2 model.
    Ablate {
        #[command(flatten)]
        eval: EvalArgs,
        /// token-position, num-tokens or stage2.
        #[arg(long)]
        sweep: Sweep,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: OptionalDataArgs,
    /// Directory for report.json and tables.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum InterpretCommand {
    /// Ranked concept contributions for one disease.
    Report {
        #[command(flatten)]
        inputs: InterpretArgs,
        #[arg(long)]
        disease: String,
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long, default_value_t = 5)]
        bottom: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Concept-to-disease flow file for Sankey plotting.
    Sankey {
        #[command(flatten)]
        inputs: InterpretArgs,
        /// Disease to include. Repeatable; default every disease.
        #[arg(long = "disease")]
        diseases: Vec<String>,
        #[arg(long, default_value_t = 4)]
        top: usize,
        #[arg(long, default_value_t = 4)]
        bottom: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct InterpretArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Test-split concept logits.
    #[arg(long)]
    pub logits: PathBuf,
    /// sum, minmax or none.
    #[arg(long, default_value = "sum")]
    pub normalization: Normalization,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// bank-load, episode, stage1, stage2, eval and interpret in one go.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: OptionalDataArgs,
        /// Root directory for timestamped run directories.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitFilter {
    Train,
    Val,
    Test,
    All,
}

impl SplitFilter {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitFilter::Train => Some(Split::Train),
            SplitFilter::Val => Some(Split::Val),
            SplitFilter::Test => Some(Split::Test),
            SplitFilter::All => None,
        }
    }
}
