use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fsec_core::encoder::AdvScope;
use fsec_core::sampling::SamplingMethod;
use fsec_core::synthetic::TriggerVocab;

#[derive(Debug, Parser)]
#[command(
    name = "fsec",
    version,
    about = "Few-shot event classification: trigger-bias diagnostics, episode sampling, training and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert, filter, split or generate corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Trigger long-tail and trigger/event skew statistics.
    Analyze(AnalyzeArgs),
    /// Write sampled meta tasks as canonical records.
    Sample(SampleArgs),
    /// Train the CNN prototypical encoder.
    Train(TrainArgs),
    /// Evaluate a baseline or a checkpoint over seeded meta tasks.
    Eval(EvalArgs),
    /// Combine evaluation reports into one table.
    Report(ReportArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// MAVEN documents to canonical records.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep event types with at least `--min` instances.
    Filter {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        min: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split by event type into train.jsonl, dev.jsonl and test.jsonl.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON object with `train`, `dev` and `test` event-type lists.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a corpus with one dominant trigger per event.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        events: usize,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0.9)]
        dominant_fraction: f64,
        #[arg(long, default_value_t = 10)]
        rare: usize,
        /// disjoint, shared-rare-pool or fully-shared
        #[arg(long, default_value = "shared-rare-pool")]
        vocab: TriggerVocab,
        #[arg(long, default_value_t = 50)]
        context_words: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EmbeddingArgs {
    /// Text-format word vectors; falls back to FSEC_EMB_PATH.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub dim: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    /// ius, tus or cos
    #[arg(long)]
    pub method: Option<SamplingMethod>,
    /// Probability of drawing from the confusing trigger set (cos).
    #[arg(long)]
    pub cos_p: Option<f64>,
    /// Confusing triggers per other event type (cos).
    #[arg(long)]
    pub cos_u: Option<usize>,
    /// Draw the cos query trigger uniformly instead of by the confusing-set rule.
    #[arg(long)]
    pub cos_query_uniform: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Apply the minimum-instances filter before computing statistics.
    #[arg(long)]
    pub min: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub top_m: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub top_x: Vec<usize>,
    /// Also sample this many tasks and count query/support trigger overlap.
    #[arg(long)]
    pub overlap_tasks: Option<usize>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub dev_tasks: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// all or query-only
    #[arg(long, value_parser = parse_adv_scope)]
    pub adv_scope: Option<AdvScope>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Checkpoint path; history goes to `<out>.history.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// string-match, glove-match, or a checkpoint path.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Evaluation threads; results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write to this path instead of the recorded output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_adv_scope(s: &str) -> Result<AdvScope, String> {
    match s {
        "all" => Ok(AdvScope::All),
        "query-only" => Ok(AdvScope::QueryOnly),
        other => Err(format!(
            "unknown adversarial scope `{other}` (expected all or query-only)"
        )),
    }
}
