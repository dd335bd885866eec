mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lightpath", version, about = "Sparse path encoder: data generation, pretraining, distillation, evaluation and cost profiling")]
struct Cli {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a grid road network and random-walk paths with labels.
    Generate(GenerateArgs),
    /// Pretrain the dual encoder with reconstruction and relational losses.
    Pretrain(PretrainArgs),
    /// Distill a pretrained encoder into a smaller student.
    Distill(DistillArgs),
    /// Write path representations for every path of a dataset.
    Embed(EmbedArgs),
    /// Fit a regressor on frozen representations and report test metrics.
    Eval(EvalArgs),
    /// Analytic parameter, FLOP and memory counts.
    Profile(ProfileArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Grid size as ROWSxCOLS.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Walks started from each seed vertex.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub val: Option<f64>,
    /// Alternative routes per path for a ranking dataset; 0 skips it.
    #[arg(long)]
    pub ranking: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub dec_layers: Option<usize>,
    /// Longest path the position table covers; defaults to the dataset's.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub gamma2: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// `same_view` or `cross_view`.
    #[arg(long)]
    pub pairing: Option<String>,
    /// `spatial` or `random` initial edge embeddings.
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// `exp` or `softmax`.
    #[arg(long)]
    pub softening: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub student_layers: Option<usize>,
    #[arg(long)]
    pub student_heads: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub gamma_eval: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// `travel_time` or `ranking`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub gamma_eval: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Emit the N x gamma scalability grid as CSV.
    #[arg(long)]
    pub table5: bool,
    /// Leave the decoder out of FLOP and memory counts.
    #[arg(long)]
    pub encoder_only: bool,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub dec_layers: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Path length for a single report.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON breakdown destination.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<lightpath::Error>())
        .map_or("cli", lightpath::Error::kind);
    let message = format!("{:#}", err);
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = settings::Settings::load(cli.config.as_deref()).and_then(|s| match cli.command {
        Command::Generate(a) => commands::generate(&s, a),
        Command::Pretrain(a) => commands::pretrain(&s, a),
        Command::Distill(a) => commands::distill(&s, a),
        Command::Embed(a) => commands::embed(&s, a),
        Command::Eval(a) => commands::eval(&s, a),
        Command::Profile(a) => commands::profile(&s, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
