//! `crelab`: ingest, train, evaluate, align and screen from the command line.

mod commands;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crelab_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "crelab",
    version,
    about = "Cell-line to patient transfer learning and drug screening"
)]
pub struct Cli {
    /// Training config file of `key = value` lines [default: none]
    #[arg(long, global = true, value_name = "FILE", help_heading = "Global")]
    pub config: Option<PathBuf>,

    /// Random seed; overrides the config file [default: 0]
    #[arg(long, global = true, help_heading = "Global")]
    pub seed: Option<u64>,

    /// Worker threads for parallel cells; 0 uses every core
    #[arg(long, global = true, default_value_t = 0, help_heading = "Global")]
    pub jobs: usize,

    /// Override one config key, e.g. `--set epochs_pretrain=5` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", help_heading = "Global")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest expression, metadata, labels and drugs; apply QC and binarize labels
    Prepare(PrepareArgs),
    /// Generate a two-domain synthetic benchmark
    Synth(SynthArgs),
    /// Pretrain one architecture on one tumor type's split
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained checkpoint on cell-line labels and score patients zero-shot
    Finetune(FinetuneArgs),
    /// Sweep tumor types x variants x strategies and tabulate zero-shot AUROC
    Eval(EvalArgs),
    /// Pretrain variants and report MMD / KL alignment plus embedding exports
    Align(AlignArgs),
    /// Score patients, select efficient drugs, build the DEI table and judge drugs against evidence
    Screen(ScreenArgs),
    /// Merge result tables from earlier runs into summary CSVs
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding expression.tsv, meta.tsv, labels.tsv and drugs.tsv
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Expression matrix `sample_id, gene...` (repeatable; genes are intersected)
    #[arg(long, required = true, value_name = "FILE")]
    pub expression: Vec<PathBuf>,
    /// Sample metadata `sample_id, domain, tumor_type`
    #[arg(long, value_name = "FILE")]
    pub meta: PathBuf,
    /// Response labels `sample_id, drug_id, kind, raw_value`
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    /// Drug table `drug_id, smiles[, v1..v300]`
    #[arg(long, value_name = "FILE")]
    pub drugs: PathBuf,
    /// Treat values as raw TPM and apply log2(TPM + 1)
    #[arg(long, default_value_t = false)]
    pub raw_tpm: bool,
    /// Keep only the K most variable genes [default: keep all]
    #[arg(long, value_name = "K")]
    pub top_k_genes: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    pub n_source: usize,
    #[arg(long, default_value_t = 200)]
    pub n_target: usize,
    #[arg(long, default_value_t = 500)]
    pub n_genes: usize,
    #[arg(long, default_value_t = 8)]
    pub signal_dim: usize,
    /// Confounder strength added to patients
    #[arg(long, default_value_t = 1.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 20)]
    pub n_drugs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    /// Number of tumor types, assigned round-robin
    #[arg(long, default_value_t = 1)]
    pub n_tumor_types: usize,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Architecture variant
    #[arg(long, default_value = "DSN-adv")]
    pub variant: String,
    /// Tumor type whose split is used
    #[arg(long, value_name = "TUMOR")]
    pub tumor_type: String,
    /// Pretraining strategy (adaptive | all_data) [default: from config]
    #[arg(long)]
    pub strategies: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Pretrained checkpoint
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Tumor type whose overlap drugs and test patients are used
    #[arg(long, value_name = "TUMOR")]
    pub tumor_type: String,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated variants or `all`
    #[arg(long, default_value = "all")]
    pub variants: String,
    /// Comma-separated strategies
    #[arg(long, default_value = "adaptive,all_data")]
    pub strategies: String,
    /// Comma-separated tumor types or `all`
    #[arg(long, default_value = "all")]
    pub tumor_types: String,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated variants or `all`
    #[arg(long, default_value = "AE,DSN,DSN-mmd,DSN-adv")]
    pub variants: String,
    /// Comma-separated tumor types or `all`
    #[arg(long, default_value = "all")]
    pub tumor_types: String,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fine-tuned checkpoint
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Evidence table `drug_id, tumor_type, source`
    #[arg(long, value_name = "FILE")]
    pub evidence: PathBuf,
    /// Comma-separated tumor types or `all`
    #[arg(long, default_value = "all")]
    pub tumor_types: String,
    /// Share of drugs kept per patient
    #[arg(long, default_value_t = crelab_core::screen::DEFAULT_FRACTION)]
    pub fraction: f64,
    /// Drugs kept per indication
    #[arg(long, default_value_t = crelab_core::screen::DEFAULT_TOP_N)]
    pub top_n: usize,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories containing results.tsv and/or alignment.tsv (repeatable)
    #[arg(long = "inputs", required = true, value_name = "DIR")]
    pub inputs: Vec<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CRELAB_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg: String = e.to_string().lines().collect::<Vec<_>>().join(" ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(1)
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
