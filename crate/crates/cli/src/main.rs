//! `foundry` — data preparation, pre-training, downstream training, grids,
//! reports, and risk decomposition from the command line.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "foundry", version, about = "ECG foundation models at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset preparation: synthesis, standardization, splits, subsampling.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Pre-train a foundation model.
    Pretrain(PretrainArgs),
    /// Linear probing on a frozen checkpoint encoder.
    Probe(DownstreamArgs),
    /// Fine-tune all weights from a checkpoint.
    Finetune(DownstreamArgs),
    /// Train the end-to-end supervised baseline.
    Supervised(DownstreamArgs),
    /// Run an experiment grid from a JSON spec.
    Grid(GridArgs),
    /// Emit reports from grid row files.
    Report(ReportArgs),
    /// Run the four-component risk decomposition.
    Riskdecomp(RiskArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Standardize every record to 12 × 2500 @ 250 Hz / 1.0 mV.
    Standardize(StandardizeArgs),
    /// Patient-disjoint train/val/test split.
    Split(SplitArgs),
    /// Thin a labeled dataset by data usage or case ratio.
    Subsample(SubsampleArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    patients: usize,
    #[arg(long = "records-per-patient", default_value_t = 2)]
    records_per_patient: usize,
    /// Optional generator-parameter JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct StandardizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory; receives train/, val/, and test/ containers.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated train,val,test fractions.
    #[arg(long, default_value = "0.72,0.08,0.2")]
    fractions: String,
}

#[derive(Args)]
struct SubsampleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep this fraction of records (patient-stratified).
    #[arg(long, conflicts_with_all = ["case_ratio", "task"])]
    usage: Option<f64>,
    /// Target positive fraction for --task.
    #[arg(long = "case-ratio", requires = "task")]
    case_ratio: Option<f64>,
    /// Task for --case-ratio: mi, sttc, cd, or hyp.
    #[arg(long)]
    task: Option<String>,
}

#[derive(Args)]
struct PretrainArgs {
    /// cl, gl, or hl.
    #[arg(long)]
    method: String,
    /// Model-config JSON (patch/depth/dim plus optional fields).
    #[arg(long)]
    config: PathBuf,
    /// Standardized dataset container.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss-history CSV (step,total,patient,sample,reconstruction).
    #[arg(long = "loss-csv")]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long = "weight-decay", default_value_t = 1e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long = "mask-ratio", default_value_t = 0.75)]
    mask_ratio: f64,
    #[arg(long = "patients-per-batch", default_value_t = 8)]
    patients_per_batch: usize,
}

#[derive(Args)]
struct DownstreamArgs {
    /// Checkpoint path, or `random` for a fresh encoder (probe baseline).
    #[arg(long)]
    ckpt: String,
    /// Required when --ckpt random or for the supervised command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mi, sttc, cd, or hyp.
    #[arg(long)]
    task: String,
    /// Split directory holding train/, val/, and test/ containers.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trained-model output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long = "weight-decay", default_value_t = 1e-5)]
    weight_decay: f64,
    /// Test-set predictions CSV (record_id,score,label).
    #[arg(long = "pred-csv")]
    pred_csv: Option<PathBuf>,
    /// Test-set metrics JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Grid spec JSON (versioned).
    #[arg(long)]
    spec: PathBuf,
    /// Split directory holding train/, val/, and test/ containers; the
    /// train split doubles as the pre-training pool unless --pretrain-data
    /// is given.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "pretrain-data")]
    pretrain_data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Grid output directory (reads rows/*.json), or a rows.json file.
    #[arg(long)]
    rows: PathBuf,
    #[arg(long)]
    format: String,
    /// Output directory (defaults to <rows>/report).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RiskArgs {
    /// Risk-decomposition config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Split directory holding train/, val/, and test/ containers.
    #[arg(long)]
    data: PathBuf,
    /// Unlabeled pre-training pool (defaults to the train split).
    #[arg(long = "pretrain-data")]
    pretrain_data: Option<PathBuf>,
    /// Report output JSON.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Data { command } => match command {
            DataCommand::Synth(args) => commands::synth(args),
            DataCommand::Standardize(args) => commands::standardize(args),
            DataCommand::Split(args) => commands::split(args),
            DataCommand::Subsample(args) => commands::subsample(args),
        },
        Command::Pretrain(args) => commands::pretrain(args),
        Command::Probe(args) => commands::downstream(args, commands::Kind::Probe),
        Command::Finetune(args) => commands::downstream(args, commands::Kind::Finetune),
        Command::Supervised(args) => commands::downstream(args, commands::Kind::Supervised),
        Command::Grid(args) => commands::grid(args),
        Command::Report(args) => commands::report(args),
        Command::Riskdecomp(args) => commands::riskdecomp(args),
    }
}
