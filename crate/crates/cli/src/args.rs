use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcac_core::eval::Aggregation;
use dcac_core::planner::{PlanOverrides, Preset};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "dcac", version, about = "Cross-domain segmentation with domain- and content-adaptive dynamic convolutions")]
pub struct Cli {
    /// Parent directory for run directories.
    #[arg(long, global = true, env = "DCAC_OUT_DIR", default_value = "runs")]
    pub out_dir: PathBuf,

    /// Run directory name; defaults to a timestamp plus the subcommand.
    #[arg(long, global = true)]
    pub run_name: Option<String>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic multi-domain dataset.
    Synth(SynthArgs),
    /// Fingerprint a dataset and write the resolved training plan.
    Plan(PlanArgs),
    /// Train a single model.
    Train(TrainArgs),
    /// Train one model per fold of a domain-stratified k-fold split.
    Crossval(CrossvalArgs),
    /// Predict masks with a checkpoint ensemble.
    Infer(InferArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Run a cross-domain, in-domain hold-out or full-train protocol.
    Experiment(ExperimentArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Plan(_) => "plan",
            Command::Train(_) => "train",
            Command::Crossval(_) => "crossval",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Experiment(_) => "experiment",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of domains (at least 2).
    #[arg(long, default_value_t = 4)]
    pub domains: usize,
    #[arg(long, default_value_t = 10)]
    pub per_domain: usize,
    /// Image side length in pixels (at least 32).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetArg {
    Desk,
    Full,
}

/// Plan construction: a saved plan, or a fingerprint plus these overrides.
#[derive(Debug, Args, Serialize)]
pub struct PlanFlags {
    /// Use this plan file instead of planning from the dataset.
    #[arg(long, conflicts_with_all = [
        "preset", "dcac", "patch_size", "depth", "base_channels", "epochs", "minibatches", "batch_size", "lr",
        "domain_loss_weight", "stop_gradient_domain_encoding",
    ])]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Enable the dynamic DAC/CAC heads and the domain loss.
    #[arg(long)]
    pub dcac: bool,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatches per epoch.
    #[arg(long)]
    pub minibatches: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the domain classification loss.
    #[arg(long)]
    pub domain_loss_weight: Option<f64>,
    /// Block segmentation gradients from flowing into the domain predictor.
    #[arg(long)]
    pub stop_gradient_domain_encoding: bool,
}

impl PlanFlags {
    pub fn overrides(&self, seed: Option<u64>) -> PlanOverrides {
        PlanOverrides {
            preset: self.preset.map(|p| match p {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Full => Preset::Full,
            }),
            patch_size: self.patch_size,
            depth: self.depth,
            base_channels: self.base_channels,
            batch_size: self.batch_size,
            minibatches_per_epoch: self.minibatches,
            epochs: self.epochs,
            initial_lr: self.lr,
            domain_loss_weight: self.domain_loss_weight,
            dcac_enabled: Some(self.dcac),
            stop_gradient_domain_encoding: self.stop_gradient_domain_encoding.then_some(true),
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub plan: PlanFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Validation set for model selection; the training set when omitted.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub plan: PlanFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub plan: PlanFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Checkpoint to include in the ensemble; repeatable.
    #[arg(long = "checkpoint", required_unless_present = "crossval")]
    pub checkpoints: Vec<PathBuf>,
    /// Cross-validation directory whose selected fold checkpoints form the ensemble.
    #[arg(long, conflicts_with = "checkpoints")]
    pub crossval: Option<PathBuf>,
    /// Predict every image of this manifest.
    #[arg(long, required_unless_present = "images")]
    pub manifest: Option<PathBuf>,
    /// Predict these PNG images; repeatable.
    #[arg(long = "image", conflicts_with = "manifest")]
    pub images: Vec<PathBuf>,
    /// Foreground probability threshold; argmax when omitted.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Disable mirroring test-time augmentation.
    #[arg(long)]
    pub no_tta: bool,
    /// Also write per-pixel class probabilities.
    #[arg(long)]
    pub save_probs: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationArg {
    PerImage,
    Global,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::PerImage => Aggregation::PerImage,
            AggregationArg::Global => Aggregation::Global,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Ground truth.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<image id>.png` predicted masks.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value = "per-image")]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolArg {
    CrossDomain,
    InDomainHoldout,
    FullTrain,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub protocol: ProtocolArg,
    /// Training manifest (cross-domain).
    #[arg(long, required_if_eq("protocol", "cross-domain"))]
    pub source: Option<PathBuf>,
    /// Evaluation manifest from unseen domains (cross-domain).
    #[arg(long = "eval", required_if_eq("protocol", "cross-domain"))]
    pub eval_manifest: Option<PathBuf>,
    /// Held-out images of the source domains, for domain accuracy (cross-domain).
    #[arg(long)]
    pub seen_holdout: Option<PathBuf>,
    /// Dataset for the in-domain hold-out and full-train protocols.
    #[arg(long, required_if_eq_any([("protocol", "in-domain-holdout"), ("protocol", "full-train")]))]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = dcac_core::trainer::DEFAULT_HOLDOUT_PER_DOMAIN)]
    pub holdout_per_domain: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub no_tta: bool,
    #[arg(long, value_enum, default_value = "per-image")]
    pub aggregation: AggregationArg,
    #[command(flatten)]
    pub plan: PlanFlags,
}
