use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hamloc::data::Split;
use serde_json::{json, Map, Value};

#[derive(Debug, Parser)]
#[command(name = "hamloc", version, about = "Weakly-supervised temporal action localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and epoch log.
    Train(TrainArgs),
    /// Localize actions in one split with a trained checkpoint.
    Localize(LocalizeArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Sweep one axis, run the loss-combination table, or grid search.
    Ablate(AblateArgs),
    /// Render loss curves, mAP tables, and per-video timelines.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for the train/val split; defaults to the generation seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub num_train: Option<usize>,
    #[arg(long)]
    pub num_test: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub core_fraction: Option<f64>,
    #[arg(long)]
    pub core_gain: Option<f64>,
    #[arg(long)]
    pub flank_gain: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

impl SynthArgs {
    pub fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        put(&mut m, "num_classes", self.num_classes);
        put(&mut m, "feature_dim", self.feature_dim);
        put(&mut m, "num_train", self.num_train);
        put(&mut m, "num_test", self.num_test);
        put(&mut m, "min_len", self.min_len);
        put(&mut m, "max_len", self.max_len);
        put(&mut m, "core_fraction", self.core_fraction);
        put(&mut m, "core_gain", self.core_gain);
        put(&mut m, "flank_gain", self.flank_gain);
        put(&mut m, "noise_scale", self.noise_scale);
        put(&mut m, "val_fraction", self.val_fraction);
        put(&mut m, "seed", self.seed);
        m
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// The library defaults: learning rate 1e-5, 100 epochs.
    Standard,
    /// Shorter schedule suited to the synthetic corpora.
    Desk,
}

/// Training and localization settings. Flags are named after the
/// configuration fields they set.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Starting point before `--config` and flags are applied.
    #[arg(long, value_enum, default_value = "standard")]
    pub preset: Preset,
    /// JSON configuration, or a run manifest whose `config` is reused.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_snippets: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// softmax or literal
    #[arg(long)]
    pub background_mode: Option<String>,
    #[arg(long)]
    pub sparsity_mean: Option<bool>,
    #[arg(long)]
    pub guide_mean: Option<bool>,
    #[arg(long)]
    pub semisoft_grad: Option<bool>,
    /// discriminative or inverse
    #[arg(long)]
    pub drop_mode: Option<String>,
    #[arg(long)]
    pub cls_hidden: Option<usize>,
    #[arg(long)]
    pub attn_hidden: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub iou_thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub class_gate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub proposal_thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub smooth_window: Option<usize>,
}

impl ConfigArgs {
    pub fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        put(&mut m, "seed", self.seed);
        put(&mut m, "lambda0", self.lambda0);
        put(&mut m, "lambda1", self.lambda1);
        put(&mut m, "lambda2", self.lambda2);
        put(&mut m, "lambda3", self.lambda3);
        put(&mut m, "alpha", self.alpha);
        put(&mut m, "beta", self.beta);
        put(&mut m, "gamma", self.gamma);
        put(&mut m, "k", self.k);
        put(&mut m, "learning_rate", self.learning_rate);
        put(&mut m, "epochs", self.epochs);
        put(&mut m, "train_snippets", self.train_snippets);
        put(&mut m, "eval_every", self.eval_every);
        put(&mut m, "background_mode", self.background_mode.clone());
        put(&mut m, "sparsity_mean", self.sparsity_mean);
        put(&mut m, "guide_mean", self.guide_mean);
        put(&mut m, "semisoft_grad", self.semisoft_grad);
        put(&mut m, "drop_mode", self.drop_mode.clone());
        put(&mut m, "cls_hidden", self.cls_hidden);
        put(&mut m, "attn_hidden", self.attn_hidden);
        put(&mut m, "iou_thresholds", self.iou_thresholds.clone());
        let mut loc = Map::new();
        put(&mut loc, "class_gate", self.class_gate);
        put(&mut loc, "proposal_thresholds", self.proposal_thresholds.clone());
        put(&mut loc, "zeta", self.zeta);
        put(&mut loc, "nms_iou", self.nms_iou);
        put(&mut loc, "smooth_window", self.smooth_window);
        if !loc.is_empty() {
            m.insert("localization".into(), Value::Object(loc));
        }
        m
    }
}

fn put<T: serde::Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Validate the configuration and write the manifest without training.
    #[arg(long)]
    pub dry_run: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections as JSON lines.
    #[arg(long)]
    pub detections: PathBuf,
    /// Dataset directory supplying ground truth.
    #[arg(long, conflicts_with = "ground_truth", required_unless_present = "ground_truth")]
    pub data: Option<PathBuf>,
    /// JSON file with `num_classes` and a `ground_truth` segment list.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, value_delimiter = ',')]
    pub iou_thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Configuration field to sweep.
    #[arg(long, requires = "values", conflicts_with_all = ["table1", "grid"])]
    pub axis: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Run the eleven loss-combination experiments.
    #[arg(long, conflicts_with = "grid")]
    pub table1: bool,
    /// Grid axis as `field=v1,v2,...`; repeat for more axes.
    #[arg(long)]
    pub grid: Vec<String>,
    #[arg(long, default_value_t = hamloc::trainer::DEFAULT_GRID_CAP)]
    pub grid_cap: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Evaluation report JSON.
    #[arg(long)]
    pub eval_report: Option<PathBuf>,
    /// Dataset for timelines; needs `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    /// Videos to draw; defaults to the first three of the split.
    #[arg(long, value_delimiter = ',')]
    pub videos: Vec<String>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub config: ConfigArgs,
}
