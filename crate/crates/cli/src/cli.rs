use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use wspan::grabcut::GrabCutConfig;
use wspan::instcrf::{InstanceCrfConfig, ScoreMode};
use wspan::metrics::{EvalOptions, MetricSet, Regime};
use wspan::proposals::ProposalParams;
use wspan::refine::RefineConfig;
use wspan::synth::SynthConfig;
use wspan::FillMode;

#[derive(Debug, Parser)]
#[command(
    name = "wspan",
    version,
    about = "Weakly-supervised panoptic segmentation toolkit"
)]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON config file; flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with exact ground truth.
    Synth(SynthArgs),
    /// Approximate ground truth from bounding boxes (GrabCut ∩ proposal).
    FabricateBox(FabricateBoxArgs),
    /// Approximate ground truth from image tags and heatmaps.
    FabricateTags(FabricateTagsArgs),
    /// Iteratively refine approximate ground truth with a predictor and dense CRF.
    Refine(RefineArgs),
    /// Partition semantic probabilities into panoptic maps with the instance CRF.
    Partition(PartitionArgs),
    /// Score panoptic predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Colourise panoptic maps.
    Render(RenderArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::FabricateBox(_) => "fabricate-box",
            Command::FabricateTags(_) => "fabricate-tags",
            Command::Refine(_) => "refine",
            Command::Partition(_) => "partition",
            Command::Evaluate(_) => "evaluate",
            Command::Render(_) => "render",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub width: Option<u32>,
    /// Per-channel noise sigma, 8-bit units.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FabricateBoxArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory [default: DATASET/box_gt].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// What unclaimed pixels become: ignore | voc-background.
    #[arg(long)]
    pub unclaimed: Option<FillMode>,
}

#[derive(Debug, Args)]
pub struct FabricateTagsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory [default: DATASET/tag_gt].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Threshold as a fraction of each heatmap's maximum.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory [default: DATASET/refined].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Box fabrication directory [default: DATASET/box_gt].
    #[arg(long)]
    pub box_gt: Option<PathBuf>,
    /// Tag fabrication directory [default: DATASET/tag_gt].
    #[arg(long)]
    pub tag_gt: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// ignore | voc-background.
    #[arg(long)]
    pub clamp_mode: Option<FillMode>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Semantic probability maps [default: DATASET/refined/probs].
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Detection directory [default: DATASET/detections].
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Output directory [default: DATASET/panoptic].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Mean-field iterations.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    /// Comma-separated subset of pq,apr,iou.
    #[arg(long)]
    pub metrics: Option<MetricSet>,
    /// voc | cityscapes.
    #[arg(long)]
    pub regime: Option<Regime>,
    /// detection | mean-confidence | oracle.
    #[arg(long)]
    pub score_mode: Option<ScoreMode>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// A panoptic PNG or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub classes: PathBuf,
    /// Output PNG, or directory when the input is a directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Optional settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub synth: Option<SynthConfig>,
    pub grabcut: Option<GrabCutConfig>,
    pub proposals: Option<ProposalParams>,
    pub unclaimed: Option<FillMode>,
    pub tau: Option<f64>,
    pub refine: Option<RefineConfig>,
    pub instance_crf: Option<InstanceCrfConfig>,
    pub eval: Option<EvalOptions>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Path of `name` under `base` unless overridden.
pub fn under(base: &Path, custom: &Option<PathBuf>, name: &str) -> PathBuf {
    custom.clone().unwrap_or_else(|| base.join(name))
}
