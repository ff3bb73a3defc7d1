use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::apr::{AprAccumulator, AprReport, Regime};
use super::iou::{IouAccumulator, IouReport};
use super::matching::{MatchResult, SegmentOverlap};
use super::pq::{PqAccumulator, PqReport};
use crate::error::{Error, Result};
use crate::instcrf::{ScoreMode, ScoredInstance};
use crate::io::{list_files, read_json, read_label_png, stem};
use crate::label::{ClassTable, PanopticMap};

/// Which metrics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub pq: bool,
    pub apr: bool,
    pub iou: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            pq: true,
            apr: true,
            iou: true,
        }
    }
}

impl FromStr for MetricSet {
    type Err = Error;

    /// Comma-separated subset of `pq`, `apr`, `iou`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = MetricSet {
            pq: false,
            apr: false,
            iou: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "pq" => m.pq = true,
                "apr" => m.apr = true,
                "iou" => m.iou = true,
                other => return Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub metrics: MetricSet,
    pub regime: Regime,
    pub score_mode: ScoreMode,
}

/// Per-instance scores written next to a predicted panoptic map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u16,
    pub class_id: u16,
    pub pixels: usize,
    pub detection: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub instances: Vec<InstanceRecord>,
}

impl ScoreSidecar {
    /// Pairs detection scores with mean-confidence scores of the same instances.
    pub fn from_scored(detection: &[ScoredInstance], mean_confidence: &[ScoredInstance]) -> Self {
        let mc: BTreeMap<u16, f64> = mean_confidence.iter().map(|s| (s.id, s.score)).collect();
        Self {
            instances: detection
                .iter()
                .map(|s| InstanceRecord {
                    id: s.id,
                    class_id: s.class_id,
                    pixels: s.pixels,
                    detection: s.score,
                    mean_confidence: mc.get(&s.id).copied().unwrap_or(0.0),
                })
                .collect(),
        }
    }
}

pub struct EvalInput {
    pub pred: PanopticMap,
    pub gt: PanopticMap,
    pub scores: Option<ScoreSidecar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub options: EvalOptions,
    pub iou: Option<IouReport>,
    pub pq: Option<PqReport>,
    pub apr: Option<AprReport>,
}

fn instance_scores(
    overlap: &SegmentOverlap,
    sidecar: Option<&ScoreSidecar>,
    mode: ScoreMode,
) -> BTreeMap<u16, f64> {
    match mode {
        ScoreMode::Oracle => overlap
            .pred_areas
            .keys()
            .map(|&p| (p, overlap.best_iou_same_class(p)))
            .collect(),
        ScoreMode::Detection | ScoreMode::MeanConfidence => {
            let from_file: BTreeMap<u16, f64> = sidecar
                .map(|s| {
                    s.instances
                        .iter()
                        .map(|r| {
                            let v = if mode == ScoreMode::Detection {
                                r.detection
                            } else {
                                r.mean_confidence
                            };
                            (r.id, v)
                        })
                        .collect()
                })
                .unwrap_or_default();
            overlap
                .pred_areas
                .keys()
                .map(|&p| (p, from_file.get(&p).copied().unwrap_or(1.0)))
                .collect()
        }
    }
}

/// Evaluates in-memory prediction/ground-truth pairs. Counts and score lists
/// are pooled over all images before any metric is computed.
/// Predictions without a score sidecar entry score 1 in the non-oracle modes.
pub fn evaluate_maps(
    inputs: &[EvalInput],
    classes: &ClassTable,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let per_image: Vec<(IouAccumulator, PqAccumulator, AprAccumulator)> = inputs
        .par_iter()
        .enumerate()
        .map(|(idx, input)| {
            let overlap = SegmentOverlap::compute(&input.pred, &input.gt)?;
            let mut iou = IouAccumulator::new();
            if opts.metrics.iou {
                iou.add(&input.pred.semantic(), &input.gt.semantic())?;
            }
            let mut pq = PqAccumulator::new();
            if opts.metrics.pq {
                pq.add(&MatchResult::from_overlap(&overlap, 0.5));
            }
            let mut apr = AprAccumulator::new();
            if opts.metrics.apr {
                let scores = instance_scores(&overlap, input.scores.as_ref(), opts.score_mode);
                apr.add_image(idx, &overlap, &scores, Some(classes));
            }
            Ok((iou, pq, apr))
        })
        .collect::<Result<_>>()?;

    let mut iou = IouAccumulator::new();
    let mut pq = PqAccumulator::new();
    let mut apr = AprAccumulator::new();
    for (i, p, a) in per_image {
        iou.merge(&i);
        pq.merge(&p);
        apr.merge(a);
    }
    Ok(EvalReport {
        images: inputs.len(),
        options: *opts,
        iou: opts.metrics.iou.then(|| iou.report()),
        pq: opts.metrics.pq.then(|| pq.report(Some(classes))),
        apr: opts.metrics.apr.then(|| apr.report(opts.regime)),
    })
}

/// Evaluates every `gt_dir/*.png` against `pred_dir/<same name>.png`, with
/// optional `pred_dir/<stem>.json` score sidecars.
pub fn report(
    pred_dir: &Path,
    gt_dir: &Path,
    classes: &ClassTable,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let gt_files = list_files(gt_dir, "png")?;
    let inputs: Vec<EvalInput> = gt_files
        .par_iter()
        .map(|gt_path| {
            let name = stem(gt_path);
            let pred_path = pred_dir.join(format!("{name}.png"));
            if !pred_path.exists() {
                return Err(Error::MissingPair(name));
            }
            let gt = PanopticMap::new(read_label_png(gt_path)?)?;
            let pred = PanopticMap::new(read_label_png(&pred_path)?)?;
            if gt.extent() != pred.extent() {
                return Err(Error::extent(pred.extent(), gt.extent()));
            }
            let sidecar_path = pred_dir.join(format!("{name}.json"));
            let scores = if sidecar_path.exists() {
                Some(read_json::<ScoreSidecar>(&sidecar_path)?)
            } else {
                None
            };
            Ok(EvalInput { pred, gt, scores })
        })
        .collect::<Result<_>>()?;
    evaluate_maps(&inputs, classes, opts)
}
