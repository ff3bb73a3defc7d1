use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assign::max_weight_assignment;
use crate::error::{Error, Result};
use crate::label::{PanopticMap, IGNORE, INSTANCES_PER_CLASS};

pub fn segment_class(id: u16) -> u16 {
    id / INSTANCES_PER_CLASS
}

/// Areas and same-class intersections of two panoptic maps, counted over
/// pixels where the ground truth is not IGNORE.
#[derive(Debug, Clone, Default)]
pub struct SegmentOverlap {
    pub pred_areas: BTreeMap<u16, usize>,
    pub gt_areas: BTreeMap<u16, usize>,
    pub intersections: BTreeMap<(u16, u16), usize>,
}

impl SegmentOverlap {
    pub fn compute(pred: &PanopticMap, gt: &PanopticMap) -> Result<Self> {
        if pred.extent() != gt.extent() {
            return Err(Error::extent(pred.extent(), gt.extent()));
        }
        let mut out = Self::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE {
                continue;
            }
            *out.gt_areas.entry(g).or_default() += 1;
            if p == IGNORE {
                continue;
            }
            *out.pred_areas.entry(p).or_default() += 1;
            if segment_class(p) == segment_class(g) {
                *out.intersections.entry((p, g)).or_default() += 1;
            }
        }
        Ok(out)
    }

    pub fn iou(&self, pred: u16, gt: u16) -> f64 {
        let inter = self.intersections.get(&(pred, gt)).copied().unwrap_or(0);
        if inter == 0 {
            return 0.0;
        }
        let union = self.pred_areas[&pred] + self.gt_areas[&gt] - inter;
        inter as f64 / union as f64
    }

    /// Same-class ground-truth segments overlapping `pred`, in ascending id order.
    pub fn overlapping(&self, pred: u16) -> impl Iterator<Item = (u16, f64)> + '_ {
        self.intersections
            .range((pred, 0)..=(pred, u16::MAX))
            .map(move |(&(p, g), _)| (g, self.iou(p, g)))
    }

    pub fn best_iou_same_class(&self, pred: u16) -> f64 {
        self.overlapping(pred).map(|(_, v)| v).fold(0.0, f64::max)
    }

    pub fn pred_ids_of_class(&self, class: u16) -> Vec<u16> {
        self.pred_areas
            .keys()
            .copied()
            .filter(|&p| segment_class(p) == class)
            .collect()
    }

    pub fn gt_ids_of_class(&self, class: u16) -> Vec<u16> {
        self.gt_areas
            .keys()
            .copied()
            .filter(|&g| segment_class(g) == class)
            .collect()
    }

    /// Classes with at least one segment on either side.
    pub fn classes(&self) -> Vec<u16> {
        let mut c: Vec<u16> = self
            .pred_areas
            .keys()
            .chain(self.gt_areas.keys())
            .map(|&id| segment_class(id))
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePositive {
    pub pred: u16,
    pub gt: u16,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: Vec<TruePositive>,
    pub false_positives: Vec<u16>,
    pub false_negatives: Vec<u16>,
}

impl MatchResult {
    pub fn from_overlap(overlap: &SegmentOverlap, threshold: f64) -> Self {
        let mut out = MatchResult::default();
        for class in overlap.classes() {
            let preds = overlap.pred_ids_of_class(class);
            let gts = overlap.gt_ids_of_class(class);
            let pairs = if threshold >= 0.5 {
                unique_pairs(overlap, &preds, threshold)
            } else {
                assigned_pairs(overlap, &preds, &gts, threshold)
            };
            let mut gt_used = vec![false; gts.len()];
            let mut pred_used = vec![false; preds.len()];
            for (pi, gi, iou) in pairs {
                pred_used[pi] = true;
                gt_used[gi] = true;
                out.true_positives.push(TruePositive {
                    pred: preds[pi],
                    gt: gts[gi],
                    iou,
                });
            }
            out.false_positives.extend(
                preds
                    .iter()
                    .zip(&pred_used)
                    .filter(|(_, &u)| !u)
                    .map(|(&p, _)| p),
            );
            out.false_negatives.extend(
                gts.iter()
                    .zip(&gt_used)
                    .filter(|(_, &u)| !u)
                    .map(|(&g, _)| g),
            );
        }
        out
    }
}

// Above 0.5 each segment can exceed the threshold with at most one partner.
fn unique_pairs(overlap: &SegmentOverlap, preds: &[u16], t: f64) -> Vec<(usize, usize, f64)> {
    let gts: Vec<u16> = preds
        .first()
        .map(|&p| overlap.gt_ids_of_class(segment_class(p)))
        .unwrap_or_default();
    let mut out = Vec::new();
    for (pi, &p) in preds.iter().enumerate() {
        for (g, iou) in overlap.overlapping(p) {
            if iou > t {
                let gi = gts.binary_search(&g).expect("gt id of same class");
                out.push((pi, gi, iou));
            }
        }
    }
    out
}

// Below 0.5 pairs are ambiguous: maximise the number of matches, then total IoU.
fn assigned_pairs(
    overlap: &SegmentOverlap,
    preds: &[u16],
    gts: &[u16],
    t: f64,
) -> Vec<(usize, usize, f64)> {
    if preds.is_empty() || gts.is_empty() {
        return Vec::new();
    }
    let bonus = (preds.len().min(gts.len()) + 1) as f64;
    let weights: Vec<Vec<f64>> = preds
        .iter()
        .map(|&p| {
            gts.iter()
                .map(|&g| {
                    let iou = overlap.iou(p, g);
                    if iou > t {
                        bonus + iou
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    max_weight_assignment(&weights)
        .into_iter()
        .enumerate()
        .filter_map(|(pi, gi)| {
            let gi = gi?;
            (weights[pi][gi] > 0.0).then(|| (pi, gi, overlap.iou(preds[pi], gts[gi])))
        })
        .collect()
}

/// Same-class segment matching at `IoU > threshold`. IoUs ignore pixels that
/// are IGNORE in `gt`; predicted segments lying entirely on such pixels are
/// not counted.
pub fn match_segments(pred: &PanopticMap, gt: &PanopticMap, threshold: f64) -> Result<MatchResult> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidThreshold(threshold));
    }
    Ok(MatchResult::from_overlap(
        &SegmentOverlap::compute(pred, gt)?,
        threshold,
    ))
}
