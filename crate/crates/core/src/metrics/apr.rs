use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::matching::{segment_class, SegmentOverlap};
use crate::error::{Error, Result};
use crate::label::ClassTable;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// 0.1, 0.2, ..., 0.9
    #[default]
    Voc,
    /// 0.5, 0.55, ..., 0.95
    Cityscapes,
}

impl Regime {
    pub fn thresholds(self) -> Vec<f64> {
        match self {
            Regime::Voc => (1..=9).map(|i| i as f64 / 10.0).collect(),
            Regime::Cityscapes => (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voc" => Ok(Regime::Voc),
            "cityscapes" => Ok(Regime::Cityscapes),
            other => Err(Error::InvalidConfig(format!("unknown regime {other:?}"))),
        }
    }
}

/// All-point average precision of a ranked list of hit flags, using the
/// monotone precision envelope.
pub fn average_precision(hits: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    hits.iter()
        .zip(&precision)
        .filter(|(&h, _)| h)
        .map(|(_, &p)| p / gt_count as f64)
        .sum()
}

#[derive(Debug, Clone)]
struct Ranked {
    image: usize,
    id: u16,
    score: f64,
    /// Same-class ground-truth ids with IoU, ascending id.
    candidates: Vec<(u16, f64)>,
}

#[derive(Debug, Clone, Default)]
struct ClassRanking {
    gt_count: usize,
    preds: Vec<Ranked>,
}

/// Scored predictions and ground-truth counts per class over many images.
#[derive(Debug, Clone, Default)]
pub struct AprAccumulator {
    classes: BTreeMap<u16, ClassRanking>,
}

impl AprAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one image. Predictions without an entry in `scores` rank with
    /// score 0. With a class table only thing classes are kept.
    pub fn add_image(
        &mut self,
        image: usize,
        overlap: &SegmentOverlap,
        scores: &BTreeMap<u16, f64>,
        classes: Option<&ClassTable>,
    ) {
        let keep = |c: u16| classes.is_none_or(|t| t.is_thing(c));
        for &g in overlap.gt_areas.keys() {
            if keep(segment_class(g)) {
                self.classes.entry(segment_class(g)).or_default().gt_count += 1;
            }
        }
        for &p in overlap.pred_areas.keys() {
            if keep(segment_class(p)) {
                self.classes
                    .entry(segment_class(p))
                    .or_default()
                    .preds
                    .push(Ranked {
                        image,
                        id: p,
                        score: scores.get(&p).copied().unwrap_or(0.0),
                        candidates: overlap.overlapping(p).collect(),
                    });
            }
        }
    }

    pub fn merge(&mut self, other: AprAccumulator) {
        for (c, r) in other.classes {
            let e = self.classes.entry(c).or_default();
            e.gt_count += r.gt_count;
            e.preds.extend(r.preds);
        }
    }

    /// AP per class with at least one ground-truth segment.
    pub fn at_threshold(&self, t: f64) -> BTreeMap<u16, f64> {
        self.classes
            .iter()
            .filter(|(_, r)| r.gt_count > 0)
            .map(|(&c, r)| (c, class_ap(r, t)))
            .collect()
    }

    pub fn report(&self, regime: Regime) -> AprReport {
        let thresholds = regime.thresholds();
        let mut per_class: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
        let mut per_threshold = Vec::with_capacity(thresholds.len());
        for &t in &thresholds {
            let aps = self.at_threshold(t);
            per_threshold.push(if aps.is_empty() {
                0.0
            } else {
                aps.values().sum::<f64>() / aps.len() as f64
            });
            for (c, ap) in aps {
                per_class.entry(c).or_default().push(ap);
            }
        }
        let vol = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
        AprReport {
            regime,
            thresholds,
            per_class,
            per_threshold,
            vol,
        }
    }
}

// Greedy matching down the ranking: score descending, then image and id ascending.
fn class_ap(r: &ClassRanking, t: f64) -> f64 {
    let mut order: Vec<&Ranked> = r.preds.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image.cmp(&b.image))
            .then(a.id.cmp(&b.id))
    });
    let mut matched: BTreeSet<(usize, u16)> = BTreeSet::new();
    let hits: Vec<bool> = order
        .iter()
        .map(|p| {
            let mut best: Option<(u16, f64)> = None;
            for &(g, iou) in &p.candidates {
                if iou > t && !matched.contains(&(p.image, g)) && best.is_none_or(|(_, b)| iou > b)
                {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                matched.insert((p.image, g));
            }
            best.is_some()
        })
        .collect();
    average_precision(&hits, r.gt_count)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AprReport {
    pub regime: Regime,
    pub thresholds: Vec<f64>,
    /// AP per threshold, aligned with `thresholds`.
    pub per_class: BTreeMap<u16, Vec<f64>>,
    /// Class-mean AP per threshold.
    pub per_threshold: Vec<f64>,
    pub vol: f64,
}

/// Per-class AP^r of one image at IoU threshold `t`.
pub fn apr_at_threshold(
    overlap: &SegmentOverlap,
    scores: &BTreeMap<u16, f64>,
    t: f64,
) -> BTreeMap<u16, f64> {
    let mut acc = AprAccumulator::new();
    acc.add_image(0, overlap, scores, None);
    acc.at_threshold(t)
}

/// AP^r averaged over the thresholds of `regime` for one image.
pub fn apr_vol(overlap: &SegmentOverlap, scores: &BTreeMap<u16, f64>, regime: Regime) -> AprReport {
    let mut acc = AprAccumulator::new();
    acc.add_image(0, overlap, scores, None);
    acc.report(regime)
}
