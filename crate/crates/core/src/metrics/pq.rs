use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matching::{segment_class, MatchResult};
use crate::label::{ClassKind, ClassTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PqClass {
    pub pq: f64,
    pub sq: f64,
    pub dq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub iou_sum: f64,
}

impl PqClass {
    fn from_counts(tp: usize, fp: usize, fn_: usize, iou_sum: f64) -> Self {
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        let (pq, dq) = if denom > 0.0 {
            (iou_sum / denom, tp as f64 / denom)
        } else {
            (0.0, 0.0)
        };
        let sq = if tp > 0 { iou_sum / tp as f64 } else { 0.0 };
        Self {
            pq,
            sq,
            dq,
            tp,
            fp,
            fn_,
            iou_sum,
        }
    }
}

/// Class-mean PQ, SQ and DQ over a set of classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PqSplit {
    pub pq: f64,
    pub sq: f64,
    pub dq: f64,
    pub classes: usize,
}

impl PqSplit {
    fn mean<'a>(items: impl Iterator<Item = &'a PqClass>) -> Self {
        let mut s = PqSplit::default();
        for c in items {
            s.pq += c.pq;
            s.sq += c.sq;
            s.dq += c.dq;
            s.classes += 1;
        }
        if s.classes > 0 {
            let n = s.classes as f64;
            s.pq /= n;
            s.sq /= n;
            s.dq /= n;
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PqReport {
    pub per_class: BTreeMap<u16, PqClass>,
    pub things: PqSplit,
    pub stuff: PqSplit,
    pub all: PqSplit,
}

/// TP/FP/FN counts and matched-IoU sums per class.
#[derive(Debug, Clone, Default)]
pub struct PqAccumulator {
    counts: BTreeMap<u16, (usize, usize, usize, f64)>,
}

impl PqAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, m: &MatchResult) {
        for tp in &m.true_positives {
            let e = self.counts.entry(segment_class(tp.gt)).or_default();
            e.0 += 1;
            e.3 += tp.iou;
        }
        for &p in &m.false_positives {
            self.counts.entry(segment_class(p)).or_default().1 += 1;
        }
        for &g in &m.false_negatives {
            self.counts.entry(segment_class(g)).or_default().2 += 1;
        }
    }

    pub fn merge(&mut self, other: &PqAccumulator) {
        for (&c, &(tp, fp, fn_, s)) in &other.counts {
            let e = self.counts.entry(c).or_default();
            e.0 += tp;
            e.1 += fp;
            e.2 += fn_;
            e.3 += s;
        }
    }

    /// Without a class table every class counts toward `all` only.
    pub fn report(&self, classes: Option<&ClassTable>) -> PqReport {
        let per_class: BTreeMap<u16, PqClass> = self
            .counts
            .iter()
            .map(|(&c, &(tp, fp, fn_, s))| (c, PqClass::from_counts(tp, fp, fn_, s)))
            .collect();
        let kind = |c: u16| classes.and_then(|t| t.kind(c));
        PqReport {
            things: PqSplit::mean(
                per_class
                    .iter()
                    .filter(|(&c, _)| kind(c) == Some(ClassKind::Thing))
                    .map(|(_, v)| v),
            ),
            stuff: PqSplit::mean(
                per_class
                    .iter()
                    .filter(|(&c, _)| kind(c) == Some(ClassKind::Stuff))
                    .map(|(_, v)| v),
            ),
            all: PqSplit::mean(per_class.values()),
            per_class,
        }
    }
}

/// `PQ = Σ_TP IoU / (|TP| + ½|FP| + ½|FN|)` per class, averaged over classes
/// present in either map.
pub fn panoptic_quality(m: &MatchResult, classes: Option<&ClassTable>) -> PqReport {
    let mut acc = PqAccumulator::new();
    acc.add(m);
    acc.report(classes)
}
