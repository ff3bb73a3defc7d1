use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{LabelMap, IGNORE};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: BTreeMap<u16, f64>,
    pub mean: f64,
}

/// Intersection and union pixel counts per class, summed over images.
#[derive(Debug, Clone, Default)]
pub struct IouAccumulator {
    counts: BTreeMap<u16, (u64, u64)>,
}

impl IouAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pixels where `gt` is IGNORE are skipped entirely.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.extent() != gt.extent() {
            return Err(Error::extent(pred.extent(), gt.extent()));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE {
                continue;
            }
            if p == g {
                self.counts.entry(g).or_default().0 += 1;
                self.counts.entry(g).or_default().1 += 1;
            } else {
                self.counts.entry(g).or_default().1 += 1;
                if p != IGNORE {
                    self.counts.entry(p).or_default().1 += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IouAccumulator) {
        for (&c, &(i, u)) in &other.counts {
            let e = self.counts.entry(c).or_default();
            e.0 += i;
            e.1 += u;
        }
    }

    pub fn report(&self) -> IouReport {
        let per_class: BTreeMap<u16, f64> = self
            .counts
            .iter()
            .filter(|(_, &(_, u))| u > 0)
            .map(|(&c, &(i, u))| (c, i as f64 / u as f64))
            .collect();
        let mean = if per_class.is_empty() {
            0.0
        } else {
            per_class.values().sum::<f64>() / per_class.len() as f64
        };
        IouReport { per_class, mean }
    }
}

/// Per-class IoU over non-IGNORE ground-truth pixels; classes absent from
/// both maps are left out of the mean.
pub fn semantic_iou(pred: &LabelMap, gt: &LabelMap) -> Result<IouReport> {
    let mut acc = IouAccumulator::new();
    acc.add(pred, gt)?;
    Ok(acc.report())
}
