//! Approximate ground truth from image tags and per-class localisation heatmaps.

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ChannelGrid};
use crate::label::{LabelMap, IGNORE};

/// Default threshold as a fraction of the heatmap maximum.
pub const DEFAULT_TAU: f64 = 0.5;
/// The conventional threshold for object-centric datasets.
pub const OBJECT_TAU: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub class_id: u16,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn new(class_id: u16, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ExtentMismatch(format!(
                "heatmap {height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        if let Some(v) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::OutOfRange(format!("negative activation {v}")));
        }
        Ok(Self {
            class_id,
            height,
            width,
            values,
        })
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Splits a heatmap stack whose channels follow ascending class id of `tags`.
pub fn heatmaps_from_stack(stack: &ChannelGrid<f32>, tags: &[u16]) -> Result<Vec<Heatmap>> {
    let mut sorted = tags.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if stack.channels() != sorted.len() {
        return Err(Error::ExtentMismatch(format!(
            "heatmap stack has {} channels for {} tags",
            stack.channels(),
            sorted.len()
        )));
    }
    sorted
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            Heatmap::new(
                c,
                stack.height(),
                stack.width(),
                stack.channel(k).into_vec(),
            )
        })
        .collect()
}

/// `mask(p) = h(p) ≥ tau · max(h)`.
pub fn threshold_heatmap(h: &Heatmap, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    let max = h.values.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Err(Error::ZeroHeatmap(h.class_id));
    }
    let cut = tau * max as f64;
    BinaryMask::from_vec(
        h.height,
        h.width,
        h.values.iter().map(|&v| v as f64 >= cut).collect(),
    )
}

/// Labels each covered pixel with the covering class whose thresholded mask
/// is smallest (ties to the lower class id). Uncovered pixels are IGNORE.
/// Identically-zero heatmaps are skipped with a warning.
pub fn fabricate_tag_gt(heatmaps: &[Heatmap], tags: &[u16], tau: f64) -> Result<LabelMap> {
    let extent = match heatmaps.first() {
        Some(h) => h.extent(),
        None => return Err(Error::InvalidConfig("no heatmaps".into())),
    };
    let mut masks: Vec<(usize, u16, BinaryMask)> = Vec::new();
    for h in heatmaps {
        if !tags.contains(&h.class_id) {
            return Err(Error::ClassNotTagged(h.class_id));
        }
        if h.extent() != extent {
            return Err(Error::extent(h.extent(), extent));
        }
        match threshold_heatmap(h, tau) {
            Ok(m) => masks.push((m.count(), h.class_id, m)),
            Err(Error::ZeroHeatmap(c)) => warn!("heatmap for class {c} is all zero; skipped"),
            Err(e) => return Err(e),
        }
    }
    // precedence order: area, then class id
    masks.sort_by_key(|(area, class, _)| (*area, *class));

    let (h, w) = extent;
    let mut out = LabelMap::filled(h, w, IGNORE);
    for i in 0..h * w {
        if let Some((_, class, _)) = masks.iter().find(|(_, _, m)| m.at(i)) {
            out.set_at(i, *class);
        }
    }
    Ok(out)
}
