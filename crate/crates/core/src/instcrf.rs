//! Instance CRF: partitions a semantic probability map into non-overlapping
//! instances, one CRF label per detection.
//!
//! Unary of pixel `i` taking detection `k`:
//! `−ln(w1·ψ_box(i,k) + w2·ψ_global(i,k) + ε)` with
//! `ψ_box = s_k·Q_i(l_k)` inside the detection box (0 outside) and
//! `ψ_global = Q_i(l_k)` everywhere. Stuff classes compete through
//! full-image, score-1 dummy detections.

use std::collections::BTreeMap;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::boxgt::BoundingBox;
use crate::densecrf::{
    map_labeling, run_meanfield, MarginalField, MessagePath, PairwiseConfig, UnaryField,
};
use crate::error::{Error, Result};
use crate::grid::{ChannelGrid, SemanticProbMap};
use crate::label::{encode_panoptic_id, ClassTable, LabelMap, PanopticMap, INSTANCES_PER_CLASS};
use crate::metrics::SegmentOverlap;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: u16,
    pub score: f32,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default)]
    pub is_dummy: bool,
}

impl Detection {
    pub fn new(label: u16, score: f32, bbox: BoundingBox) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::OutOfRange(format!("detection score {score}")));
        }
        Ok(Self {
            label,
            score,
            bbox,
            is_dummy: false,
        })
    }

    /// Full-image, score-1 stand-in for a stuff class.
    pub fn dummy(label: u16, width: u32, height: u32) -> Self {
        Self {
            label,
            score: 1.0,
            bbox: BoundingBox::full(width, height),
            is_dummy: true,
        }
    }
}

/// Appends one dummy per stuff class in ascending id order after the real detections.
pub fn add_stuff_dummies(
    dets: &[Detection],
    stuff_present: &[u16],
    width: u32,
    height: u32,
) -> Vec<Detection> {
    let mut stuff = stuff_present.to_vec();
    stuff.sort_unstable();
    stuff.dedup();
    let mut out = dets.to_vec();
    out.extend(
        stuff
            .into_iter()
            .map(|c| Detection::dummy(c, width, height)),
    );
    out
}

/// Defaults use a narrower spatial bilateral bandwidth than the semantic CRF so
/// that separate instances of one colour stay apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceCrfConfig {
    pub w1: f64,
    pub w2: f64,
    pub epsilon: f64,
    pub pairwise: PairwiseConfig,
    pub iters: usize,
    pub path: MessagePath,
}

impl Default for InstanceCrfConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            epsilon: 1e-6,
            pairwise: PairwiseConfig {
                theta_alpha: 10.0,
                ..PairwiseConfig::default()
            },
            iters: 5,
            path: MessagePath::Window,
        }
    }
}

impl InstanceCrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "w1={} w2={} epsilon={}",
                self.w1, self.w2, self.epsilon
            )));
        }
        self.pairwise.validate()
    }
}

fn check_labels<T: Scalar>(q: &SemanticProbMap<T>, dets: &[Detection]) -> Result<()> {
    match dets.iter().find(|d| d.label as usize >= q.channels()) {
        Some(d) => Err(Error::UnknownClass(d.label)),
        None => Ok(()),
    }
}

/// `ψ_box(i, k) = s_k · Q_i(l_k)` if `i ∈ B_k`, else 0.
pub fn box_unary<T: Scalar>(q: &SemanticProbMap<T>, dets: &[Detection]) -> Result<ChannelGrid<T>> {
    check_labels(q, dets)?;
    let (h, w) = q.extent();
    let mut out = ChannelGrid::filled(h, w, dets.len(), T::zero());
    for i in 0..h * w {
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        for (k, d) in dets.iter().enumerate() {
            if d.bbox.contains(x, y) {
                out.set(i, k, T::of(d.score as f64) * q.get(i, d.label as usize));
            }
        }
    }
    Ok(out)
}

/// `ψ_global(i, k) = Q_i(l_k)`.
pub fn global_unary<T: Scalar>(
    q: &SemanticProbMap<T>,
    dets: &[Detection],
) -> Result<ChannelGrid<T>> {
    check_labels(q, dets)?;
    let (h, w) = q.extent();
    let mut out = ChannelGrid::filled(h, w, dets.len(), T::zero());
    for i in 0..h * w {
        for (k, d) in dets.iter().enumerate() {
            out.set(i, k, q.get(i, d.label as usize));
        }
    }
    Ok(out)
}

/// `u(i, k) = −ln(w1·ψ_box + w2·ψ_global + ε)`.
pub fn combined_unary<T: Scalar>(
    psi_box: &ChannelGrid<T>,
    psi_global: &ChannelGrid<T>,
    cfg: &InstanceCrfConfig,
) -> Result<UnaryField<T>> {
    cfg.validate()?;
    if psi_box.extent() != psi_global.extent() || psi_box.channels() != psi_global.channels() {
        return Err(Error::extent(psi_box.extent(), psi_global.extent()));
    }
    let (w1, w2, eps) = (T::of(cfg.w1), T::of(cfg.w2), T::of(cfg.epsilon));
    let data = psi_box
        .data()
        .iter()
        .zip(psi_global.data())
        .map(|(&b, &g)| -(w1 * b + w2 * g + eps).ln())
        .collect();
    ChannelGrid::from_vec(psi_box.height(), psi_box.width(), psi_box.channels(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    /// Encoded panoptic id.
    pub id: u16,
    pub class_id: u16,
    pub score: f64,
    pub pixels: usize,
    /// Detections whose CRF label won at least one pixel of this instance.
    pub detections: Vec<usize>,
}

/// Output of [`partition`].
#[derive(Debug, Clone)]
pub struct Partition<T> {
    pub panoptic: PanopticMap,
    pub instances: Vec<ScoredInstance>,
    /// MAP detection index per pixel.
    pub assignment: LabelMap,
    pub marginals: MarginalField<T>,
}

/// Runs the instance CRF and converts the MAP labelling into a panoptic map.
///
/// Thing detections become instances numbered per class in detection order
/// (detections that win no pixel are skipped). Every detection of a stuff
/// class, dummy or not, maps to instance 0 of that class. Instances are
/// scored with their detection score.
pub fn partition<T: Scalar>(
    q: &SemanticProbMap<T>,
    dets: &[Detection],
    image: &RgbImage,
    classes: &ClassTable,
    cfg: &InstanceCrfConfig,
) -> Result<Partition<T>> {
    if dets.is_empty() {
        return Err(Error::NoDetections);
    }
    if dets.len() > u16::MAX as usize {
        return Err(Error::OutOfRange(format!("{} detections", dets.len())));
    }
    if (image.height() as usize, image.width() as usize) != q.extent() {
        return Err(Error::extent(
            (image.height() as usize, image.width() as usize),
            q.extent(),
        ));
    }
    for d in dets {
        if !classes.contains(d.label) {
            return Err(Error::UnknownClass(d.label));
        }
    }
    let unary = combined_unary(&box_unary(q, dets)?, &global_unary(q, dets)?, cfg)?;
    let marginals = run_meanfield(&unary, &cfg.pairwise, image, cfg.iters, cfg.path)?;
    let assignment = map_labeling(&marginals);

    let mut used = vec![false; dets.len()];
    for &k in assignment.data() {
        used[k as usize] = true;
    }
    let mut next_index: BTreeMap<u16, u16> = BTreeMap::new();
    let mut id_of = vec![0u16; dets.len()];
    let mut instances: Vec<ScoredInstance> = Vec::new();
    let mut slot_of_id: BTreeMap<u16, usize> = BTreeMap::new();
    for (k, d) in dets.iter().enumerate() {
        if !used[k] {
            continue;
        }
        let stuff = d.is_dummy || classes.is_stuff(d.label);
        let id = if stuff {
            encode_panoptic_id(d.label, 0)?
        } else {
            let slot = next_index.entry(d.label).or_insert(0);
            if *slot >= INSTANCES_PER_CLASS {
                return Err(Error::OutOfRange(format!(
                    "more than 1000 instances of class {}",
                    d.label
                )));
            }
            let id = encode_panoptic_id(d.label, *slot)?;
            *slot += 1;
            id
        };
        id_of[k] = id;
        let slot = *slot_of_id.entry(id).or_insert_with(|| {
            instances.push(ScoredInstance {
                id,
                class_id: d.label,
                score: 0.0,
                pixels: 0,
                detections: Vec::new(),
            });
            instances.len() - 1
        });
        instances[slot].detections.push(k);
        instances[slot].score = instances[slot].score.max(d.score as f64);
    }

    let (h, w) = q.extent();
    let mut panoptic = PanopticMap::filled_ignore(h, w);
    for (i, &k) in assignment.data().iter().enumerate() {
        let id = id_of[k as usize];
        panoptic.raster_mut().set_at(i, id);
        instances[slot_of_id[&id]].pixels += 1;
    }
    Ok(Partition {
        panoptic,
        instances,
        assignment,
        marginals,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    #[default]
    Detection,
    MeanConfidence,
    Oracle,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(ScoreMode::Detection),
            "mean-confidence" => Ok(ScoreMode::MeanConfidence),
            "oracle" => Ok(ScoreMode::Oracle),
            other => Err(Error::InvalidConfig(format!(
                "unknown score mode {other:?}"
            ))),
        }
    }
}

/// Re-scores the instances of a partition. The segmentation itself is untouched.
pub fn score_instances<T: Scalar>(
    part: &Partition<T>,
    dets: &[Detection],
    mode: ScoreMode,
    gt: Option<&PanopticMap>,
) -> Result<Vec<ScoredInstance>> {
    let mut out = part.instances.clone();
    match mode {
        ScoreMode::Detection => {
            for inst in &mut out {
                inst.score = inst
                    .detections
                    .iter()
                    .map(|&k| dets[k].score as f64)
                    .fold(0.0, f64::max);
            }
        }
        ScoreMode::MeanConfidence => {
            let mut sums: BTreeMap<u16, f64> = BTreeMap::new();
            for (i, &k) in part.assignment.data().iter().enumerate() {
                *sums.entry(part.panoptic.at(i)).or_insert(0.0) +=
                    part.marginals.get(i, k as usize).as_f64();
            }
            for inst in &mut out {
                inst.score = sums.get(&inst.id).copied().unwrap_or(0.0) / inst.pixels.max(1) as f64;
            }
        }
        ScoreMode::Oracle => {
            let gt = gt.ok_or(Error::MissingGroundTruth)?;
            let overlap = SegmentOverlap::compute(&part.panoptic, gt)?;
            for inst in &mut out {
                inst.score = overlap.best_iou_same_class(inst.id);
            }
        }
    }
    Ok(out)
}
