//! Iterative self-training: fit a predictor on the current approximate
//! ground truth, post-process its output with the dense CRF, clamp thing
//! labels to their boxes and repeat.

use std::collections::BTreeMap;

use image::RgbImage;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::max_weight_assignment;
use crate::boxgt::BoxAnnotation;
use crate::densecrf::{map_labeling, run_meanfield, MessagePath, PairwiseConfig};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ChannelGrid, SemanticProbMap};
use crate::label::{encode_panoptic_id, ClassTable, FillMode, LabelMap, PanopticMap, IGNORE};
use crate::metrics::{segment_class, IouAccumulator, MatchResult, PqAccumulator, SegmentOverlap};
use crate::scalar::Scalar;

/// Pseudo-count added to every histogram bin and class prior.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Smallest probability used inside a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// A per-pixel semantic classifier that can be refitted on partial labels.
pub trait Predictor: Send + Sync {
    /// Fits on labelled pixels; IGNORE pixels carry no information.
    fn fit(&mut self, images: &[RgbImage], labels: &[LabelMap]) -> Result<()>;
    /// Per-pixel class distribution.
    fn predict(&self, image: &RgbImage) -> Result<SemanticProbMap<f32>>;
}

/// Histogram Bayes classifier on quantised RGB.
#[derive(Debug, Clone)]
pub struct NaiveColorPredictor {
    classes: usize,
    bits: u32,
    alpha: f64,
    /// `p(bin | class)`, class-major.
    likelihood: Vec<f64>,
    prior: Vec<f64>,
}

impl NaiveColorPredictor {
    /// 16 levels per channel, additive smoothing 0.1.
    pub fn new(classes: usize) -> Self {
        Self::with_params(classes, 4, DEFAULT_ALPHA)
    }

    pub fn with_params(classes: usize, bits: u32, alpha: f64) -> Self {
        let bins = 1usize << (3 * bits);
        Self {
            classes,
            bits,
            alpha,
            likelihood: vec![1.0 / bins as f64; classes * bins],
            prior: vec![1.0 / classes.max(1) as f64; classes],
        }
    }

    fn bins(&self) -> usize {
        1 << (3 * self.bits)
    }

    fn bin(&self, p: &image::Rgb<u8>) -> usize {
        let s = 8 - self.bits;
        let b = self.bits;
        ((p[0] as usize >> s) << (2 * b)) | ((p[1] as usize >> s) << b) | (p[2] as usize >> s)
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// `p(bin | class)` for one class.
    pub fn likelihood(&self, class: usize) -> &[f64] {
        let n = self.bins();
        &self.likelihood[class * n..(class + 1) * n]
    }
}

impl Predictor for NaiveColorPredictor {
    fn fit(&mut self, images: &[RgbImage], labels: &[LabelMap]) -> Result<()> {
        if images.len() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} images but {} label maps",
                images.len(),
                labels.len()
            )));
        }
        let n = self.bins();
        let mut counts = vec![0u64; self.classes * n];
        let mut totals = vec![0u64; self.classes];
        for (img, lab) in images.iter().zip(labels) {
            let extent = (img.height() as usize, img.width() as usize);
            if extent != lab.extent() {
                return Err(Error::extent(extent, lab.extent()));
            }
            for (p, &c) in img.pixels().zip(lab.data()) {
                if c == IGNORE {
                    continue;
                }
                if c as usize >= self.classes {
                    return Err(Error::UnknownClass(c));
                }
                counts[c as usize * n + self.bin(p)] += 1;
                totals[c as usize] += 1;
            }
        }
        let all: u64 = totals.iter().sum();
        let k = self.classes as f64;
        for c in 0..self.classes {
            let denom = totals[c] as f64 + self.alpha * n as f64;
            for b in 0..n {
                self.likelihood[c * n + b] = (counts[c * n + b] as f64 + self.alpha) / denom;
            }
            self.prior[c] = (totals[c] as f64 + self.alpha) / (all as f64 + self.alpha * k);
        }
        Ok(())
    }

    fn predict(&self, image: &RgbImage) -> Result<SemanticProbMap<f32>> {
        let (h, w) = (image.height() as usize, image.width() as usize);
        let n = self.bins();
        let mut data = Vec::with_capacity(h * w * self.classes);
        let mut row = vec![0.0f64; self.classes];
        for p in image.pixels() {
            let b = self.bin(p);
            let mut sum = 0.0;
            for (c, r) in row.iter_mut().enumerate() {
                *r = self.prior[c] * self.likelihood[c * n + b];
                sum += *r;
            }
            data.extend(row.iter().map(|&r| (r / sum) as f32));
        }
        ChannelGrid::from_vec(h, w, self.classes, data)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    #[default]
    NaiveColor,
}

impl PredictorKind {
    pub fn build(self, classes: usize) -> Box<dyn Predictor> {
        match self {
            PredictorKind::NaiveColor => Box::new(NaiveColorPredictor::new(classes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub rounds: usize,
    pub clamp: FillMode,
    pub pairwise: PairwiseConfig,
    pub crf_iters: usize,
    pub path: MessagePath,
    pub predictor: PredictorKind,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            clamp: FillMode::Ignore,
            pairwise: PairwiseConfig::default(),
            crf_iters: 5,
            path: MessagePath::Window,
            predictor: PredictorKind::NaiveColor,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be at least 1".into()));
        }
        self.pairwise.validate()
    }
}

/// Loss over the labelled pixels and their count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub loss: f64,
    pub support: usize,
}

/// `Σ_{i ∈ Ω′} −ln P_i(gt_i)` with `Ω′` the non-IGNORE pixels.
pub fn masked_cross_entropy<T: Scalar>(
    p: &SemanticProbMap<T>,
    gt: &LabelMap,
) -> Result<MaskedLoss> {
    if p.extent() != gt.extent() {
        return Err(Error::extent(p.extent(), gt.extent()));
    }
    let mut loss = 0.0;
    let mut support = 0;
    for (i, &c) in gt.data().iter().enumerate() {
        if c == IGNORE {
            continue;
        }
        if c as usize >= p.channels() {
            return Err(Error::UnknownClass(c));
        }
        loss -= p.get(i, c as usize).as_f64().max(PROB_FLOOR).ln();
        support += 1;
    }
    if support == 0 {
        return Err(Error::EmptySupport);
    }
    Ok(MaskedLoss { loss, support })
}

/// Resets thing labels that fall outside every box of their class.
pub fn clamp_things_outside_boxes(
    pred: &LabelMap,
    annotations: &[BoxAnnotation],
    classes: &ClassTable,
    mode: FillMode,
) -> Result<LabelMap> {
    let fill = match mode {
        FillMode::Ignore => IGNORE,
        FillMode::VocBackground => classes.background().ok_or_else(|| {
            Error::InvalidConfig("voc-background mode needs exactly one stuff class".into())
        })?,
    };
    let mut out = pred.clone();
    let w = pred.width();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = *v;
        if c == IGNORE || !classes.is_thing(c) {
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        let inside = annotations
            .iter()
            .any(|a| a.class_id == c && a.bbox.contains(x, y));
        if !inside {
            *v = fill;
        }
    }
    Ok(out)
}

/// Round-0 semantic labels: box labels where a box claimed the pixel,
/// otherwise the tag label, otherwise the box map's fill value.
pub fn combine_fabrications(
    box_semantic: &LabelMap,
    claimed: &BinaryMask,
    tags: Option<&LabelMap>,
) -> Result<LabelMap> {
    if claimed.extent() != box_semantic.extent() {
        return Err(Error::extent(claimed.extent(), box_semantic.extent()));
    }
    let mut out = box_semantic.clone();
    if let Some(tags) = tags {
        if tags.extent() != out.extent() {
            return Err(Error::extent(tags.extent(), out.extent()));
        }
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if !claimed.at(i) && tags.at(i) != IGNORE {
                *v = tags.at(i);
            }
        }
    }
    Ok(out)
}

/// Panoptic view of a semantic map: thing pixels join the smallest box of
/// their class that contains them (ties to the earlier box), stuff pixels
/// form instance 0, and thing pixels outside all boxes are IGNORE.
pub fn panoptic_from_boxes(
    labels: &LabelMap,
    annotations: &[BoxAnnotation],
    classes: &ClassTable,
) -> Result<PanopticMap> {
    let mut index_of = Vec::with_capacity(annotations.len());
    let mut next: BTreeMap<u16, u16> = BTreeMap::new();
    for a in annotations {
        let slot = next.entry(a.class_id).or_insert(0);
        index_of.push(encode_panoptic_id(a.class_id, *slot)?);
        *slot += 1;
    }
    let (h, w) = labels.extent();
    let mut out = PanopticMap::filled_ignore(h, w);
    for (i, &c) in labels.data().iter().enumerate() {
        if c == IGNORE {
            continue;
        }
        if !classes.contains(c) {
            return Err(Error::UnknownClass(c));
        }
        if classes.is_stuff(c) {
            out.assign(i, c, 0)?;
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        let owner = annotations
            .iter()
            .enumerate()
            .filter(|(_, a)| a.class_id == c && a.bbox.contains(x, y))
            .min_by_key(|(k, a)| (a.bbox.area(), *k));
        if let Some((k, _)) = owner {
            out.raster_mut().set_at(i, index_of[k]);
        }
    }
    Ok(out)
}

/// One regeneration pass for a single image: predict, post-process, clamp.
pub fn refine_image(
    image: &RgbImage,
    annotations: &[BoxAnnotation],
    predictor: &dyn Predictor,
    classes: &ClassTable,
    cfg: &RefineConfig,
) -> Result<LabelMap> {
    let p = predictor.predict(image)?;
    let unary = p.map(|v| -(v as f64).max(PROB_FLOOR).ln());
    let q = run_meanfield(&unary, &cfg.pairwise, image, cfg.crf_iters, cfg.path)?;
    clamp_things_outside_boxes(&map_labeling(&q), annotations, classes, cfg.clamp)
}

/// Regenerates ground truth for every image with an already fitted predictor.
pub fn refine_round(
    images: &[RgbImage],
    annotations: &[Vec<BoxAnnotation>],
    predictor: &dyn Predictor,
    classes: &ClassTable,
    cfg: &RefineConfig,
) -> Result<Vec<LabelMap>> {
    if images.len() != annotations.len() {
        return Err(Error::InvalidConfig(format!(
            "{} images but {} annotation lists",
            images.len(),
            annotations.len()
        )));
    }
    images
        .par_iter()
        .zip(annotations.par_iter())
        .map(|(img, ann)| refine_image(img, ann, predictor, classes, cfg))
        .collect()
}

/// Inputs of the refinement loop.
#[derive(Debug, Clone)]
pub struct RefineDataset {
    pub images: Vec<RgbImage>,
    pub annotations: Vec<Vec<BoxAnnotation>>,
    /// Round-0 approximate ground truth.
    pub initial: Vec<LabelMap>,
    /// True panoptic maps, when known.
    pub truth: Option<Vec<PanopticMap>>,
}

impl RefineDataset {
    fn validate(&self) -> Result<()> {
        let n = self.images.len();
        let truth_ok = self.truth.as_ref().is_none_or(|t| t.len() == n);
        if self.annotations.len() != n || self.initial.len() != n || !truth_ok {
            return Err(Error::InvalidConfig(
                "dataset lists differ in length".into(),
            ));
        }
        if n == 0 {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub iou: f64,
    pub pq: f64,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    /// `snapshots[r]` is the ground truth after round `r`; index 0 is the input.
    pub snapshots: Vec<Vec<LabelMap>>,
    /// Present when the dataset carries true maps.
    pub metrics: Vec<RoundMetrics>,
}

/// Mean semantic IoU and PQ of semantic maps against true panoptic maps,
/// pooled over the set.
pub fn score_against_truth(
    labels: &[LabelMap],
    annotations: &[Vec<BoxAnnotation>],
    truth: &[PanopticMap],
    classes: &ClassTable,
) -> Result<(f64, f64)> {
    let parts: Vec<(IouAccumulator, PqAccumulator)> = labels
        .par_iter()
        .zip(annotations.par_iter())
        .zip(truth.par_iter())
        .map(|((lab, ann), gt)| {
            let mut iou = IouAccumulator::new();
            iou.add(lab, &gt.semantic())?;
            let pan = panoptic_from_boxes(lab, ann, classes)?;
            let mut pq = PqAccumulator::new();
            pq.add(&MatchResult::from_overlap(
                &SegmentOverlap::compute(&pan, gt)?,
                0.5,
            ));
            Ok((iou, pq))
        })
        .collect::<Result<_>>()?;
    let mut iou = IouAccumulator::new();
    let mut pq = PqAccumulator::new();
    for (i, p) in parts {
        iou.merge(&i);
        pq.merge(&p);
    }
    Ok((iou.report().mean, pq.report(Some(classes)).all.pq))
}

/// Alternates fitting and regeneration for `cfg.rounds` rounds.
pub fn run_refinement(
    data: &RefineDataset,
    classes: &ClassTable,
    cfg: &RefineConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    data.validate()?;
    let mut snapshots = vec![data.initial.clone()];
    let mut metrics = Vec::new();
    let mut record = |round: usize, labels: &[LabelMap]| -> Result<()> {
        if let Some(truth) = &data.truth {
            let (iou, pq) = score_against_truth(labels, &data.annotations, truth, classes)?;
            info!("round {round}: iou {iou:.4} pq {pq:.4}");
            metrics.push(RoundMetrics { round, iou, pq });
        }
        Ok(())
    };
    record(0, &data.initial)?;
    for round in 1..=cfg.rounds {
        let mut predictor = cfg.predictor.build(classes.len());
        predictor.fit(&data.images, snapshots.last().expect("initial snapshot"))?;
        let next = refine_round(
            &data.images,
            &data.annotations,
            predictor.as_ref(),
            classes,
            cfg,
        )?;
        record(round, &next)?;
        snapshots.push(next);
    }
    Ok(Refinement { snapshots, metrics })
}

/// Same predictor and post-processing, fitted on the true semantic labels.
pub fn full_supervision_baseline(
    data: &RefineDataset,
    classes: &ClassTable,
    cfg: &RefineConfig,
) -> Result<Vec<LabelMap>> {
    data.validate()?;
    let truth = data.truth.as_ref().ok_or(Error::MissingGroundTruth)?;
    let labels: Vec<LabelMap> = truth.iter().map(PanopticMap::semantic).collect();
    let mut predictor = cfg.predictor.build(classes.len());
    predictor.fit(&data.images, &labels)?;
    refine_round(
        &data.images,
        &data.annotations,
        predictor.as_ref(),
        classes,
        cfg,
    )
}

/// One entry of a loss matching: either side may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPair {
    pub pred: Option<u16>,
    pub gt: Option<u16>,
    pub iou: f64,
}

/// Maximum-total-IoU one-to-one pairing of same-class instances. Segments
/// without a positive-IoU partner are paired with `None`.
pub fn match_for_loss(pred: &PanopticMap, gt: &PanopticMap) -> Result<Vec<LossPair>> {
    let overlap = SegmentOverlap::compute(pred, gt)?;
    let mut out = Vec::new();
    for class in overlap.classes() {
        let preds = overlap.pred_ids_of_class(class);
        let gts = overlap.gt_ids_of_class(class);
        debug_assert!(preds
            .iter()
            .chain(&gts)
            .all(|&id| segment_class(id) == class));
        let weights: Vec<Vec<f64>> = preds
            .iter()
            .map(|&p| gts.iter().map(|&g| overlap.iou(p, g)).collect())
            .collect();
        let assignment = if gts.is_empty() {
            vec![None; preds.len()]
        } else {
            max_weight_assignment(&weights)
        };
        let mut gt_used = vec![false; gts.len()];
        for (pi, gi) in assignment.into_iter().enumerate() {
            match gi.filter(|&gi| weights[pi][gi] > 0.0) {
                Some(gi) => {
                    gt_used[gi] = true;
                    out.push(LossPair {
                        pred: Some(preds[pi]),
                        gt: Some(gts[gi]),
                        iou: weights[pi][gi],
                    });
                }
                None => out.push(LossPair {
                    pred: Some(preds[pi]),
                    gt: None,
                    iou: 0.0,
                }),
            }
        }
        for (gi, &g) in gts.iter().enumerate() {
            if !gt_used[gi] {
                out.push(LossPair {
                    pred: None,
                    gt: Some(g),
                    iou: 0.0,
                });
            }
        }
    }
    Ok(out)
}
