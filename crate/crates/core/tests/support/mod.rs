//! Scene generators and brute-force metric oracles shared by integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use wspan::label::{ClassEntry, ClassKind};
use wspan::{ClassTable, LabelMap, PanopticMap, IGNORE};

pub const SKY: u16 = 0;
pub const ROAD: u16 = 1;
pub const CAR: u16 = 2;
pub const PERSON: u16 = 3;

pub fn small_classes() -> ClassTable {
    let e = |id, kind| ClassEntry {
        id,
        name: format!("c{id}"),
        kind,
        color: [id as u8 * 60, 255 - id as u8 * 60, 128],
    };
    ClassTable::new(vec![
        e(SKY, ClassKind::Stuff),
        e(ROAD, ClassKind::Stuff),
        e(CAR, ClassKind::Thing),
        e(PERSON, ClassKind::Thing),
    ])
    .unwrap()
}

/// Background plus three thing classes, as in VOC.
pub fn voc_classes() -> ClassTable {
    let e = |id, kind| ClassEntry {
        id,
        name: format!("v{id}"),
        kind,
        color: [id as u8 * 60, 0, 0],
    };
    ClassTable::new(vec![
        e(0, ClassKind::Stuff),
        e(1, ClassKind::Thing),
        e(2, ClassKind::Thing),
        e(3, ClassKind::Thing),
    ])
    .unwrap()
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

fn random_rect<R: Rng>(rng: &mut R, h: usize, w: usize) -> Rect {
    let x0 = rng.random_range(0..w);
    let y0 = rng.random_range(0..h);
    Rect {
        x0,
        y0,
        x1: rng.random_range(x0 + 1..=w),
        y1: rng.random_range(y0 + 1..=h),
    }
}

fn jitter<R: Rng>(rng: &mut R, r: Rect, h: usize, w: usize) -> Rect {
    let mv = |rng: &mut R, v: usize, lo: usize, hi: usize| {
        (v as i64 + rng.random_range(-1..=1)).clamp(lo as i64, hi as i64) as usize
    };
    let x0 = mv(rng, r.x0, 0, w - 1);
    let y0 = mv(rng, r.y0, 0, h - 1);
    Rect {
        x0,
        y0,
        x1: mv(rng, r.x1, x0 + 1, w),
        y1: mv(rng, r.y1, y0 + 1, h),
    }
}

fn paint(data: &mut [u16], w: usize, r: Rect, v: u16) {
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            data[y * w + x] = v;
        }
    }
}

fn panoptic(h: usize, w: usize, data: Vec<u16>) -> PanopticMap {
    PanopticMap::new(LabelMap::from_vec(h, w, data).unwrap()).unwrap()
}

/// Ground truth and a perturbed prediction over [`small_classes`], at most
/// six instances per thing class, with some IGNORE pixels on both sides.
pub fn random_scene<R: Rng>(rng: &mut R) -> (PanopticMap, PanopticMap) {
    let h = rng.random_range(4..=12);
    let w = rng.random_range(4..=12);
    let horizon_gt = rng.random_range(0..=h);
    let horizon_pred = (horizon_gt as i64 + rng.random_range(-2..=2)).clamp(0, h as i64) as usize;
    let stuff = |horizon: usize| -> Vec<u16> {
        (0..h * w)
            .map(|i| {
                if i / w < horizon {
                    SKY * 1000
                } else {
                    ROAD * 1000
                }
            })
            .collect()
    };
    let mut gt = stuff(horizon_gt);
    let mut pred = stuff(horizon_pred);
    for class in [CAR, PERSON] {
        let n = rng.random_range(0..=6);
        let mut ids: Vec<u16> = (0..6).collect();
        ids.shuffle(rng);
        for k in 0..n {
            let r = random_rect(rng, h, w);
            paint(&mut gt, w, r, class * 1000 + k as u16);
            if rng.random_bool(0.8) {
                let r = if rng.random_bool(0.8) {
                    jitter(rng, r, h, w)
                } else {
                    random_rect(rng, h, w)
                };
                paint(&mut pred, w, r, class * 1000 + ids[k]);
            }
        }
        // extra predictions
        for k in n..6 {
            if rng.random_bool(0.15) {
                let r = random_rect(rng, h, w);
                paint(&mut pred, w, r, class * 1000 + ids[k]);
            }
        }
    }
    for v in gt.iter_mut() {
        if rng.random_bool(0.05) {
            *v = IGNORE;
        }
    }
    for v in pred.iter_mut() {
        if rng.random_bool(0.05) {
            *v = IGNORE;
        }
    }
    (panoptic(h, w, pred), panoptic(h, w, gt))
}

/// Pixel sets per segment id over the non-IGNORE ground-truth pixels.
pub struct Segments {
    pub pred: BTreeMap<u16, BTreeSet<usize>>,
    pub gt: BTreeMap<u16, BTreeSet<usize>>,
}

impl Segments {
    pub fn new(pred: &PanopticMap, gt: &PanopticMap) -> Self {
        let mut s = Segments {
            pred: BTreeMap::new(),
            gt: BTreeMap::new(),
        };
        for i in 0..gt.data().len() {
            let (p, g) = (pred.at(i), gt.at(i));
            if g == IGNORE {
                continue;
            }
            s.gt.entry(g).or_default().insert(i);
            if p != IGNORE {
                s.pred.entry(p).or_default().insert(i);
            }
        }
        s
    }

    pub fn iou(&self, p: u16, g: u16) -> f64 {
        if p / 1000 != g / 1000 {
            return 0.0;
        }
        let (a, b) = (&self.pred[&p], &self.gt[&g]);
        let inter = a.intersection(b).count();
        let union = a.union(b).count();
        inter as f64 / union as f64
    }

    pub fn classes(&self) -> BTreeSet<u16> {
        self.pred
            .keys()
            .chain(self.gt.keys())
            .map(|&id| id / 1000)
            .collect()
    }

    fn of_class(map: &BTreeMap<u16, BTreeSet<usize>>, c: u16) -> Vec<u16> {
        map.keys().copied().filter(|&id| id / 1000 == c).collect()
    }
}

/// Best one-to-one matching by exhaustive search: most pairs above `t`,
/// then largest IoU sum. Returns the matched IoUs.
fn exhaustive_matching(seg: &Segments, preds: &[u16], gts: &[u16], t: f64) -> Vec<f64> {
    fn go(
        seg: &Segments,
        preds: &[u16],
        gts: &[u16],
        used: &mut Vec<bool>,
        t: f64,
        cur: &mut Vec<f64>,
        best: &mut Vec<f64>,
    ) {
        let Some((&p, rest)) = preds.split_first() else {
            let better = cur.len() > best.len()
                || (cur.len() == best.len() && cur.iter().sum::<f64>() > best.iter().sum::<f64>());
            if better {
                *best = cur.clone();
            }
            return;
        };
        go(seg, rest, gts, used, t, cur, best);
        for (gi, &g) in gts.iter().enumerate() {
            let iou = seg.iou(p, g);
            if !used[gi] && iou > t {
                used[gi] = true;
                cur.push(iou);
                go(seg, rest, gts, used, t, cur, best);
                cur.pop();
                used[gi] = false;
            }
        }
    }
    let mut best = Vec::new();
    go(
        seg,
        preds,
        gts,
        &mut vec![false; gts.len()],
        t,
        &mut Vec::new(),
        &mut best,
    );
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePq {
    pub pq: f64,
    pub sq: f64,
    pub dq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn oracle_pq(pred: &PanopticMap, gt: &PanopticMap) -> BTreeMap<u16, OraclePq> {
    let seg = Segments::new(pred, gt);
    seg.classes()
        .into_iter()
        .map(|c| {
            let preds = Segments::of_class(&seg.pred, c);
            let gts = Segments::of_class(&seg.gt, c);
            let m = exhaustive_matching(&seg, &preds, &gts, 0.5);
            let tp = m.len();
            let fp = preds.len() - tp;
            let fn_ = gts.len() - tp;
            let sum: f64 = m.iter().sum();
            let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
            let sq = if tp > 0 { sum / tp as f64 } else { 0.0 };
            let dq = tp as f64 / denom;
            (
                c,
                OraclePq {
                    pq: sum / denom,
                    sq,
                    dq,
                    tp,
                    fp,
                    fn_,
                },
            )
        })
        .collect()
}

/// AP per class with ground truth, from an explicit precision/recall table:
/// the area under `p_interp(r) = max_{r' ≥ r} p(r')`.
pub fn oracle_ap(
    pred: &PanopticMap,
    gt: &PanopticMap,
    scores: &BTreeMap<u16, f64>,
    t: f64,
) -> BTreeMap<u16, f64> {
    let seg = Segments::new(pred, gt);
    let mut out = BTreeMap::new();
    for c in seg.classes() {
        let gts = Segments::of_class(&seg.gt, c);
        if gts.is_empty() {
            continue;
        }
        let mut preds = Segments::of_class(&seg.pred, c);
        let score = |p: &u16| scores.get(p).copied().unwrap_or(0.0);
        preds.sort_by(|a, b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(b)));
        let mut taken = vec![false; gts.len()];
        let mut tp = 0usize;
        let mut pr: Vec<(f64, f64)> = Vec::new();
        for (k, p) in preds.iter().enumerate() {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(gi, _)| !taken[*gi])
                .map(|(gi, &g)| (gi, seg.iou(*p, g)))
                .filter(|&(_, iou)| iou > t)
                .fold(None, |acc: Option<(usize, f64)>, (gi, iou)| match acc {
                    Some((_, b)) if b >= iou => acc,
                    _ => Some((gi, iou)),
                });
            if let Some((gi, _)) = best {
                taken[gi] = true;
                tp += 1;
            }
            pr.push((tp as f64 / (k + 1) as f64, tp as f64 / gts.len() as f64));
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for k in 0..pr.len() {
            let recall = pr[k].1;
            if recall > prev_recall {
                let p_interp = pr[k..].iter().map(|&(p, _)| p).fold(0.0, f64::max);
                ap += (recall - prev_recall) * p_interp;
                prev_recall = recall;
            }
        }
        out.insert(c, ap);
    }
    out
}

/// Random scores quantised to tenths so that ties occur.
pub fn random_scores<R: Rng>(rng: &mut R, pred: &PanopticMap) -> BTreeMap<u16, f64> {
    let ids: BTreeSet<u16> = pred
        .data()
        .iter()
        .copied()
        .filter(|&v| v != IGNORE)
        .collect();
    ids.into_iter()
        .map(|id| (id, rng.random_range(0..=10) as f64 / 10.0))
        .collect()
}
