//! Approximate ground truth from bounding boxes: a pixel takes the box's
//! class only where GrabCut and the best-matching segment proposal agree.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grabcut::{grabcut, GrabCutConfig};
use crate::grid::BinaryMask;
use crate::label::{encode_panoptic_id, ClassTable, FillMode, LabelMap, PanopticMap, IGNORE};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_array(a: [u32; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::InvalidBox(self.to_array(), width, height))
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn covers(&self, width: u32, height: u32) -> bool {
        self.x0 == 0 && self.y0 == 0 && self.x1 >= width && self.y1 >= height
    }

    pub fn to_mask(&self, height: usize, width: usize) -> BinaryMask {
        BinaryMask::from_fn(height, width, |y, x| self.contains(x as u32, y as u32))
    }

    /// Tight box around the set pixels of `mask`, if any.
    pub fn enclosing(mask: &BinaryMask) -> Option<Self> {
        let mut b: Option<Self> = None;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(y, x) {
                    let (x, y) = (x as u32, y as u32);
                    b = Some(match b {
                        None => Self::new(x, y, x + 1, y + 1),
                        Some(b) => {
                            Self::new(b.x0.min(x), b.y0.min(y), b.x1.max(x + 1), b.y1.max(y + 1))
                        }
                    });
                }
            }
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub class_id: u16,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Index of the proposal with the highest IoU against the box; ties go to the lowest index.
pub fn select_proposal(proposals: &[BinaryMask], bbox: &BoundingBox) -> Result<usize> {
    let first = proposals.first().ok_or(Error::EmptyProposalSet)?;
    let box_mask = bbox.to_mask(first.height(), first.width());
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in proposals.iter().enumerate() {
        if p.extent() != box_mask.extent() {
            return Err(Error::extent(p.extent(), box_mask.extent()));
        }
        let iou = p.iou(&box_mask);
        if iou > best.1 {
            best = (i, iou);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxGtConfig {
    pub grabcut: GrabCutConfig,
    pub unclaimed: FillMode,
}

/// Fabricated labels for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGt {
    pub semantic: LabelMap,
    pub instances: PanopticMap,
    /// Pixels inside at least one agreement mask, including contested ones.
    pub claimed: BinaryMask,
    /// GrabCut ∩ selected proposal, per annotation.
    pub agreements: Vec<BinaryMask>,
}

/// Builds semantic and instance approximate ground truth for one image.
///
/// `proposals[a]` is the candidate list for annotation `a`.
pub fn fabricate_box_gt(
    image: &RgbImage,
    annotations: &[BoxAnnotation],
    proposals: &[&[BinaryMask]],
    classes: &ClassTable,
    cfg: &BoxGtConfig,
) -> Result<BoxGt> {
    if proposals.len() != annotations.len() {
        return Err(Error::InvalidConfig(format!(
            "{} proposal lists for {} annotations",
            proposals.len(),
            annotations.len()
        )));
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let background = match cfg.unclaimed {
        FillMode::Ignore => None,
        FillMode::VocBackground => Some(classes.background().ok_or_else(|| {
            Error::InvalidConfig("voc-background mode needs exactly one stuff class".into())
        })?),
    };
    for a in annotations {
        a.bbox.validate(w as u32, h as u32)?;
        if !classes.contains(a.class_id) {
            return Err(Error::UnknownClass(a.class_id));
        }
        if !classes.is_thing(a.class_id) {
            return Err(Error::InvalidConfig(format!(
                "box annotation of non-thing class {}",
                a.class_id
            )));
        }
    }

    let mut agreements = Vec::with_capacity(annotations.len());
    for (a, props) in annotations.iter().zip(proposals) {
        let fg = grabcut(image, &a.bbox, &cfg.grabcut)?;
        let chosen = &props[select_proposal(props, &a.bbox)?];
        if chosen.extent() != fg.extent() {
            return Err(Error::extent(chosen.extent(), fg.extent()));
        }
        agreements.push(fg.intersection(chosen));
    }

    // instance index of each annotation within its class, in annotation order
    let mut next_index = vec![0u16; classes.len()];
    let mut instance_of = Vec::with_capacity(annotations.len());
    for a in annotations {
        let slot = &mut next_index[a.class_id as usize];
        instance_of.push(encode_panoptic_id(a.class_id, *slot)?);
        *slot += 1;
    }

    let mut semantic = LabelMap::filled(h, w, IGNORE);
    let mut instances = PanopticMap::filled_ignore(h, w);
    let mut claimed = BinaryMask::new(h, w);
    let background_id = background.map(|b| encode_panoptic_id(b, 0)).transpose()?;
    for i in 0..w * h {
        let mut claim_class: Option<u16> = None;
        let mut claim_count = 0usize;
        let mut conflict = false;
        let mut owner = 0usize;
        for (k, (a, m)) in annotations.iter().zip(&agreements).enumerate() {
            if m.at(i) {
                match claim_class {
                    None => claim_class = Some(a.class_id),
                    Some(c) if c != a.class_id => conflict = true,
                    _ => {}
                }
                claim_count += 1;
                owner = k;
            }
        }
        match claim_class {
            None => {
                if let (Some(b), Some(id)) = (background, background_id) {
                    semantic.set_at(i, b);
                    instances.raster_mut().set_at(i, id);
                }
            }
            Some(_) if conflict => claimed.set_at(i, true),
            Some(c) => {
                claimed.set_at(i, true);
                semantic.set_at(i, c);
                if claim_count == 1 {
                    instances.raster_mut().set_at(i, instance_of[owner]);
                }
            }
        }
    }
    Ok(BoxGt {
        semantic,
        instances,
        claimed,
        agreements,
    })
}
