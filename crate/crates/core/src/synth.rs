//! Synthetic street-like scenes with exact ground truth, weak annotations
//! and localisation heatmaps.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxgt::{BoundingBox, BoxAnnotation};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ChannelGrid};
use crate::instcrf::Detection;
use crate::io::{
    write_annotations, write_detections, write_label_png, write_ptf, write_rgb_png, write_tags,
};
use crate::label::{encode_panoptic_id, ClassEntry, ClassKind, ClassTable, PanopticMap, Raster16};

pub const ROAD: u16 = 0;
pub const SKY: u16 = 1;
pub const BUILDING: u16 = 2;
pub const CAR: u16 = 3;
pub const PERSON: u16 = 4;

/// The five-class table used by every synthetic scene.
pub fn synth_classes() -> ClassTable {
    let e = |id, name: &str, kind, color| ClassEntry {
        id,
        name: name.into(),
        kind,
        color,
    };
    ClassTable::new(vec![
        e(ROAD, "road", ClassKind::Stuff, [100, 100, 100]),
        e(SKY, "sky", ClassKind::Stuff, [110, 170, 235]),
        e(BUILDING, "building", ClassKind::Stuff, [150, 95, 60]),
        e(CAR, "car", ClassKind::Thing, [225, 35, 35]),
        e(PERSON, "person", ClassKind::Thing, [45, 190, 70]),
    ])
    .expect("static class table")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub images: usize,
    pub height: u32,
    pub width: u32,
    /// Per-channel pixel noise, 8-bit units.
    pub noise_sigma: f64,
    /// Per-instance colour offset range, 8-bit units.
    pub color_jitter: i32,
    pub max_things: usize,
    /// Instances with fewer visible pixels are dropped.
    pub min_instance_area: usize,
    /// Heatmap blur, pixels.
    pub heatmap_sigma: f64,
    /// Chance of one spurious detection per image.
    pub false_detection_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: 8,
            height: 64,
            width: 64,
            noise_sigma: 10.0,
            color_jitter: 10,
            max_things: 4,
            min_instance_area: 20,
            heatmap_sigma: 3.0,
            false_detection_rate: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0 {
            return Err(Error::InvalidConfig(
                "synth needs at least one image".into(),
            ));
        }
        if self.height < 32 || self.width < 32 {
            return Err(Error::InvalidConfig(
                "synth extent must be at least 32x32".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.heatmap_sigma > 0.0) {
            return Err(Error::InvalidConfig(
                "noise and blur must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.false_detection_rate) {
            return Err(Error::InvalidConfig(
                "false_detection_rate outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One generated scene.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub image: RgbImage,
    pub truth: PanopticMap,
    /// Tight boxes of the visible thing instances, in instance order.
    pub boxes: Vec<BoxAnnotation>,
    /// Stuff classes present, ascending.
    pub tags: Vec<u16>,
    /// One channel per tag.
    pub heatmaps: ChannelGrid<f32>,
    pub detections: Vec<Detection>,
}

fn color_of(classes: &ClassTable, c: u16) -> [i32; 3] {
    let e = classes.get(c).expect("synth class");
    [e.color[0] as i32, e.color[1] as i32, e.color[2] as i32]
}

/// Separable Gaussian blur of a mask, zero padded.
fn blur(mask: &BinaryMask, sigma: f64) -> Vec<f32> {
    let (h, w) = mask.extent();
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let src: Vec<f64> = mask.data().iter().map(|&b| b as u8 as f64).collect();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut a = 0.0;
            for (t, d) in taps.iter().zip(-r..=r) {
                let xx = x as isize + d;
                if (0..w as isize).contains(&xx) {
                    a += t * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = a / norm;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut a = 0.0;
            for (t, d) in taps.iter().zip(-r..=r) {
                let yy = y as isize + d;
                if (0..h as isize).contains(&yy) {
                    a += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = (a / norm) as f32;
        }
    }
    out
}

/// Blurred, scaled mask whose maximum lies inside the mask.
fn heatmap_for(mask: &BinaryMask, sigma: f64, scale: f32) -> Vec<f32> {
    let mut h = blur(mask, sigma);
    for (v, &m) in h.iter_mut().zip(mask.data()) {
        if !m {
            *v *= 0.5;
        }
    }
    let max_in = h
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(0.0f32, f32::max);
    let max_out = h
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| !m)
        .map(|(v, _)| *v)
        .fold(0.0f32, f32::max);
    if max_out >= max_in && max_out > 0.0 {
        let f = 0.9 * max_in / max_out;
        for (v, &m) in h.iter_mut().zip(mask.data()) {
            if !m {
                *v *= f;
            }
        }
    }
    let peak = h
        .iter()
        .copied()
        .fold(0.0f32, f32::max)
        .max(f32::MIN_POSITIVE);
    h.iter().map(|v| v / peak * scale).collect()
}

/// Generates one scene from `rng`.
pub fn synth_scene(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let classes = synth_classes();
    let (h, w) = (cfg.height as usize, cfg.width as usize);
    let mut class_of = vec![ROAD; h * w];
    // instance slot per pixel for things, -1 elsewhere
    let mut inst_of = vec![-1i32; h * w];

    // road below a horizon line, skyline of building blocks above it
    let road_top = rng.random_range(h * 6 / 10..h * 3 / 4);
    let segments = rng.random_range(2..=4);
    let mut cuts: Vec<usize> = (0..segments - 1)
        .map(|_| rng.random_range(4..w - 4))
        .collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(w);
    for s in 0..segments {
        let top = rng.random_range(h / 8..road_top.saturating_sub(6).max(h / 8 + 1));
        for y in 0..road_top {
            for x in cuts[s]..cuts[s + 1] {
                class_of[y * w + x] = if y < top { SKY } else { BUILDING };
            }
        }
    }

    let stuff = class_of.clone();
    let n_things = rng.random_range(1..=cfg.max_things.max(1));
    let mut thing_class = Vec::with_capacity(n_things);
    for k in 0..n_things {
        let (c, bw, bh) = if rng.random_bool(0.5) {
            (
                CAR,
                rng.random_range(w / 6..w / 3),
                rng.random_range(h / 10..h / 6),
            )
        } else {
            (
                PERSON,
                rng.random_range(w / 10..w / 6),
                rng.random_range(h / 5..h / 3),
            )
        };
        let bottom = rng.random_range(road_top.min(h - 1)..h);
        let y0 = bottom.saturating_sub(bh);
        let x0 = rng.random_range(0..w - bw);
        for y in y0..=bottom {
            for x in x0..x0 + bw {
                let (fy, fx) = ((y - y0) as f64, (x - x0) as f64);
                let inside = if c == CAR {
                    // cut the two upper corners
                    let corner = (bh as f64 / 3.0).max(1.0);
                    !(fy < corner && (fx < corner - fy || fx > bw as f64 - 1.0 - (corner - fy)))
                } else {
                    let (cy, cx) = ((bottom - y0) as f64 / 2.0, (bw as f64 - 1.0) / 2.0);
                    let (ry, rx) = (cy.max(0.5) + 0.5, cx.max(0.5) + 0.5);
                    ((fy - cy) / ry).powi(2) + ((fx - cx) / rx).powi(2) <= 1.0
                };
                if inside {
                    class_of[y * w + x] = c;
                    inst_of[y * w + x] = k as i32;
                }
            }
        }
        thing_class.push(c);
    }

    // drop instances that ended up too small after occlusion
    let mut area = vec![0usize; n_things];
    for &k in &inst_of {
        if k >= 0 {
            area[k as usize] += 1;
        }
    }
    for i in 0..h * w {
        let k = inst_of[i];
        if k >= 0 && area[k as usize] < cfg.min_instance_area {
            inst_of[i] = -1;
            class_of[i] = stuff[i];
        }
    }

    // number the surviving instances per class in generation order
    let mut next = [0u16; 5];
    let mut panoptic_id = vec![None; n_things];
    for k in 0..n_things {
        if area[k] >= cfg.min_instance_area {
            let c = thing_class[k];
            panoptic_id[k] = Some(encode_panoptic_id(c, next[c as usize])?);
            next[c as usize] += 1;
        }
    }
    let mut raster = Raster16::filled(h, w, 0);
    for i in 0..h * w {
        let id = match inst_of[i] {
            k if k >= 0 => panoptic_id[k as usize].expect("surviving instance"),
            _ => encode_panoptic_id(class_of[i], 0)?,
        };
        raster.set_at(i, id);
    }
    let truth = PanopticMap::new(raster)?;

    let mut boxes = Vec::new();
    let mut detections = Vec::new();
    for k in 0..n_things {
        if let Some(id) = panoptic_id[k] {
            let mask = truth.raster().mask_of(id);
            let bbox = BoundingBox::enclosing(&mask).expect("non-empty instance");
            boxes.push(BoxAnnotation {
                class_id: thing_class[k],
                bbox,
            });
            detections.push(Detection::new(
                thing_class[k],
                rng.random_range(0.3f32..1.0),
                bbox,
            )?);
        }
    }
    if rng.random_bool(cfg.false_detection_rate) {
        let c = if rng.random_bool(0.5) { CAR } else { PERSON };
        let (bw, bh) = (
            rng.random_range(4..w / 4) as u32,
            rng.random_range(4..h / 4) as u32,
        );
        let x0 = rng.random_range(0..cfg.width - bw);
        let y0 = rng.random_range(0..cfg.height - bh);
        detections.push(Detection::new(
            c,
            rng.random_range(0.3f32..1.0),
            BoundingBox::new(x0, y0, x0 + bw, y0 + bh),
        )?);
    }

    let semantic = truth.semantic();
    let tags: Vec<u16> = [ROAD, SKY, BUILDING]
        .into_iter()
        .filter(|&c| semantic.data().contains(&c))
        .collect();
    let mut heat = Vec::with_capacity(h * w * tags.len());
    let per_tag: Vec<Vec<f32>> = tags
        .iter()
        .map(|&c| {
            heatmap_for(
                &semantic.mask_of(c),
                cfg.heatmap_sigma,
                rng.random_range(0.5f32..1.0),
            )
        })
        .collect();
    for i in 0..h * w {
        heat.extend(per_tag.iter().map(|m| m[i]));
    }
    let heatmaps = ChannelGrid::from_vec(h, w, tags.len(), heat)?;

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut offsets = vec![[0i32; 3]; n_things];
    for o in offsets.iter_mut() {
        for v in o.iter_mut() {
            *v = rng.random_range(-cfg.color_jitter..=cfg.color_jitter);
        }
    }
    let mut image = RgbImage::new(cfg.width, cfg.height);
    for (i, px) in image.pixels_mut().enumerate() {
        let base = color_of(&classes, class_of[i]);
        let off = if inst_of[i] >= 0 {
            offsets[inst_of[i] as usize]
        } else {
            [0; 3]
        };
        let mut c = [0u8; 3];
        for ch in 0..3 {
            let n = if cfg.noise_sigma > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            c[ch] = (base[ch] as f64 + off[ch] as f64 + n)
                .round()
                .clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(c);
    }

    Ok(SynthScene {
        image,
        truth,
        boxes,
        tags,
        heatmaps,
        detections,
    })
}

/// Scene `i` uses stream `i` of a ChaCha8 generator seeded with `seed`.
pub fn synth_dataset(seed: u64, cfg: &SynthConfig) -> Result<Vec<SynthScene>> {
    cfg.validate()?;
    (0..cfg.images)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synth_scene(&mut rng, cfg)
        })
        .collect()
}

/// File stem of scene `i`.
pub fn scene_name(i: usize) -> String {
    format!("{i:04}")
}

/// Writes `images/`, `truth/`, `boxes/`, `tags/`, `heatmaps/`, `detections/`
/// and `classes.json` under `dir`.
pub fn write_dataset(dir: &Path, scenes: &[SynthScene]) -> Result<()> {
    for sub in ["images", "truth", "boxes", "tags", "heatmaps", "detections"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    synth_classes().save(&dir.join("classes.json"))?;
    scenes.par_iter().enumerate().try_for_each(|(i, s)| {
        let name = scene_name(i);
        write_rgb_png(&s.image, &dir.join("images").join(format!("{name}.png")))?;
        write_label_png(
            s.truth.raster(),
            &dir.join("truth").join(format!("{name}.png")),
        )?;
        write_annotations(&s.boxes, &dir.join("boxes").join(format!("{name}.json")))?;
        write_tags(&s.tags, &dir.join("tags").join(format!("{name}.json")))?;
        write_ptf(
            &s.heatmaps,
            &dir.join("heatmaps").join(format!("{name}.ptf")),
        )?;
        write_detections(
            &s.detections,
            &dir.join("detections").join(format!("{name}.json")),
        )
    })
}
