//! Box-seeded GrabCut: alternate GMM colour-model fitting and graph cuts.

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxgt::BoundingBox;
use crate::error::{Error, Result};
use crate::gmm::{kmeans_assign, Color, GmmColorModel};
use crate::grid::BinaryMask;
use crate::maxflow::{mincut_maxflow, GridGraph, NLink};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrabCutConfig {
    /// Mixture components per side.
    pub components: usize,
    pub iterations: usize,
    /// Pairwise smoothness weight.
    pub gamma: f64,
    pub regularization: f64,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for GrabCutConfig {
    fn default() -> Self {
        Self {
            components: 5,
            iterations: 5,
            gamma: 50.0,
            regularization: 1e-6,
            kmeans_iterations: 10,
            seed: 0,
        }
    }
}

const NEIGHBOURS: [(isize, isize, f64); 4] = [
    (0, 1, 1.0),
    (1, 0, 1.0),
    (1, 1, std::f64::consts::SQRT_2),
    (1, -1, std::f64::consts::SQRT_2),
];

/// Foreground mask inside `bbox`. Pixels outside the box are fixed background.
pub fn grabcut(image: &RgbImage, bbox: &BoundingBox, cfg: &GrabCutConfig) -> Result<BinaryMask> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    bbox.validate(w as u32, h as u32)?;
    if bbox.covers(w as u32, h as u32) {
        return Err(Error::DegenerateBox);
    }
    let colors: Vec<Color> = image
        .pixels()
        .map(|p| {
            [
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ]
        })
        .collect();
    let beta = contrast_beta(&colors, w, h);

    let mut fg: Vec<bool> = (0..w * h)
        .map(|i| bbox.contains((i % w) as u32, (i / w) as u32))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (fg_samples, bg_samples) = split(&colors, &fg);
    let k = cfg.components.max(1);
    let mut fg_gmm = GmmColorModel::fit(
        &fg_samples,
        &kmeans_assign(&fg_samples, k, cfg.kmeans_iterations, &mut rng),
        k,
        cfg.regularization,
    );
    let mut bg_gmm = GmmColorModel::fit(
        &bg_samples,
        &kmeans_assign(&bg_samples, k, cfg.kmeans_iterations, &mut rng),
        k,
        cfg.regularization,
    );

    // box-local grid; neighbours outside the box are background constants
    let (bx0, by0) = (bbox.x0 as usize, bbox.y0 as usize);
    let (bw, bh) = (bbox.width() as usize, bbox.height() as usize);
    let mut base = GridGraph::<f64>::new(bh, bw);
    let mut boundary = vec![0.0; bw * bh];
    for y in 0..h {
        for x in 0..w {
            for &(dy, dx, dist) in &NEIGHBOURS {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                let (a, b) = (y * w + x, ny * w + nx);
                let in_a = bbox.contains(x as u32, y as u32);
                let in_b = bbox.contains(nx as u32, ny as u32);
                if !in_a && !in_b {
                    continue;
                }
                let weight = cfg.gamma / dist * (-beta * dist2(&colors[a], &colors[b])).exp();
                let local = |yy: usize, xx: usize| (yy - by0) * bw + (xx - bx0);
                match (in_a, in_b) {
                    (true, true) => base.nlinks.push(NLink {
                        a: local(y, x),
                        b: local(ny, nx),
                        capacity: weight,
                    }),
                    (true, false) => boundary[local(y, x)] += weight,
                    (false, true) => boundary[local(ny, nx)] += weight,
                    (false, false) => unreachable!(),
                }
            }
        }
    }

    for _ in 0..cfg.iterations {
        // assign components, refit both models
        let (fg_samples, bg_samples) = split(&colors, &fg);
        if fg_samples.is_empty() {
            break;
        }
        let fa: Vec<usize> = fg_samples.iter().map(|c| fg_gmm.most_likely(c)).collect();
        let ba: Vec<usize> = bg_samples.iter().map(|c| bg_gmm.most_likely(c)).collect();
        fg_gmm = GmmColorModel::fit(&fg_samples, &fa, fg_gmm.len(), cfg.regularization);
        bg_gmm = GmmColorModel::fit(&bg_samples, &ba, bg_gmm.len(), cfg.regularization);

        let mut graph = base.clone();
        for ly in 0..bh {
            for lx in 0..bw {
                let li = ly * bw + lx;
                let c = &colors[(ly + by0) * w + lx + bx0];
                let cost_bg = bg_gmm.neg_log_likelihood(c);
                let cost_fg = fg_gmm.neg_log_likelihood(c) + boundary[li];
                let floor = cost_bg.min(cost_fg);
                graph.source_caps[li] = cost_bg - floor;
                graph.sink_caps[li] = cost_fg - floor;
            }
        }
        let cut = mincut_maxflow(&graph);
        let mut changed = false;
        for ly in 0..bh {
            for lx in 0..bw {
                let i = (ly + by0) * w + lx + bx0;
                let v = cut.foreground.at(ly * bw + lx);
                changed |= fg[i] != v;
                fg[i] = v;
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask::from_vec(h, w, fg)
}

fn split(colors: &[Color], fg: &[bool]) -> (Vec<Color>, Vec<Color>) {
    let mut f = Vec::new();
    let mut b = Vec::new();
    for (c, &is_fg) in colors.iter().zip(fg) {
        if is_fg {
            f.push(*c);
        } else {
            b.push(*c);
        }
    }
    (f, b)
}

fn dist2(a: &Color, b: &Color) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// `1 / (2 · mean ‖z_i − z_j‖²)` over 8-connected pairs; 0 for a flat image.
fn contrast_beta(colors: &[Color], w: usize, h: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            for &(dy, dx, _) in &NEIGHBOURS {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                sum += dist2(&colors[y * w + x], &colors[ny as usize * w + nx as usize]);
                n += 1;
            }
        }
    }
    if n == 0 || sum <= f64::EPSILON {
        0.0
    } else {
        1.0 / (2.0 * sum / n as f64)
    }
}
