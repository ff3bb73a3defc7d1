//! Segment proposals from graph-based colour segmentation at several granularities.

use std::collections::HashSet;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::grid::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalParams {
    /// Merge thresholds `k`; larger values give coarser segments.
    pub scales: Vec<f64>,
    /// Components smaller than this are merged into a neighbour.
    pub min_size: usize,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            scales: vec![100.0, 300.0, 1000.0],
            min_size: 20,
        }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize, weight: f64) {
        let (a, b) = if self.size[a] >= self.size[b] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[b] = a;
        self.size[a] += self.size[b];
        self.internal[a] = weight;
    }
}

/// Connected-region masks, finest scale first, duplicates removed. Within a
/// scale, regions are ordered by their first pixel in raster order.
pub fn generate_proposals(image: &RgbImage, params: &ProposalParams) -> Vec<BinaryMask> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let edges = color_edges(image);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &k in &params.scales {
        for mask in segment(&edges, w, h, k, params.min_size) {
            if seen.insert(mask.clone()) {
                out.push(mask);
            }
        }
    }
    out
}

fn color_edges(image: &RgbImage) -> Vec<(f64, usize, usize)> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let px: Vec<[f64; 3]> = image
        .pixels()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let mut edges = Vec::with_capacity(4 * w * h);
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            let mut push = |b: usize| {
                let d = (0..3)
                    .map(|c| (px[a][c] - px[b][c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                edges.push((d, a, b));
            };
            if x + 1 < w {
                push(a + 1);
            }
            if y + 1 < h {
                push(a + w);
                if x + 1 < w {
                    push(a + w + 1);
                }
                if x > 0 {
                    push(a + w - 1);
                }
            }
        }
    }
    edges.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    edges
}

fn segment(
    edges: &[(f64, usize, usize)],
    w: usize,
    h: usize,
    k: f64,
    min_size: usize,
) -> Vec<BinaryMask> {
    let n = w * h;
    let mut sets = DisjointSet::new(n);
    for &(weight, a, b) in edges {
        let (ra, rb) = (sets.find(a), sets.find(b));
        if ra == rb {
            continue;
        }
        let ta = sets.internal[ra] + k / sets.size[ra] as f64;
        let tb = sets.internal[rb] + k / sets.size[rb] as f64;
        if weight <= ta.min(tb) {
            sets.union(ra, rb, weight);
        }
    }
    for &(weight, a, b) in edges {
        let (ra, rb) = (sets.find(a), sets.find(b));
        if ra != rb && (sets.size[ra] < min_size || sets.size[rb] < min_size) {
            sets.union(ra, rb, weight);
        }
    }

    let mut index_of_root = vec![usize::MAX; n];
    let mut masks: Vec<Vec<bool>> = Vec::new();
    for i in 0..n {
        let r = sets.find(i);
        if index_of_root[r] == usize::MAX {
            index_of_root[r] = masks.len();
            masks.push(vec![false; n]);
        }
        masks[index_of_root[r]][i] = true;
    }
    masks
        .into_iter()
        .map(|m| BinaryMask::from_vec(h, w, m).expect("extent"))
        .collect()
}
