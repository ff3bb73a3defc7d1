//! Fully-connected CRF with Gaussian + bilateral Potts pairwise terms and
//! synchronous mean-field inference.
//!
//! Two message-passing paths are provided. [`MessagePath::Exact`] sums over
//! every pixel pair (O(N²)). [`MessagePath::Window`] truncates both kernels
//! to a window: the spatial Gaussian runs as two separable 1-D passes over
//! a square, and the bilateral kernel is summed directly over a disk using a
//! lookup table for the colour term.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ChannelGrid;
use crate::label::LabelMap;
use crate::scalar::Scalar;

/// `u(i, k)`: energy of giving pixel `i` label `k`.
pub type UnaryField<T> = ChannelGrid<T>;
/// `q(i, k)`: approximate marginal of label `k` at pixel `i`.
pub type MarginalField<T> = ChannelGrid<T>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairwiseConfig {
    /// Gaussian (smoothness) kernel weight.
    pub w_g: f64,
    /// Gaussian kernel spatial bandwidth, pixels.
    pub theta_gamma: f64,
    /// Bilateral (appearance) kernel weight.
    pub w_b: f64,
    /// Bilateral kernel spatial bandwidth, pixels.
    pub theta_alpha: f64,
    /// Bilateral kernel colour bandwidth, 8-bit intensity units.
    pub theta_beta: f64,
    /// Window half-width in bandwidths for [`MessagePath::Window`].
    pub truncate: f64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        Self {
            w_g: 3.0,
            theta_gamma: 3.0,
            w_b: 10.0,
            theta_alpha: 60.0,
            theta_beta: 10.0,
            truncate: 5.0,
        }
    }
}

impl PairwiseConfig {
    pub fn disabled() -> Self {
        Self {
            w_g: 0.0,
            w_b: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w_g >= 0.0
            && self.w_b >= 0.0
            && self.theta_gamma > 0.0
            && self.theta_alpha > 0.0
            && self.theta_beta > 0.0
            && self.truncate > 0.0
            && [
                self.w_g,
                self.w_b,
                self.theta_gamma,
                self.theta_alpha,
                self.theta_beta,
                self.truncate,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("pairwise config {self:?}")))
        }
    }

    /// Window radius of the spatial Gaussian term.
    pub fn gaussian_radius(&self) -> usize {
        (self.truncate * self.theta_gamma).ceil() as usize
    }

    /// Window radius of the bilateral term.
    pub fn bilateral_radius(&self) -> usize {
        (self.truncate * self.theta_alpha).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessagePath {
    Exact,
    #[default]
    Window,
}

/// Pairwise kernel bound to one image.
#[derive(Debug, Clone)]
pub struct PairwiseKernel<T> {
    width: usize,
    height: usize,
    w_g: T,
    w_b: T,
    inv_2g2: T,
    inv_2a2: T,
    colors: Vec<[i32; 3]>,
    inv_2b2: f64,
    /// `exp(-n / 2θβ²)` for squared colour distance `n < color_cut`, then a single zero.
    color_lut: Vec<T>,
    color_cut: usize,
    g_radius: usize,
    b_radius: usize,
    /// 1-D Gaussian taps for offsets `0..=g_radius`.
    g_taps: Vec<T>,
    /// `w_b` times the bilateral spatial factor for `(dy, dx)` in the window, row-major.
    b_spatial: Vec<T>,
    /// Disk half-width for each row offset `dy + b_radius`.
    b_span: Vec<usize>,
}

const MAX_COLOR_DIST2: usize = 3 * 255 * 255;
/// Colour-kernel values below this are skipped by the window path.
pub const COLOR_FLOOR: f64 = 1e-12;

impl<T: Scalar> PairwiseKernel<T> {
    pub fn new(cfg: &PairwiseConfig, image: &RgbImage) -> Result<Self> {
        cfg.validate()?;
        let inv_2g2 = 1.0 / (2.0 * cfg.theta_gamma * cfg.theta_gamma);
        let inv_2a2 = 1.0 / (2.0 * cfg.theta_alpha * cfg.theta_alpha);
        let inv_2b2 = 1.0 / (2.0 * cfg.theta_beta * cfg.theta_beta);
        let color_cut = ((-COLOR_FLOOR.ln() / inv_2b2).ceil() as usize).min(MAX_COLOR_DIST2) + 1;
        let g_radius = cfg.gaussian_radius();
        let b_radius = cfg
            .bilateral_radius()
            .min(image.width().max(image.height()) as usize);
        let g_taps = (0..=g_radius)
            .map(|d| T::of((-((d * d) as f64) * inv_2g2).exp()))
            .collect();
        let side = 2 * b_radius + 1;
        let mut b_spatial = Vec::with_capacity(side * side);
        for dy in 0..side {
            for dx in 0..side {
                let (ry, rx) = (dy as f64 - b_radius as f64, dx as f64 - b_radius as f64);
                b_spatial.push(T::of(cfg.w_b * (-(ry * ry + rx * rx) * inv_2a2).exp()));
            }
        }
        let disk = cfg.truncate * cfg.theta_alpha;
        let b_span = (0..side)
            .map(|dy| {
                let ry = dy as f64 - b_radius as f64;
                ((disk * disk - ry * ry).max(0.0).sqrt().floor() as usize).min(b_radius)
            })
            .collect();
        Ok(Self {
            width: image.width() as usize,
            height: image.height() as usize,
            w_g: T::of(cfg.w_g),
            w_b: T::of(cfg.w_b),
            inv_2g2: T::of(inv_2g2),
            inv_2a2: T::of(inv_2a2),
            colors: image
                .pixels()
                .map(|p| [p[0] as i32, p[1] as i32, p[2] as i32])
                .collect(),
            inv_2b2,
            color_lut: (0..color_cut)
                .map(|n| T::of((-(n as f64) * inv_2b2).exp()))
                .chain([T::zero()])
                .collect(),
            color_cut,
            g_radius,
            b_radius,
            g_taps,
            b_spatial,
            b_span,
        })
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn color_kernel(&self, n2: usize) -> T {
        if n2 < self.color_cut {
            self.color_lut[n2]
        } else {
            T::of((-(n2 as f64) * self.inv_2b2).exp())
        }
    }

    fn color_dist2(&self, i: usize, j: usize) -> usize {
        let (a, b) = (&self.colors[i], &self.colors[j]);
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as usize
    }

    /// `K(i, j)` evaluated directly.
    pub fn k(&self, i: usize, j: usize) -> T {
        let (yi, xi) = ((i / self.width) as f64, (i % self.width) as f64);
        let (yj, xj) = ((j / self.width) as f64, (j % self.width) as f64);
        let d2 = T::of((yi - yj) * (yi - yj) + (xi - xj) * (xi - xj));
        self.w_g * (-d2 * self.inv_2g2).exp()
            + self.w_b * (-d2 * self.inv_2a2).exp() * self.color_kernel(self.color_dist2(i, j))
    }

    /// `S(i, k) = Σ_{j≠i} K(i, j) q(j, k)` over all pairs.
    pub fn filter_exact(&self, q: &ChannelGrid<T>) -> ChannelGrid<T> {
        let n = self.width * self.height;
        let d = q.channels();
        let mut out = ChannelGrid::filled(self.height, self.width, d, T::zero());
        out.data_mut()
            .par_chunks_mut(d.max(1))
            .enumerate()
            .for_each(|(i, acc)| {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let kij = self.k(i, j);
                    for (a, &qv) in acc.iter_mut().zip(q.pixel(j)) {
                        *a = *a + kij * qv;
                    }
                }
            });
        out
    }

    /// `S(i, k)` with both kernels truncated to their windows.
    pub fn filter_window(&self, q: &ChannelGrid<T>) -> ChannelGrid<T> {
        let mut out = self.gaussian_separable(q);
        if self.w_b > T::zero() {
            self.add_bilateral_window(q, &mut out);
        }
        out
    }

    fn gaussian_separable(&self, q: &ChannelGrid<T>) -> ChannelGrid<T> {
        let (h, w, d) = (self.height, self.width, q.channels());
        let mut out = ChannelGrid::filled(h, w, d, T::zero());
        if self.w_g == T::zero() {
            return out;
        }
        let r = self.g_radius as isize;
        let taps = &self.g_taps;
        // horizontal pass
        let mut tmp = vec![T::zero(); h * w * d];
        tmp.par_chunks_mut(w * d).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let acc = &mut row[x * d..(x + 1) * d];
                let lo = (x as isize - r).max(0) as usize;
                let hi = (x as isize + r).min(w as isize - 1) as usize;
                for xx in lo..=hi {
                    let t = taps[x.abs_diff(xx)];
                    for (a, &v) in acc.iter_mut().zip(q.pixel(y * w + xx)) {
                        *a = *a + t * v;
                    }
                }
            }
        });
        // vertical pass, then drop the self term and weight
        let w_g = self.w_g;
        out.data_mut()
            .par_chunks_mut(w * d)
            .enumerate()
            .for_each(|(y, row)| {
                let lo = (y as isize - r).max(0) as usize;
                let hi = (y as isize + r).min(h as isize - 1) as usize;
                for yy in lo..=hi {
                    let t = taps[y.abs_diff(yy)];
                    let src = &tmp[yy * w * d..(yy + 1) * w * d];
                    for (a, &v) in row.iter_mut().zip(src) {
                        *a = *a + t * v;
                    }
                }
                for x in 0..w {
                    for k in 0..d {
                        let a = &mut row[x * d + k];
                        *a = w_g * (*a - q.get(y * w + x, k));
                    }
                }
            });
        out
    }

    /// Each unordered pair is evaluated once and added to both ends. Bands at
    /// least `b_radius` tall are processed in two phases so that a band only
    /// ever writes to itself and the band below.
    fn add_bilateral_window(&self, q: &ChannelGrid<T>, out: &mut ChannelGrid<T>) {
        let (w, d) = (self.width, q.channels());
        if d == 0 || w == 0 {
            return;
        }
        let sparse = SparseRows::new(q);
        let band = TILE.max(self.b_radius);
        let mut bands: Vec<&mut [T]> = out.data_mut().chunks_mut(band * w * d).collect();
        for phase in 0..2 {
            let skip = phase.min(bands.len());
            bands[skip..]
                .par_chunks_mut(2)
                .enumerate()
                .for_each(|(p, pair)| {
                    let (first, rest) = pair.split_first_mut().unwrap();
                    let below = rest.first_mut().map(|b| &mut **b);
                    self.bilateral_band(phase + 2 * p, band, &sparse, first, below);
                });
        }
    }

    fn bilateral_band(
        &self,
        b: usize,
        band: usize,
        q: &SparseRows<T>,
        own: &mut [T],
        mut below: Option<&mut [T]>,
    ) {
        let (h, w) = (self.height, self.width);
        let d = q.channels;
        let r = self.b_radius;
        let side = 2 * r + 1;
        let (lut, cut) = (&self.color_lut[..], self.color_cut);
        let y_begin = b * band;
        let rows = own.len() / (w * d);
        let mut local = vec![T::zero(); d];
        for x0 in (0..w).step_by(TILE) {
            for y in y_begin..y_begin + rows {
                for x in x0..(x0 + TILE).min(w) {
                    let i = y * w + x;
                    let ci = self.colors[i];
                    let qi = q.row(i);
                    local.iter_mut().for_each(|v| *v = T::zero());
                    for yy in y..=(y + r).min(h - 1) {
                        let dy = yy - y + r;
                        let span = self.b_span[dy];
                        let x_lo = if yy == y {
                            x + 1
                        } else {
                            x.saturating_sub(span)
                        };
                        let x_hi = (x + span).min(w - 1);
                        if x_lo > x_hi {
                            continue;
                        }
                        let spatial = &self.b_spatial[dy * side + x_lo + r - x..];
                        let (target, row0) = if yy < y_begin + band {
                            (&mut *own, y_begin)
                        } else {
                            (below.as_deref_mut().unwrap(), y_begin + band)
                        };
                        let j_lo = yy * w + x_lo;
                        for (((j, cj), &sp), xx) in (j_lo..)
                            .zip(&self.colors[j_lo..=yy * w + x_hi])
                            .zip(spatial)
                            .zip(x_lo..)
                        {
                            let dc = [ci[0] - cj[0], ci[1] - cj[1], ci[2] - cj[2]];
                            let n2 = (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]) as usize;
                            let k = sp * lut[n2.min(cut)];
                            if k == T::zero() {
                                continue;
                            }
                            add_scaled(&mut local, k, q.row(j));
                            let o = ((yy - row0) * w + xx) * d;
                            add_scaled(&mut target[o..o + d], k, qi);
                        }
                    }
                    let o = ((y - y_begin) * w + x) * d;
                    for (a, &v) in own[o..o + d].iter_mut().zip(&local) {
                        *a = *a + v;
                    }
                }
            }
        }
    }
}

/// `acc += k · row` for a sparse marginal row.
fn add_scaled<T: Scalar>(acc: &mut [T], k: T, (labels, values): (&[u16], &[T])) {
    if values.len() == acc.len() {
        for (a, &v) in acc.iter_mut().zip(values) {
            *a = *a + k * v;
        }
    } else {
        for (&l, &v) in labels.iter().zip(values) {
            acc[l as usize] = acc[l as usize] + k * v;
        }
    }
}

/// Non-zero marginal entries per pixel, compressed-row layout.
struct SparseRows<T> {
    channels: usize,
    start: Vec<usize>,
    label: Vec<u16>,
    value: Vec<T>,
}

impl<T: Scalar> SparseRows<T> {
    fn new(q: &ChannelGrid<T>) -> Self {
        let mut rows = Self {
            channels: q.channels(),
            start: Vec::with_capacity(q.pixels() + 1),
            label: Vec::new(),
            value: Vec::new(),
        };
        rows.start.push(0);
        for i in 0..q.pixels() {
            for (k, &v) in q.pixel(i).iter().enumerate() {
                if v != T::zero() {
                    rows.label.push(k as u16);
                    rows.value.push(v);
                }
            }
            rows.start.push(rows.label.len());
        }
        rows
    }

    fn row(&self, i: usize) -> (&[u16], &[T]) {
        let (a, b) = (self.start[i], self.start[i + 1]);
        (&self.label[a..b], &self.value[a..b])
    }
}

const TILE: usize = 16;

/// `q(i, ·) = softmax(−u(i, ·))`.
pub fn init_marginals<T: Scalar>(unary: &UnaryField<T>) -> MarginalField<T> {
    let mut q = unary.clone();
    for i in 0..q.pixels() {
        softmax_neg(q.pixel_mut(i));
    }
    q
}

/// In place: `v ← softmax(−v)`.
fn softmax_neg<T: Scalar>(v: &mut [T]) {
    let min = v.iter().copied().fold(T::infinity(), T::min);
    let mut sum = T::zero();
    for e in v.iter_mut() {
        *e = (min - *e).exp();
        sum = sum + *e;
    }
    for e in v.iter_mut() {
        *e = *e / sum;
        // entries below ε² cannot affect a sum of order one; flushing them keeps products normal
        if *e < T::epsilon() * T::epsilon() {
            *e = T::zero();
        }
    }
}

/// One synchronous update
/// `q'(i,k) ∝ exp(−u(i,k) − Σ_{j≠i} K(i,j) Σ_{k'≠k} q(j,k'))`.
pub fn meanfield_step<T: Scalar>(
    q: &MarginalField<T>,
    unary: &UnaryField<T>,
    kernel: &PairwiseKernel<T>,
    path: MessagePath,
) -> Result<MarginalField<T>> {
    if q.extent() != unary.extent() || q.channels() != unary.channels() {
        return Err(Error::extent(q.extent(), unary.extent()));
    }
    if q.extent() != kernel.extent() {
        return Err(Error::extent(q.extent(), kernel.extent()));
    }
    let s = match path {
        MessagePath::Exact => kernel.filter_exact(q),
        MessagePath::Window => kernel.filter_window(q),
    };
    let d = q.channels();
    let mut next = s;
    next.data_mut()
        .par_chunks_mut(d.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let total: T = row.iter().copied().sum();
            for (k, v) in row.iter_mut().enumerate() {
                // Potts: messages from every other label
                *v = unary.get(i, k) + (total - *v);
            }
            softmax_neg(row);
        });
    Ok(next)
}

/// `iters` mean-field updates from [`init_marginals`].
pub fn run_meanfield<T: Scalar>(
    unary: &UnaryField<T>,
    pairwise: &PairwiseConfig,
    image: &RgbImage,
    iters: usize,
    path: MessagePath,
) -> Result<MarginalField<T>> {
    let kernel = PairwiseKernel::new(pairwise, image)?;
    let mut q = init_marginals(unary);
    for _ in 0..iters {
        q = meanfield_step(&q, unary, &kernel, path)?;
    }
    Ok(q)
}

/// Per-pixel argmax, ties to the lowest label.
pub fn map_labeling<T: Scalar>(q: &MarginalField<T>) -> LabelMap {
    let data = (0..q.pixels())
        .map(|i| {
            let mut best = 0;
            for (k, &v) in q.pixel(i).iter().enumerate() {
                if v > q.get(i, best) {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    LabelMap::from_vec(q.height(), q.width(), data).expect("extent")
}

/// `Σ_i u(i, x_i) + Σ_{i<j} K(i,j) [x_i ≠ x_j]`, exact.
pub fn energy<T: Scalar>(labels: &[u16], unary: &UnaryField<T>, kernel: &PairwiseKernel<T>) -> T {
    let n = unary.pixels();
    let mut e = T::zero();
    for i in 0..n {
        e = e + unary.get(i, labels[i] as usize);
    }
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] != labels[j] {
                e = e + kernel.k(i, j);
            }
        }
    }
    e
}

/// Exhaustive minimum-energy labeling; ties to the lexicographically smallest.
pub fn brute_force_map<T: Scalar>(
    unary: &UnaryField<T>,
    kernel: &PairwiseKernel<T>,
) -> Result<Vec<u16>> {
    let n = unary.pixels();
    let d = unary.channels();
    let states = (d as f64).powi(n as i32);
    if states > 1e6 {
        return Err(Error::TooLarge(states));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let pair: Vec<T> = (0..n * n)
        .map(|p| {
            if p / n == p % n {
                T::zero()
            } else {
                kernel.k(p / n, p % n)
            }
        })
        .collect();
    let mut labels = vec![0u16; n];
    let mut best = labels.clone();
    let mut best_e = T::infinity();
    loop {
        let mut e = T::zero();
        for i in 0..n {
            e = e + unary.get(i, labels[i] as usize);
            for j in i + 1..n {
                if labels[i] != labels[j] {
                    e = e + pair[i * n + j];
                }
            }
        }
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&labels);
        }
        // odometer, last pixel fastest
        let mut p = n;
        loop {
            if p == 0 {
                return Ok(best);
            }
            p -= 1;
            labels[p] += 1;
            if (labels[p] as usize) < d {
                break;
            }
            labels[p] = 0;
        }
    }
}
