//! Dense raster containers shared by every stage.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A `height × width × channels` field stored row-major, channel-last.
///
/// The same layout backs semantic probability maps, heatmap stacks, CRF
/// unaries and mean-field marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// Per-pixel, per-class probabilities.
pub type SemanticProbMap<T> = ChannelGrid<T>;

impl<T: Copy> ChannelGrid<T> {
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ExtentMismatch(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// All channels of pixel `i` (row-major pixel index).
    pub fn pixel(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.channels;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, k: usize) -> T {
        self.data[i * self.channels + k]
    }

    pub fn set(&mut self, i: usize, k: usize, v: T) {
        self.data[i * self.channels + k] = v;
    }

    /// Copy of one channel as a single-channel grid.
    pub fn channel(&self, k: usize) -> ChannelGrid<T> {
        let data = self
            .data
            .iter()
            .skip(k)
            .step_by(self.channels)
            .copied()
            .collect();
        ChannelGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> ChannelGrid<U> {
        ChannelGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Scalar> ChannelGrid<T> {
    /// Checks the probability-map invariants: values in `[0, 1]`, per-pixel sums within `tol` of 1.
    pub fn check_distribution(&self, tol: f64) -> Result<()> {
        for i in 0..self.pixels() {
            let mut sum = 0.0;
            for (k, &v) in self.pixel(i).iter().enumerate() {
                let v = v.as_f64();
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue(i * self.channels + k));
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::OutOfRange(format!(
                        "probability {v} at pixel {i}, channel {k}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::OutOfRange(format!(
                    "probabilities at pixel {i} sum to {sum}"
                )));
            }
        }
        Ok(())
    }

    /// Converts to another float type.
    pub fn cast<U: Scalar>(&self) -> ChannelGrid<U> {
        self.map(|v| U::of(v.as_f64()))
    }
}

/// Per-pixel boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ExtentMismatch(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn at(&self, i: usize) -> bool {
        self.data[i]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn set_at(&mut self, i: usize, v: bool) {
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        debug_assert_eq!(self.extent(), other.extent());
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// Intersection over union; two empty masks have IoU 0.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}
