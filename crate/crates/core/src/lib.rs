//! Weakly-supervised panoptic segmentation toolkit: approximate ground truth
//! from boxes and tags, dense-CRF post-processing, instance partitioning,
//! iterative refinement and evaluation.

#![allow(clippy::needless_range_loop)]

pub mod assign;
pub mod boxgt;
pub mod densecrf;
pub mod error;
pub mod gmm;
pub mod grabcut;
pub mod grid;
pub mod instcrf;
pub mod io;
pub mod label;
pub mod maxflow;
pub mod metrics;
pub mod proposals;
pub mod refine;
pub mod render;
pub mod scalar;
pub mod synth;
pub mod taggt;

pub use error::{Error, Result};
pub use grid::{BinaryMask, ChannelGrid, SemanticProbMap};
pub use image::RgbImage;
pub use label::{ClassTable, FillMode, LabelMap, PanopticMap, IGNORE};
pub use scalar::Scalar;

pub type SemanticProbMapF32 = grid::SemanticProbMap<f32>;
pub type SemanticProbMapF64 = grid::SemanticProbMap<f64>;
pub type MarginalFieldF32 = densecrf::MarginalField<f32>;
pub type MarginalFieldF64 = densecrf::MarginalField<f64>;
pub type PartitionF32 = instcrf::Partition<f32>;
pub type PartitionF64 = instcrf::Partition<f64>;
