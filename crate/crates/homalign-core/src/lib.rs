//! Content-aware unsupervised homography estimation.
//!
//! The crate implements the full estimation stack on the CPU:
//!
//! * [`tensor`] — a minimal dense n-d array with reverse-mode automatic
//!   differentiation (tape based), covering the convolution, pooling and
//!   elementwise operations the networks need.
//! * [`geometry`] — homography algebra: the 4-point offset parameterization,
//!   DLT estimation from correspondences, point transfer, composition and
//!   inversion, and analytic differentiation through the linear solve.
//! * [`sampler`] — differentiable bilinear warping of images, feature maps
//!   and masks by a homography.
//! * [`models`] — the three sub-networks: feature extractor, mask predictor
//!   and homography estimator, at paper-faithful and tiny sizes.
//! * [`objective`] — the masked normalized alignment loss, the anti-collapse
//!   feature distance and the inverse-consistency penalty.
//! * [`synth`] — synthetic image-pair generation with exact ground truth,
//!   plus the labeled-points annotation format.
//! * [`pipeline`] — two-stage training with Adam, evaluation metrics,
//!   ablation arms and the DLT+RANSAC baseline.
//! * [`checkpoint`] — a versioned binary container for named parameters.
//!
//! The crate is `no_std` compatible (with `alloc`); file formats are encoded
//! to and from in-memory buffers so that all IO can live in a companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod element;
pub mod geometry;
pub mod gradcheck;
pub mod models;
pub mod objective;
pub mod pipeline;
pub mod sampler;
pub mod synth;
pub mod tensor;

pub use element::Element;
pub use geometry::{CornerOffsets, Frame, Homography};
pub use sampler::WarpResult;
pub use tensor::{Tape, Tensor, Var};
