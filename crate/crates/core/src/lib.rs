//! From-scratch skin-lesion classification toolkit.
//!
//! The crate covers the full pipeline: deterministic image preprocessing,
//! lesion segmentation (threshold-based and a mini U-Net), augmentation-driven
//! class balancing, three small CNN classifiers, and stratified k-fold
//! cross-validated training with Adam. Everything runs on the CPU with a
//! hand-rolled tensor engine whose forward and backward passes are
//! bit-deterministic given a seed.
//!
//! Layout:
//!
//! - [`tensor`]: f32 tensors and the layer primitives (conv, pool, dense,
//!   activations, losses) with reverse-mode gradients
//! - [`gradcheck`]: central-difference verification of every backward pass
//! - [`imaging`]: decode/resize/grayscale/brightening/color-constancy/cropping
//! - [`augment`]: affine + photometric augmentations and class balancing
//! - [`segmentation`]: threshold segmenter and the mini U-Net
//! - [`models`]: the three classifier architectures as declarative specs
//! - [`training`]: Adam, stratified folds, cross-validation, metrics
//! - [`dataset`], [`weights`], [`config`]: ingest, binary weight files, run config
//! - [`synthetic`]: seeded generators for desk-scale datasets

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod models;
pub mod rng;
pub mod segmentation;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod weights;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::Tensor;
