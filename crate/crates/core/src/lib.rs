//! Omnidirectional image quality assessment with quality captions.
//!
//! The crate is organized bottom-up:
//!
//! * [`image`] and [`geometry`]: equirectangular rasters, sphere coordinates,
//!   gnomonic viewport extraction and viewport sampling plans.
//! * [`frmetrics`]: full-reference spherical metrics (PSNR, WS-PSNR, S-PSNR,
//!   CPP-PSNR, SSIM, WS-SSIM) and the SI / CF content descriptors.
//! * [`stats`]: MOS computation, subject screening, logistic mapping and
//!   PLCC / SRCC / accuracy.
//! * [`numerics`]: a small tape-based reverse-mode autodiff engine with the
//!   layers the model needs, plus finite-difference gradient checking.
//! * [`model`]: the multitask viewport network (backbone, feature
//!   aggregation, distortion-situation head, quality head with viewport
//!   selection) and its checkpoint format.
//! * [`training`]: losses, dynamic weight averaging, Adam, cosine schedule
//!   and the train / evaluate loops.
//! * [`caption`]: score-to-text mapping, recommendation table and caption
//!   templates.
//! * [`synth`] and [`config`]: synthetic datasets and run configuration used
//!   by the command-line tool.

pub mod caption;
pub mod config;
pub mod error;
pub mod frmetrics;
pub mod geometry;
pub mod image;
pub mod model;
pub mod numerics;
pub mod stats;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use image::ErpImage;
