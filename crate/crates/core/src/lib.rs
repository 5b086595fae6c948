//! Non-rigid probabilistic point-set registration.
//!
//! A reference point cloud is deformed onto a target that may have large
//! missing regions and outliers. Each iteration computes soft Gaussian
//! correspondences, turns every above-threshold pair into a noisy label
//! ("annotation") of the reference point's displacement, fuses the labels per
//! point by precision weighting and runs heteroscedastic Gaussian process
//! regression over the reference to obtain a smooth deformation. Reference
//! points without any confident correspondence are treated as missing and
//! are moved by the GP prior alone.
//!
//! Modules:
//! - [`types`]: point sets, configuration and result containers
//! - [`kernels`]: scalar kernels, Gram assembly and the PCA shape kernel
//! - [`gpr`]: annotation aggregation and the GP posterior
//! - [`correspondence`]: responsibilities, thresholding and labelling
//! - [`registration`]: the outer registration loop and variance update
//! - [`synthdata`]: seeded benchmark instance generator
//! - [`metrics`]: distance error, success ratio, missing-point detection
//! - [`experiment`]: variants, sweeps and CSV/JSON file formats

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correspondence;
pub mod error;
pub mod experiment;
pub mod gpr;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod registration;
pub mod synthdata;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CorrespondenceMode, CorrespondenceState, PointSet, PosteriorDeformation, RegistrationConfig, RegistrationResult,
    ThresholdMode, VarianceMode,
};
