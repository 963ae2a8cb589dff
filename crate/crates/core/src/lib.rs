//! Human-baselined reliability requirements for black-box image classifiers.
//!
//! The crate measures perceptual visual change between images ([`iqa`]),
//! applies safety-related transformations ([`transforms`]), estimates the
//! range of visual change humans tolerate from trial data ([`estimation`])
//! and checks a model against the resulting requirements ([`checker`]).

pub mod checker;
pub mod config;
pub mod error;
pub mod estimation;
pub mod human_data;
pub mod image;
pub mod iqa;
pub mod spline;
pub mod stats;
pub mod synth;
pub mod transforms;
pub mod wavelet;

pub use error::{Error, Result};
