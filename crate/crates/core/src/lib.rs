//! Reference-image quality control for printed glass bottles.
//!
//! A test image is registered onto a reference image of an acceptable print,
//! both are passed through an eight-filter bank, and each filtered pair is
//! compared with three image-quality metrics inside a comparison window. The
//! resulting 24 numbers feed one of five classical classifiers. Around that
//! core sit leave-one-out evaluation, unsupervised preselection for labeling,
//! rotation-drift monitoring and a synthetic corpus generator.

pub mod align;
pub mod classify;
pub mod error;
pub mod eval;
pub mod features;
pub mod filters;
pub mod imgcore;
pub mod iqm;
pub mod monitor;
pub mod preselect;
pub mod synth;

pub use error::{Error, Result};
