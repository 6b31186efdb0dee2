//! Two-stage retinal image classifier.
//!
//! Stage one pre-trains a fundus encoder and an OCT encoder on multi-label
//! lesion-sign targets. Stage two reuses both encoders, concatenates their
//! 1000-d features and trains a 3-way diagnosis head (neovascular AMD, PCV,
//! other). Grad-CAM maps, evaluation metrics and a synthetic bi-modal dataset
//! generator round out the toolkit.

pub mod cli;
pub mod data;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
