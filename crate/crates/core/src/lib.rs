//! Regression fine-tuning for multi-level sentence similarity.
//!
//! Gold labels are placed on an ordered set of equally spaced nodes and a
//! Siamese encoder is trained to regress onto them with a thresholded loss
//! ([`losses::translated_relu`], [`losses::smooth_k2`]) that ignores residuals
//! already inside the node's correctness radius.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod labelmap;
pub mod losses;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
