//! Frame-wise facial expression classification on Aff-Wild2-style data.
//!
//! A ResNet backbone with frozen early stages feeds a spatial down-sampling
//! head (stride-2 convolutions, then a flatten over all positions) and a
//! linear classifier over 8 expression classes. Training uses SGD with a
//! cosine schedule on one frame in ten; evaluation reports macro F1. A small
//! warp-contrastive pretraining module produces importable backbone weights.
//!
//! Everything runs on the CPU through the crate's own [`nn`] engine.

pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod seed;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
