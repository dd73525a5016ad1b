//! Frailty staging from silhouette gait sequences.
//!
//! The crate covers dataset ingestion, participant-level fold planning,
//! clip sampling and augmentation, two gait backbones with named parameter
//! groups for freezing, the joint cross-entropy and triplet objective, the
//! training loop, evaluation metrics, Grad-CAM and a synthetic cohort
//! generator.

pub mod backbones;
pub mod config;
pub mod data;
pub mod error;
pub mod imageio;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod sealed;
pub mod splits;
pub mod synth;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
