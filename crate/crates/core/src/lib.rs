//! Multimodal misinformation detection: dataset handling, text and image
//! preprocessing, TF-IDF baselines, encoder classifiers with late fusion,
//! training with early stopping, and repeated hold-out experiments.

pub mod corpus;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
