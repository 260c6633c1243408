//! Cascaded multimodal classifier with cluster-sparse attention.

mod error;

pub mod attention;
pub mod clustering;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod harness;
pub mod masking;
pub mod model;
pub mod numeric;
pub mod training;

pub use error::{Error, Result};
