//! Data model, synthetic data generation, colocation and metrics for
//! imagery-to-cloud-volume retrieval.

pub mod channels;
pub mod cloudtype;
pub mod coloc;
pub mod cvt;
pub mod dataset;
pub mod error;
pub mod geo;
pub mod heights;
pub mod manifest;
pub mod metrics;
pub mod norm;
pub mod synth;

pub use error::{CoreError, Result};
