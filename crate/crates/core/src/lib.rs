//! Detection and explanation of samples whose omics profile contradicts their group label.

pub mod anomaly;
pub mod config;
pub mod dekt;
pub mod error;
pub mod explain;
pub mod ingest;
pub mod model_select;
pub mod pipeline;
pub mod report;
pub mod serde_ext;
pub mod stats;
pub mod svm;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
