pub mod cli;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod fairness;
pub mod glm;
pub mod ingest;
mod linalg;
pub mod metrics;
pub mod phases;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
