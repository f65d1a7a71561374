//! Geographic and knowledge contexts for location-aware image captioning,
//! caption corpus handling, and evaluation.

pub mod artifact;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geo;
pub mod knowledge;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
