//! Batch caption generation.

use geoknow_core::corpus::TokenizedCaption;
use geoknow_core::Exec;

use crate::captioner::{Captioner, Example};
use crate::error::Result;
use crate::tape::Scalar;

/// Greedy captions for every example, in input order.
pub fn generate_all<T: Scalar>(model: &Captioner<T>, examples: &[Example], exec: Exec) -> Result<Vec<TokenizedCaption>> {
    exec.try_map(examples, |ex| model.generate(ex))
}
