//! Non-learned parts of a segmentation-based text spotter: mask-branch
//! target generation, segmentation losses with analytic gradients,
//! pixel-voting decoding, polygon extraction, weighted edit distance
//! lexicon matching and evaluation, plus a synthetic score-map generator
//! that stands in for the network.

pub mod cli;
pub mod decode;
pub mod documents;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod lexicon;
pub mod losses;
pub mod maps;
pub mod synth;
pub mod targets;

pub use error::{Error, Result};
