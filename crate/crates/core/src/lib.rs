//! Metric learning with hard batch mining and adversarial scene removal.
//!
//! A small multilayer extractor is trained with ID cross-entropy plus a
//! batch-hard triplet loss. Batches are built from classes whose class-weight
//! rows are most similar to a randomly drawn anchor class, and a scene
//! classifier behind a gradient-reversal boundary pushes scene information
//! out of the embedding. Evaluation follows the cross-scene ReID protocol
//! (mAP, CMC, optional k-reciprocal re-ranking).

pub mod augment;
pub mod checkpoint;
pub mod common;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod probe;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
