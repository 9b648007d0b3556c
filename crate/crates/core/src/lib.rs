// SPDX-License-Identifier: Apache-2.0

//! Per-task expert routing for transfer learning.
//!
//! Upstream data is sliced along a label hierarchy into (possibly
//! overlapping) expert domains. For a new downstream task, one expert is
//! picked by a cheap selector: the leave-one-out 1-NN accuracy of the task
//! in each expert's embedding space, KL label matching against each
//! expert's slice prior, or the aggregated output of an expert prediction
//! network. The [`bench`] module measures how well each selector agrees
//! with brute-force fine-tuning on synthetic worlds with a known answer.

pub mod bench;
pub mod cli;
pub mod dataset_io;
mod error;
pub mod hierarchy;
pub mod knn;
pub mod selectors;
pub mod toy_models;

pub use error::{Error, Result};

/// Identifier of a label in the upstream hierarchy.
pub type LabelId = u32;
/// Identifier of a single example (upstream or downstream).
pub type ExampleId = u64;
/// Identifier of an expert.
pub type ExpertId = u32;
