//! Semi-supervised recursive autoencoder (RAE) for binary sentence
//! sentiment, plus the structural-simplification suite (level cuts,
//! subtree selection, window selection) and tree diagnostics used to
//! probe what the induced structures actually contribute.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`corpus`] loads the sentence-polarity data, builds the vocabulary
//!   and produces deterministic train/test splits.
//! - [`model`] holds the parameters and every forward computation:
//!   leaf representations, pair autoencoding, per-node softmax and
//!   greedy tree construction.
//! - [`training`] assembles the semi-supervised objective, computes
//!   gradients by backpropagation through the tree structures and
//!   optimizes with L-BFGS ([`lbfgs`]).
//! - [`simplify`] implements level cuts, central-word subtree selection
//!   and window selection.
//! - [`pipeline`] turns node sets into sentence features, trains the
//!   final softmax classifier and runs the full ablation grid.
//! - [`analysis`] computes reverser-reversal and period-adjacency
//!   statistics and exports trees for human inspection.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod lbfgs;
pub mod model;
pub mod pipeline;
pub mod simplify;
pub mod training;

pub use error::{RaeError, Result};
