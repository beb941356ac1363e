//! Slot tagging with token-level uncertainty.
//!
//! A bidirectional recurrent tagger is trained with ordinary softmax
//! cross-entropy; its logits are read as the log-concentration of a Dirichlet
//! distribution over label distributions. A learned non-negative calibration
//! matrix reshapes the concentrations, the closed-form Dirichlet entropy scores
//! every token, and tokens above a dev-tuned threshold are extracted as
//! unknown concepts, optionally grown to their noun phrase along dependency
//! edges.
//!
//! Module map:
//!
//! - [`corpus`]: utterances, vocabularies, IOB spans, the column file format
//!   and the synthetic corpus generator.
//! - [`numerics`]: tensors, special functions, softmax, gradient checking.
//! - [`tagger`]: the recurrent tagger, its backward pass and checkpoints.
//! - [`dirichlet`]: posterior mean, entropy, confidence and calibration.
//! - [`training`]: losses, Adam and the joint training loop.
//! - [`uncertainty`]: per-token scores for every metric and threshold selection.
//! - [`extraction`]: dependency expansion and unknown-span IOB emission.
//! - [`evaluation`]: span-level scores, the OOD protocol and the seed t-test.
//! - [`pipeline`]: score, flag, expand and emit in one call.

// Series coefficients and high-precision reference values keep their published digits.
#![allow(clippy::excessive_precision)]

pub mod corpus;
pub mod dirichlet;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod numerics;
pub mod pipeline;
pub mod tagger;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
