//! Adaptive weighted co-learning (AWCoL) for cross-domain few-shot learning.
//!
//! Two prototypical classifiers are pretrained independently on episodes
//! from a source domain, then jointly adapted to each target task using
//! pseudo-labels derived from their smoothed co-predictions on the task's
//! unlabeled queries.
//!
//! - [`numerics`]: matrices, the MLP encoder and its exact gradient, Adam.
//! - [`protonet`]: episodes, prototypes, the distance softmax, pretraining.
//! - [`awcol`]: WMA predictions, pseudo-labels, losses, the fine-tuning loop.
//! - [`taskgen`]: synthetic domain-shift tasks and embedding files.
//! - [`harness`]: configuration, checkpoints, campaigns, ablations.

pub mod awcol;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod protonet;
pub mod taskgen;

pub use awcol::{finetune, FinetuneConfig, Variant};
pub use error::{Error, Result};
pub use numerics::{EncoderParams, Matrix};
pub use protonet::{Episode, ProtoModel, Task};
