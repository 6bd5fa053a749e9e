//! All-in-one (AIO) tagging for multi-corpus named entity recognition.
//!
//! This crate holds the pure algorithmic pieces and needs only `alloc`:
//!
//! - [`corpus`]: documents, character-offset mentions, tokenization and
//!   sentence splitting.
//! - [`scheme`]: task tags, the AIO label set, encoding/decoding, corpus
//!   splitting, merging and normalization.
//! - [`crf`]: linear-chain CRF scoring, forward-backward and Viterbi.
//! - [`features`]: the hashed linear emission scorer.
//! - [`train`]: mini-batch training with early stopping.
//! - [`predict`]: document tagging in AIO, IND and Combined modes.
//! - [`eval`]: entity-level micro F1 and the Wilcoxon signed-rank test.
//!
//! File formats, model containers and the command-line pipeline live in the
//! `aioner` crate.
#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod crf;
pub mod eval;
pub mod features;
pub mod predict;
pub mod scheme;
pub mod train;

mod math;

pub use corpus::{Corpus, Document, Mention, Token, TokenizedSentence};
pub use crf::{EmissionMatrix, TransitionTable};
pub use eval::{EvalReport, PairedSample};
pub use scheme::{EncodedSentence, EntityTypeRegistry, LabelId, LabelSet, TaskTag};
pub use train::{CrfModel, TrainConfig};
