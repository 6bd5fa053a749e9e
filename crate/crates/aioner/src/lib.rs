//! File formats and the batch pipeline around [`aioner_core`].
//!
//! - [`pubtator`]: PubTator text corpora.
//! - [`conll`]: two-column CoNLL, including the `#task` merged-data format.
//! - [`emissions`]: externally computed emission scores.
//! - [`model_file`]: the versioned binary model container.
//! - [`rules`]: normalization rule files.
//! - [`config`]: the TOML pipeline manifest.
//! - [`pipeline`]: the `convert`, `merge`, `train`, `tag`, `eval` and
//!   `compare` commands.

#![allow(clippy::tabs_in_doc_comments)]

pub mod config;
pub mod conll;
pub mod emissions;
pub mod error;
pub mod model_file;
pub mod pipeline;
pub mod pubtator;
pub mod rules;

pub use error::{FormatError, PipelineError};
