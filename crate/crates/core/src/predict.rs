//! Tagging documents with a trained model.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{split_sentences_with, CharIndex, Document, Mention, SplitConfig};
use crate::crf::{self, CrfError, EmissionMatrix};
use crate::features::FeatureScorer;
use crate::scheme::{decode_labels, resolve_overlaps, EncodedSentence, TaskTag};
use crate::train::CrfModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("no emissions for sentence {sentence_index} of document `{doc_id}`")]
    MissingEmissions { doc_id: String, sentence_index: usize },
    #[error("emissions for `{doc_id}`#{sentence_index} have {got} rows, sentence has {expected} tokens")]
    RowMismatch {
        doc_id: String,
        sentence_index: usize,
        got: usize,
        expected: usize,
    },
    #[error("emissions have {got} labels, model has {expected}")]
    LabelMismatch { got: usize, expected: usize },
    #[error("model has no built-in emission scorer; supply external emissions")]
    NoScorer,
    #[error("task {0} is not known to the model")]
    UnknownTask(String),
    #[error(transparent)]
    Crf(#[from] CrfError),
}

/// Source of emission scores for a wrapped sentence.
pub trait EmissionProvider {
    fn emissions(&self, sentence: &EncodedSentence) -> Result<EmissionMatrix, PredictError>;
}

impl EmissionProvider for FeatureScorer {
    fn emissions(&self, sentence: &EncodedSentence) -> Result<EmissionMatrix, PredictError> {
        Ok(FeatureScorer::emissions(self, &self.extract(sentence)))
    }
}

/// Precomputed emission matrices keyed by `(doc_id, sentence_index)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalEmissions {
    pub num_labels: usize,
    pub matrices: BTreeMap<(String, usize), EmissionMatrix>,
}

impl ExternalEmissions {
    pub fn new(num_labels: usize) -> Self {
        ExternalEmissions {
            num_labels,
            matrices: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, sentence_index: usize, matrix: EmissionMatrix) -> Result<(), PredictError> {
        if matrix.num_labels() != self.num_labels {
            return Err(PredictError::LabelMismatch {
                got: matrix.num_labels(),
                expected: self.num_labels,
            });
        }
        self.matrices.insert((doc_id.into(), sentence_index), matrix);
        Ok(())
    }

    pub fn get(&self, doc_id: &str, sentence_index: usize) -> Option<&EmissionMatrix> {
        self.matrices.get(&(doc_id.to_string(), sentence_index))
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Fails unless the label count matches the model.
    pub fn check_model(&self, model: &CrfModel) -> Result<(), PredictError> {
        if self.num_labels != model.label_set.len() {
            return Err(PredictError::LabelMismatch {
                got: self.num_labels,
                expected: model.label_set.len(),
            });
        }
        Ok(())
    }
}

impl EmissionProvider for ExternalEmissions {
    fn emissions(&self, sentence: &EncodedSentence) -> Result<EmissionMatrix, PredictError> {
        let p = &sentence.provenance;
        let m = self.get(&p.doc_id, p.sentence_index).ok_or_else(|| PredictError::MissingEmissions {
            doc_id: p.doc_id.clone(),
            sentence_index: p.sentence_index,
        })?;
        if m.len() != sentence.len() {
            return Err(PredictError::RowMismatch {
                doc_id: p.doc_id.clone(),
                sentence_index: p.sentence_index,
                got: m.len(),
                expected: sentence.len(),
            });
        }
        Ok(m.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// One pass with the `ALL` task.
    #[default]
    Aio,
    /// One pass per entity type, unioned.
    Ind,
    /// Union of `Aio` and `Ind`.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Restrict Viterbi to the labels valid for the task.
    pub masked: bool,
    pub split: SplitConfig,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            masked: true,
            split: SplitConfig::default(),
        }
    }
}

pub fn predict_document(doc: &Document, task: &TaskTag, model: &CrfModel, options: &PredictOptions) -> Result<Vec<Mention>, PredictError> {
    let scorer = model.scorer().ok_or(PredictError::NoScorer)?;
    predict_document_with(doc, task, model, scorer, options)
}

/// Split, wrap in task sentinels, decode and map back to document offsets.
/// Under a single-type task only mentions of that type are returned.
pub fn predict_document_with(
    doc: &Document,
    task: &TaskTag,
    model: &CrfModel,
    provider: &dyn EmissionProvider,
    options: &PredictOptions,
) -> Result<Vec<Mention>, PredictError> {
    let ls = &model.label_set;
    if ls.outside(task).is_none() {
        return Err(PredictError::UnknownTask(task.to_string()));
    }
    let mask = ls.valid_labels(task);
    let index = CharIndex::new(&doc.text);
    let mut out = Vec::new();
    for sentence in split_sentences_with(doc, &options.split).sentences {
        if sentence.tokens.is_empty() {
            continue;
        }
        let mut enc = EncodedSentence::unlabeled(&sentence, task, ls);
        let em = provider.emissions(&enc)?;
        if em.num_labels() != ls.len() {
            return Err(PredictError::LabelMismatch {
                got: em.num_labels(),
                expected: ls.len(),
            });
        }
        let (path, _) = crf::viterbi(&em, &model.transition, options.masked.then_some(mask.as_slice()))?;
        enc.labels = path;
        let (mentions, _) = decode_labels(&enc, ls);
        for mut m in mentions {
            if !task.sees(&m.entity_type) {
                continue;
            }
            if let Some(s) = index.slice(&doc.text, m.start, m.end) {
                m.surface = s.to_string();
            }
            out.push(m);
        }
    }
    out.sort_by(Mention::span_order);
    Ok(out)
}

pub fn predict_combined(doc: &Document, model: &CrfModel, mode: DecodeMode, options: &PredictOptions) -> Result<Vec<Mention>, PredictError> {
    let scorer = model.scorer().ok_or(PredictError::NoScorer)?;
    predict_combined_with(doc, model, mode, scorer, options)
}

/// AIO, IND or Combined decoding. Unions keep the longest mention of every
/// overlap cluster (ties: earlier start, then registry order).
pub fn predict_combined_with(
    doc: &Document,
    model: &CrfModel,
    mode: DecodeMode,
    provider: &dyn EmissionProvider,
    options: &PredictOptions,
) -> Result<Vec<Mention>, PredictError> {
    let registry = model.label_set.registry();
    let mut pool = Vec::new();
    if matches!(mode, DecodeMode::Aio | DecodeMode::Combined) {
        pool.extend(predict_document_with(doc, &TaskTag::All, model, provider, options)?);
    }
    if matches!(mode, DecodeMode::Ind | DecodeMode::Combined) {
        for task in registry.tasks().into_iter().filter(|t| *t != TaskTag::All) {
            pool.extend(predict_document_with(doc, &task, model, provider, options)?);
        }
    }
    if mode == DecodeMode::Aio {
        return Ok(pool);
    }
    Ok(resolve_overlaps(pool, |t| registry.index_of(t).unwrap_or(usize::MAX)))
}
