//! Documents, mentions and offset-preserving tokenization.
//!
//! All offsets are 0-based character (Unicode scalar value) offsets into the
//! document text, end-exclusive.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("document `{doc_id}`: mention {start}..{end} is outside the text (length {len})")]
    OffsetOutOfRange {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("document `{doc_id}`: mention {start}..{end} has surface {surface:?} but the text slice is {slice:?}")]
    SurfaceMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        surface: String,
        slice: String,
    },
    #[error("document `{doc_id}`: entity type `{entity_type}` is not declared by corpus `{corpus}`")]
    UndeclaredType {
        doc_id: String,
        entity_type: String,
        corpus: String,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("empty document id")]
    EmptyDocumentId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    pub surface: String,
    /// Opaque concept identifier carried through from the source format.
    pub concept_id: Option<String>,
}

impl Mention {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>, surface: impl Into<String>) -> Self {
        Mention {
            start,
            end,
            entity_type: entity_type.into(),
            surface: surface.into(),
            concept_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Mention) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Ordering used everywhere mentions are sorted: by span, then type name.
    pub fn span_order(&self, other: &Mention) -> Ordering {
        (self.start, self.end, &self.entity_type).cmp(&(other.start, other.end, &other.entity_type))
    }
}

/// Maps character offsets to byte offsets for one string.
///
/// Built once per text so repeated slicing stays linear overall.
#[derive(Debug, Clone)]
pub struct CharIndex {
    bytes: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        CharIndex { bytes }
    }

    /// Number of characters in the indexed text.
    pub fn char_len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end || end > self.char_len() {
            return None;
        }
        Some(&text[self.bytes[start]..self.bytes[end]])
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    /// Title and body joined by a single `\n`.
    pub text: String,
    pub mentions: Vec<Mention>,
    pub source_corpus: String,
    /// Non-mention annotation lines (relations and the like), kept verbatim.
    pub relations: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
            mentions: Vec::new(),
            source_corpus: String::new(),
            relations: Vec::new(),
        }
    }

    pub fn char_len(&self) -> usize {
        char_len(&self.text)
    }

    /// Text between two character offsets, `None` when out of range.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        CharIndex::new(&self.text).slice(&self.text, start, end)
    }

    /// Adds a mention whose surface is taken from the text.
    pub fn add_mention(&mut self, start: usize, end: usize, entity_type: impl Into<String>) -> Result<(), CorpusError> {
        let surface = self
            .slice(start, end)
            .filter(|_| start < end)
            .ok_or_else(|| CorpusError::OffsetOutOfRange {
                doc_id: self.doc_id.clone(),
                start,
                end,
                len: self.char_len(),
            })?
            .to_string();
        self.mentions.push(Mention::new(start, end, entity_type, surface));
        self.sort_mentions();
        Ok(())
    }

    pub fn sort_mentions(&mut self) {
        self.mentions.sort_by(Mention::span_order);
    }

    /// Checks the offset and surface invariants of every mention.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.doc_id.is_empty() {
            return Err(CorpusError::EmptyDocumentId);
        }
        let index = CharIndex::new(&self.text);
        for m in &self.mentions {
            let slice = index
                .slice(&self.text, m.start, m.end)
                .filter(|_| m.start < m.end)
                .ok_or_else(|| CorpusError::OffsetOutOfRange {
                    doc_id: self.doc_id.clone(),
                    start: m.start,
                    end: m.end,
                    len: index.char_len(),
                })?;
            if slice != m.surface {
                return Err(CorpusError::SurfaceMismatch {
                    doc_id: self.doc_id.clone(),
                    start: m.start,
                    end: m.end,
                    surface: m.surface.clone(),
                    slice: slice.to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    /// Entity types this corpus annotates. Always declared by the caller.
    pub entity_types: BTreeSet<String>,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new<I, S>(name: impl Into<String>, entity_types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Corpus {
            name: name.into(),
            entity_types: entity_types.into_iter().map(Into::into).collect(),
            documents: Vec::new(),
        }
    }

    pub fn push(&mut self, doc: Document) -> Result<(), CorpusError> {
        if doc.doc_id.is_empty() {
            return Err(CorpusError::EmptyDocumentId);
        }
        if self.documents.iter().any(|d| d.doc_id == doc.doc_id) {
            return Err(CorpusError::DuplicateDocument(doc.doc_id));
        }
        self.documents.push(doc);
        Ok(())
    }

    pub fn mention_count(&self) -> usize {
        self.documents.iter().map(|d| d.mentions.len()).sum()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        for doc in &self.documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDocument(doc.doc_id.clone()));
            }
            doc.validate()?;
            if let Some(m) = doc.mentions.iter().find(|m| !self.entity_types.contains(&m.entity_type)) {
                return Err(CorpusError::UndeclaredType {
                    doc_id: doc.doc_id.clone(),
                    entity_type: m.entity_type.clone(),
                    corpus: self.name.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn new(text: impl Into<String>, start: usize, end: usize) -> Self {
        Token {
            text: text.into(),
            start,
            end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub doc_id: String,
    pub sentence_index: usize,
    /// Character span of the sentence in the document; spans of consecutive
    /// sentences tile the text.
    pub start: usize,
    pub end: usize,
    pub tokens: Vec<Token>,
    pub aligned_mentions: Vec<Mention>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Letter,
    Digit,
    Space,
    Other,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_numeric() {
        CharClass::Digit
    } else if c.is_alphabetic() {
        CharClass::Letter
    } else {
        CharClass::Other
    }
}

/// Splits text into maximal letter runs, maximal digit runs and single
/// punctuation characters. Offsets are shifted by `base_offset`.
pub fn tokenize(text: &str, base_offset: usize) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_class = CharClass::Space;
    let mut current_start = 0;
    for (pos, c) in text.chars().enumerate() {
        let class = classify(c);
        let extends = !current.is_empty() && class == current_class && matches!(class, CharClass::Letter | CharClass::Digit);
        if !extends && !current.is_empty() {
            let end = current_start + char_len(&current);
            tokens.push(Token::new(core::mem::take(&mut current), base_offset + current_start, base_offset + end));
        }
        if class != CharClass::Space {
            if current.is_empty() {
                current_start = pos;
            }
            current.push(c);
        }
        current_class = class;
    }
    if !current.is_empty() {
        let end = current_start + char_len(&current);
        tokens.push(Token::new(current, base_offset + current_start, base_offset + end));
    }
    tokens
}

/// What happens to a mention whose boundaries fall inside a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AlignPolicy {
    /// Widen to the smallest covering token span.
    #[default]
    Snap,
    /// Drop the mention.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub max_tokens: usize,
    pub align: AlignPolicy,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            max_tokens: 256,
            align: AlignPolicy::Snap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitWarning {
    Snapped { doc_id: String, from: (usize, usize), to: (usize, usize) },
    Dropped { doc_id: String, span: (usize, usize) },
    /// A single mention was longer than the token limit; the chunk was
    /// extended to keep it whole.
    OverlongMention { doc_id: String, span: (usize, usize) },
}

#[derive(Debug, Clone, Default)]
pub struct SplitOutcome {
    pub sentences: Vec<TokenizedSentence>,
    pub warnings: Vec<SplitWarning>,
}

const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ca", "cf", "co", "dr", "eq", "fig", "figs", "inc", "jr", "ltd", "mr", "mrs", "ms", "no", "nos",
    "prof", "ref", "refs", "sp", "spp", "sr", "st", "subsp", "var", "vol", "vs",
];

fn is_abbreviation(token: &Token) -> bool {
    let lower = token.text.to_lowercase();
    let single_lower = {
        let mut chars = token.text.chars();
        matches!((chars.next(), chars.next()), (Some(c), None) if c.is_lowercase())
    };
    single_lower || ABBREVIATIONS.contains(&lower.as_str())
}

/// Splits a document with the default configuration.
pub fn split_sentences(doc: &Document) -> Vec<TokenizedSentence> {
    split_sentences_with(doc, &SplitConfig::default()).sentences
}

/// Sentence splitting with explicit alignment policy and token limit.
///
/// Boundaries fall after `.`, `?` or `!` when followed by whitespace and an
/// uppercase letter or digit (unless the preceding word is an abbreviation),
/// and at every line break. A boundary that would cut through a mention is
/// suppressed. Over-long sentences are cut at the last position before the
/// limit that does not separate two tokens of one mention.
pub fn split_sentences_with(doc: &Document, config: &SplitConfig) -> SplitOutcome {
    let text_len = doc.char_len();
    let mut outcome = SplitOutcome::default();
    if text_len == 0 {
        return outcome;
    }
    let index = CharIndex::new(&doc.text);
    let tokens = tokenize(&doc.text, 0);

    // Align mentions to token boundaries and record their token ranges.
    let mut aligned: Vec<(Mention, usize, usize)> = Vec::new();
    for m in &doc.mentions {
        let first = tokens.iter().position(|t| t.end > m.start);
        let last = tokens.iter().rposition(|t| t.start < m.end);
        let (first, last) = match (first, last) {
            (Some(f), Some(l)) if f <= l => (f, l),
            _ => {
                outcome.warnings.push(SplitWarning::Dropped {
                    doc_id: doc.doc_id.clone(),
                    span: (m.start, m.end),
                });
                continue;
            }
        };
        let (start, end) = (tokens[first].start, tokens[last].end);
        let mut mention = m.clone();
        if (start, end) != (m.start, m.end) {
            match config.align {
                AlignPolicy::Drop => {
                    outcome.warnings.push(SplitWarning::Dropped {
                        doc_id: doc.doc_id.clone(),
                        span: (m.start, m.end),
                    });
                    continue;
                }
                AlignPolicy::Snap => {
                    log::warn!("{}: snapped mention {}..{} to {}..{}", doc.doc_id, m.start, m.end, start, end);
                    outcome.warnings.push(SplitWarning::Snapped {
                        doc_id: doc.doc_id.clone(),
                        from: (m.start, m.end),
                        to: (start, end),
                    });
                    mention.start = start;
                    mention.end = end;
                    mention.surface = index.slice(&doc.text, start, end).unwrap_or_default().to_string();
                }
            }
        }
        aligned.push((mention, first, last));
    }

    // A cut before token `p` is allowed when no mention holds both p-1 and p.
    let cut_allowed = |p: usize| !aligned.iter().any(|&(_, f, l)| f < p && p <= l);

    let mut cuts: Vec<usize> = Vec::new();
    for p in 1..tokens.len() {
        let prev = &tokens[p - 1];
        let next = &tokens[p];
        let gap = index.slice(&doc.text, prev.end, next.start).unwrap_or("");
        let line_break = gap.contains('\n');
        let terminal = matches!(prev.text.as_str(), "." | "?" | "!")
            && !gap.is_empty()
            && next.text.chars().next().is_some_and(|c| c.is_uppercase() || c.is_numeric())
            && !(prev.text == "."
                && p >= 2
                && tokens[p - 2].end == prev.start
                && is_abbreviation(&tokens[p - 2]));
        if (line_break || terminal) && cut_allowed(p) {
            cuts.push(p);
        }
    }

    // Token ranges per sentence, then the length limit.
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut lo = 0;
    for &c in cuts.iter().chain(core::iter::once(&tokens.len())) {
        let mut start = lo;
        while c - start > config.max_tokens.max(1) {
            let limit = start + config.max_tokens.max(1);
            let cut = (start + 1..=limit).rev().find(|&p| cut_allowed(p)).unwrap_or_else(|| {
                let p = (limit + 1..c).find(|&p| cut_allowed(p)).unwrap_or(c);
                if let Some((m, _, _)) = aligned.iter().find(|&&(_, f, l)| f < limit && limit <= l) {
                    outcome.warnings.push(SplitWarning::OverlongMention {
                        doc_id: doc.doc_id.clone(),
                        span: (m.start, m.end),
                    });
                }
                p
            });
            ranges.push((start, cut));
            start = cut;
        }
        if c > start || ranges.is_empty() && c == tokens.len() {
            ranges.push((start, c));
        }
        lo = c;
    }

    let count = ranges.len();
    for (k, &(tlo, thi)) in ranges.iter().enumerate() {
        let start = if k == 0 { 0 } else { tokens[tlo].start };
        let end = if k + 1 == count { text_len } else { tokens[ranges[k + 1].0].start };
        let mentions = aligned
            .iter()
            .filter(|&&(_, f, _)| f >= tlo && f < thi)
            .map(|(m, _, _)| m.clone())
            .collect();
        outcome.sentences.push(TokenizedSentence {
            doc_id: doc.doc_id.clone(),
            sentence_index: k,
            start,
            end,
            tokens: tokens[tlo..thi].to_vec(),
            aligned_mentions: mentions,
        });
    }
    outcome
}
