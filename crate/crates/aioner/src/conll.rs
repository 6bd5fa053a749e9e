//! Two-column CoNLL: one `token<TAB>label` line per token, blank lines
//! between sentences.
//!
//! A sentence block may open with directive lines:
//!
//! ```text
//! #task	Gene
//! #doc	PMID123	0
//! #corpus	GNormPlus
//! BRCA1	B-Gene
//! binds	O-Gene
//! ```
//!
//! `#task` selects the task tag (default `ALL`); `#doc` carries the source
//! document id and sentence index; `#corpus` the source corpus. Sentinel
//! token lines `<Gene>` / `</Gene>` without a label column are accepted in
//! place of `#task`. Labels may be plain BIO (`O`) or AIO (`O-Gene`,
//! `O-ALL`); when a line has more than two columns the last one is the
//! label.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use aioner_core::corpus::{split_sentences_with, Corpus, Document, Mention, SplitConfig, Token, TokenizedSentence};
use aioner_core::scheme::{
    encode_sentence, label_spans, DecodeStats, EncodeOptions, EncodedSentence, Label, LabelId, LabelSet, Provenance, TaskTag,
};

use crate::error::FormatError;

#[derive(Debug, Clone, PartialEq)]
pub struct ConllSentence {
    /// Tokens with synthetic offsets (single spaces) and the mentions read
    /// from the labels.
    pub sentence: TokenizedSentence,
    /// Canonical BIO labels with repairs applied.
    pub encoded: EncodedSentence,
    /// Labels exactly as written.
    pub raw_labels: Vec<LabelId>,
    pub stats: DecodeStats,
}

#[derive(Default)]
struct Block {
    task: Option<TaskTag>,
    doc: Option<(String, Option<usize>)>,
    corpus: Option<String>,
    tokens: Vec<(usize, String, String)>,
    closed: bool,
    first_line: usize,
}

fn sentinel(text: &str) -> Option<(bool, &str)> {
    let inner = text.strip_prefix('<')?.strip_suffix('>')?;
    match inner.strip_prefix('/') {
        Some(name) => Some((true, name)),
        None => Some((false, inner)),
    }
}

/// Reads CoNLL text against `label_set`.
pub fn parse_conll(input: &str, label_set: &LabelSet) -> Result<Vec<ConllSentence>, FormatError> {
    let registry = label_set.registry();
    let mut out = Vec::new();
    let mut block = Block::default();
    let mut running: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut anonymous = 0usize;

    let mut flush = |block: &mut Block, out: &mut Vec<ConllSentence>| -> Result<(), FormatError> {
        let b = std::mem::take(block);
        if b.tokens.is_empty() && b.task.is_none() && b.doc.is_none() {
            return Ok(());
        }
        let task = b.task.unwrap_or(TaskTag::All);
        let (doc_id, sentence_index) = match b.doc {
            Some((id, Some(i))) => {
                running.insert(id.clone(), i + 1);
                (id, i)
            }
            Some((id, None)) => {
                let next = running.entry(id.clone()).or_insert(0);
                let i = *next;
                *next += 1;
                (id, i)
            }
            None => {
                anonymous += 1;
                (format!("s{}", anonymous), 0)
            }
        };
        let mut tokens = Vec::with_capacity(b.tokens.len());
        let mut raw = Vec::with_capacity(b.tokens.len());
        let mut offset = 0;
        for (line, surface, label) in &b.tokens {
            let len = surface.chars().count();
            tokens.push(Token::new(surface.clone(), offset, offset + len));
            offset += len + 1;
            raw.push(
                label_set
                    .parse(label, &task)
                    .map_err(|source| FormatError::Label { line: *line, source })?,
            );
        }
        let end = offset.saturating_sub(1);
        let (spans, stats) = label_spans(&raw, label_set, &task);
        let outside = label_set.outside(&task).expect("task parsed against this registry");
        let mut labels = vec![outside; raw.len()];
        let mut mentions = Vec::with_capacity(spans.len());
        for &(first, last, t) in &spans {
            labels[first] = label_set.id(Label::Begin(t));
            for l in &mut labels[first + 1..=last] {
                *l = label_set.id(Label::Inside(t));
            }
            let surface: Vec<&str> = tokens[first..=last].iter().map(|t| t.text.as_str()).collect();
            mentions.push(Mention::new(
                tokens[first].start,
                tokens[last].end,
                registry.names()[t].clone(),
                surface.join(" "),
            ));
        }
        let sentence = TokenizedSentence {
            doc_id: doc_id.clone(),
            sentence_index,
            start: 0,
            end,
            tokens,
            aligned_mentions: mentions,
        };
        let mut encoded = EncodedSentence::unlabeled(&sentence, &task, label_set);
        encoded.labels = labels;
        encoded.provenance = Provenance {
            corpus: b.corpus.unwrap_or_default(),
            doc_id,
            sentence_index,
        };
        if stats.repairs() > 0 {
            log::debug!("line {}: {} BIO repair(s)", b.first_line, stats.repairs());
        }
        out.push(ConllSentence {
            sentence,
            encoded,
            raw_labels: raw,
            stats,
        });
        Ok(())
    };

    for (idx, raw_line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            flush(&mut block, &mut out)?;
            continue;
        }
        if block.first_line == 0 {
            block.first_line = line_no;
        }
        let directive = |name: &str| line.strip_prefix(name).and_then(|r| r.strip_prefix('\t'));
        if block.tokens.is_empty() {
            if let Some(tag) = directive("#task") {
                let task = registry
                    .parse_task(tag.trim())
                    .map_err(|source| FormatError::Label { line: line_no, source })?;
                block.task = Some(task);
                continue;
            }
            if let Some(rest) = directive("#doc") {
                let mut parts = rest.split('\t');
                let id = parts.next().unwrap_or("").to_string();
                if id.is_empty() {
                    return Err(FormatError::syntax(line_no, "empty document id in #doc"));
                }
                let index = match parts.next() {
                    Some(s) => Some(
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| FormatError::syntax(line_no, format!("bad sentence index `{s}`")))?,
                    ),
                    None => None,
                };
                block.doc = Some((id, index));
                continue;
            }
            if let Some(name) = directive("#corpus") {
                block.corpus = Some(name.to_string());
                continue;
            }
        }
        if block.closed {
            return Err(FormatError::syntax(line_no, "token after closing sentinel"));
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() == 1 {
            match sentinel(cols[0]) {
                Some((false, name)) if block.tokens.is_empty() => {
                    let task = registry
                        .parse_task(name)
                        .map_err(|source| FormatError::Label { line: line_no, source })?;
                    block.task = Some(task);
                }
                Some((true, name)) if block.task.as_ref().is_some_and(|t| t.name() == name || (name == "ALL" && *t == TaskTag::All)) => {
                    block.closed = true;
                }
                _ => return Err(FormatError::syntax(line_no, "expected `token<TAB>label`")),
            }
            continue;
        }
        let surface = cols[0];
        let label = cols[cols.len() - 1].trim();
        if surface.is_empty() || surface.contains(char::is_whitespace) {
            return Err(FormatError::syntax(line_no, format!("bad token {surface:?}")));
        }
        block.tokens.push((line_no, surface.to_string(), label.to_string()));
    }
    flush(&mut block, &mut out)?;
    Ok(out)
}

/// Writes sentences in the merged-data layout: `#task`, `#doc` and, when
/// known, `#corpus`, then one line per real token.
pub fn write_conll(sentences: &[EncodedSentence], label_set: &LabelSet) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "#task\t{}", s.task.name());
        if !s.provenance.doc_id.is_empty() {
            let _ = writeln!(out, "#doc\t{}\t{}", s.provenance.doc_id, s.provenance.sentence_index);
        }
        if !s.provenance.corpus.is_empty() {
            let _ = writeln!(out, "#corpus\t{}", s.provenance.corpus);
        }
        for (tok, &label) in s.inner_tokens().iter().zip(&s.labels) {
            let _ = writeln!(out, "{}\t{}", tok.text, label_set.name(label));
        }
        out.push('\n');
    }
    out
}

/// Reads a merged file back into training sentences.
pub fn read_merged(input: &str, label_set: &LabelSet) -> Result<(Vec<EncodedSentence>, DecodeStats), FormatError> {
    let mut stats = DecodeStats::default();
    let sentences = parse_conll(input, label_set)?
        .into_iter()
        .map(|s| {
            stats.absorb(s.stats);
            s.encoded
        })
        .collect();
    Ok((sentences, stats))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConversionStats {
    pub documents: usize,
    pub sentences: usize,
    pub mentions: usize,
    /// BIO repairs plus mentions lost to flattening or alignment.
    pub repairs: usize,
}

/// Sentence-splits and encodes a corpus under `task`. Overlapping mentions
/// are flattened to the longest one, counted as repairs.
pub fn corpus_to_sentences(
    corpus: &Corpus,
    task: &TaskTag,
    label_set: &LabelSet,
    split: &SplitConfig,
) -> Result<(Vec<EncodedSentence>, ConversionStats), aioner_core::scheme::SchemeError> {
    let mut stats = ConversionStats {
        documents: corpus.documents.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for doc in &corpus.documents {
        let split_out = split_sentences_with(doc, split);
        stats.repairs += split_out
            .warnings
            .iter()
            .filter(|w| matches!(w, aioner_core::corpus::SplitWarning::Dropped { .. }))
            .count();
        for sentence in split_out.sentences {
            let mut enc = encode_sentence(&sentence, task, label_set, EncodeOptions { keep_longest: true })?;
            let kept = label_spans(&enc.labels, label_set, task).0.len();
            stats.repairs += sentence.aligned_mentions.len() - kept;
            stats.mentions += kept;
            enc.provenance.corpus = corpus.name.clone();
            out.push(enc);
        }
    }
    stats.sentences = out.len();
    Ok((out, stats))
}

/// Rebuilds documents from CoNLL sentences. Consecutive sentences of a
/// document are joined: the first becomes the title, the rest the body.
pub fn sentences_to_corpus(sentences: &[ConllSentence], name: &str, entity_types: Option<&BTreeSet<String>>) -> Corpus {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, Vec<&ConllSentence>> = std::collections::HashMap::new();
    for s in sentences {
        let id = &s.sentence.doc_id;
        if !grouped.contains_key(id) {
            order.push(id.clone());
        }
        grouped.entry(id.clone()).or_default().push(s);
    }
    let mut observed = BTreeSet::new();
    let mut corpus = Corpus::new(name, entity_types.into_iter().flatten().cloned());
    for id in order {
        let mut parts = grouped.remove(&id).expect("grouped above");
        parts.sort_by_key(|s| s.sentence.sentence_index);
        let mut text = String::new();
        let mut mentions = Vec::new();
        let mut offset = 0;
        for (i, s) in parts.iter().enumerate() {
            if i == 1 {
                text.push('\n');
                offset += 1;
            } else if i > 1 {
                text.push(' ');
                offset += 1;
            }
            let words: Vec<&str> = s.sentence.tokens.iter().map(|t| t.text.as_str()).collect();
            let sentence_text = words.join(" ");
            for m in &s.sentence.aligned_mentions {
                observed.insert(m.entity_type.clone());
                mentions.push(Mention::new(m.start + offset, m.end + offset, m.entity_type.clone(), m.surface.clone()));
            }
            offset += sentence_text.chars().count();
            text.push_str(&sentence_text);
        }
        let mut doc = Document::new(id, text);
        doc.source_corpus = name.to_string();
        doc.mentions = mentions;
        doc.sort_mentions();
        corpus.documents.push(doc);
    }
    if entity_types.is_none() {
        corpus.entity_types = observed;
    }
    corpus
}
