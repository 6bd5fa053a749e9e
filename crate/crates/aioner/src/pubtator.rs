//! PubTator text format.
//!
//! ```text
//! 1234|t|Title text
//! 1234|a|Abstract text
//! 1234	0	5	Title	Gene	672
//! 1234	Association	672	D001943
//!
//! ```
//!
//! Offsets count characters of `title + "\n" + abstract`. Lines of a block
//! that are neither text nor mentions (relations, mostly) are kept verbatim.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use aioner_core::corpus::{CharIndex, Corpus, Document, Mention};

use crate::error::FormatError;

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub corpus_name: String,
    /// Declared entity types. Mentions of other types are dropped with a
    /// warning. When absent, the corpus declares the types it contains.
    pub entity_types: Option<BTreeSet<String>>,
    /// Drop mismatching annotations instead of relocating them.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WarningKind {
    /// Offsets did not match the text; moved to the nearest occurrence.
    Relocated { from: (usize, usize), to: (usize, usize) },
    /// Offsets did not match the text and the mention was dropped.
    Dropped { start: usize, end: usize, text: String },
    /// The mention's type is not declared for this corpus.
    UndeclaredType { entity_type: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub doc_id: String,
    pub kind: WarningKind,
}

#[derive(Debug)]
pub struct Parsed {
    pub corpus: Corpus,
    pub warnings: Vec<ParseWarning>,
}

struct Pending {
    doc_id: String,
    title: String,
    abstract_text: Option<String>,
    annotations: Vec<(usize, String)>,
    first_line: usize,
}

pub fn parse_pubtator(input: &str, options: &ParseOptions) -> Result<Parsed, FormatError> {
    let mut corpus = Corpus::new(options.corpus_name.clone(), options.entity_types.iter().flatten().cloned());
    let mut observed = BTreeSet::new();
    let mut warnings = Vec::new();
    let mut seen_ids = BTreeSet::new();
    let mut pending: Option<Pending> = None;

    let mut finish = |p: Pending, corpus: &mut Corpus, warnings: &mut Vec<ParseWarning>| -> Result<(), FormatError> {
        if !seen_ids.insert(p.doc_id.clone()) {
            return Err(FormatError::DuplicateDocument {
                line: p.first_line,
                doc_id: p.doc_id,
            });
        }
        let doc = build_document(p, options, &mut observed, warnings)?;
        corpus.documents.push(doc);
        Ok(())
    };

    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if let Some(p) = pending.take() {
                finish(p, &mut corpus, &mut warnings)?;
            }
            continue;
        }
        if let Some((id, kind, text)) = text_line(line) {
            match kind {
                't' => {
                    if let Some(p) = pending.take() {
                        finish(p, &mut corpus, &mut warnings)?;
                    }
                    if id.is_empty() {
                        return Err(FormatError::syntax(line_no, "empty document id"));
                    }
                    pending = Some(Pending {
                        doc_id: id.to_string(),
                        title: text.to_string(),
                        abstract_text: None,
                        annotations: Vec::new(),
                        first_line: line_no,
                    });
                }
                _ => {
                    let p = pending
                        .as_mut()
                        .ok_or_else(|| FormatError::syntax(line_no, "abstract line without a title line"))?;
                    if p.doc_id != id {
                        return Err(FormatError::syntax(line_no, format!("abstract id `{id}` does not match title id `{}`", p.doc_id)));
                    }
                    if p.abstract_text.is_some() || !p.annotations.is_empty() {
                        return Err(FormatError::syntax(line_no, "abstract line out of place"));
                    }
                    p.abstract_text = Some(text.to_string());
                }
            }
            continue;
        }
        let p = pending
            .as_mut()
            .ok_or_else(|| FormatError::syntax(line_no, "annotation line outside a document block"))?;
        let id = line.split('\t').next().unwrap_or("");
        if id != p.doc_id {
            return Err(FormatError::syntax(line_no, format!("annotation id `{id}` does not match document `{}`", p.doc_id)));
        }
        p.annotations.push((line_no, line.to_string()));
    }
    if let Some(p) = pending.take() {
        finish(p, &mut corpus, &mut warnings)?;
    }
    if options.entity_types.is_none() {
        corpus.entity_types = observed;
    }
    Ok(Parsed { corpus, warnings })
}

/// `id|t|text` or `id|a|text`.
fn text_line(line: &str) -> Option<(&str, char, &str)> {
    let (id, rest) = line.split_once('|')?;
    if id.contains('\t') {
        return None;
    }
    let (kind, text) = rest.split_once('|')?;
    match kind {
        "t" => Some((id, 't', text)),
        "a" => Some((id, 'a', text)),
        _ => None,
    }
}

fn build_document(
    p: Pending,
    options: &ParseOptions,
    observed: &mut BTreeSet<String>,
    warnings: &mut Vec<ParseWarning>,
) -> Result<Document, FormatError> {
    let text = match &p.abstract_text {
        Some(a) => format!("{}\n{}", p.title, a),
        None => p.title.clone(),
    };
    let mut doc = Document::new(p.doc_id, text);
    doc.source_corpus = options.corpus_name.clone();
    let index = CharIndex::new(&doc.text);
    for (line_no, line) in p.annotations {
        let fields: Vec<&str> = line.split('\t').collect();
        let numeric = fields.len() >= 5 && fields[1].parse::<usize>().is_ok() && fields[2].parse::<usize>().is_ok();
        if !numeric {
            if fields.len() < 2 || fields[1].parse::<usize>().is_ok() {
                return Err(FormatError::syntax(line_no, "malformed annotation line"));
            }
            doc.relations.push(line);
            continue;
        }
        let start: usize = fields[1].parse().expect("checked above");
        let end: usize = fields[2].parse().expect("checked above");
        let surface = fields[3];
        let entity_type = fields[4];
        if entity_type.is_empty() {
            return Err(FormatError::syntax(line_no, "empty entity type"));
        }
        if let Some(declared) = &options.entity_types {
            if !declared.contains(entity_type) {
                warnings.push(ParseWarning {
                    line: line_no,
                    doc_id: doc.doc_id.clone(),
                    kind: WarningKind::UndeclaredType {
                        entity_type: entity_type.to_string(),
                    },
                });
                continue;
            }
        }
        let matches = start < end && index.slice(&doc.text, start, end) == Some(surface);
        let (start, end) = if matches {
            (start, end)
        } else if let Some(found) = (!options.strict).then(|| nearest_occurrence(&doc.text, surface, start)).flatten() {
            warnings.push(ParseWarning {
                line: line_no,
                doc_id: doc.doc_id.clone(),
                kind: WarningKind::Relocated {
                    from: (start, end),
                    to: found,
                },
            });
            found
        } else {
            warnings.push(ParseWarning {
                line: line_no,
                doc_id: doc.doc_id.clone(),
                kind: WarningKind::Dropped {
                    start,
                    end,
                    text: surface.to_string(),
                },
            });
            continue;
        };
        let mut m = Mention::new(start, end, entity_type, surface);
        if fields.len() > 5 {
            m.concept_id = Some(fields[5..].join("\t"));
        }
        observed.insert(entity_type.to_string());
        doc.mentions.push(m);
    }
    doc.sort_mentions();
    Ok(doc)
}

/// Character span of the occurrence of `needle` whose start is closest to
/// `near`; earlier occurrences win ties.
fn nearest_occurrence(text: &str, needle: &str, near: usize) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let needle_len = needle.chars().count();
    let mut best: Option<(usize, usize)> = None;
    for (byte, _) in text.match_indices(needle) {
        let start = text[..byte].chars().count();
        let dist = start.abs_diff(near);
        if best.is_none_or(|(s, _)| dist < s.abs_diff(near)) {
            best = Some((start, start + needle_len));
        }
    }
    best
}

/// Renders a corpus. Fails rather than emit a file that would not parse
/// back to the same corpus.
pub fn write_pubtator(corpus: &Corpus) -> Result<String, FormatError> {
    let mut out = String::new();
    for doc in &corpus.documents {
        doc.validate()?;
        let id = &doc.doc_id;
        if id.contains(['|', '\t', '\n', '\r']) {
            return Err(FormatError::Unwritable(format!("document id {id:?} contains a separator")));
        }
        if id.trim().is_empty() {
            return Err(FormatError::Unwritable("blank document id".into()));
        }
        let (title, abstract_text) = match doc.text.split_once('\n') {
            Some((t, a)) => (t, Some(a)),
            None => (doc.text.as_str(), None),
        };
        if abstract_text.is_some_and(|a| a.contains('\n')) || doc.text.contains('\r') {
            return Err(FormatError::Unwritable(format!("document `{id}` has more than one line break")));
        }
        let _ = writeln!(out, "{id}|t|{title}");
        if let Some(a) = abstract_text {
            let _ = writeln!(out, "{id}|a|{a}");
        }
        let mut mentions = doc.mentions.clone();
        mentions.sort_by(Mention::span_order);
        for m in &mentions {
            if m.surface.contains(['\t', '\n']) || m.entity_type.contains(['\t', '\n']) || m.entity_type.is_empty() {
                return Err(FormatError::Unwritable(format!(
                    "document `{id}`: mention {}..{} cannot be written on one line",
                    m.start, m.end
                )));
            }
            let _ = write!(out, "{id}\t{}\t{}\t{}\t{}", m.start, m.end, m.surface, m.entity_type);
            if let Some(c) = &m.concept_id {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        for r in &doc.relations {
            let _ = writeln!(out, "{r}");
        }
        out.push('\n');
    }
    Ok(out)
}
