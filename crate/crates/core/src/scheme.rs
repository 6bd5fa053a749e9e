//! The all-in-one tagging scheme.
//!
//! Every sentence is wrapped in a pair of task sentinels (`<Gene>` ...
//! `</Gene>`, `<ALL>` ... `</ALL>`) and labeled with `B-t`/`I-t` for entity
//! tokens and a task-specific outside label (`O-Gene`, ..., `O-ALL`) for
//! everything else. Corpora that annotate different subsets of the entity
//! types can then be merged into one training set without their missing
//! annotations contradicting each other.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    char_len, split_sentences_with, Corpus, Document, Mention, SplitConfig, Token, TokenizedSentence,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("duplicate entity type `{0}` in registry")]
    DuplicateType(String),
    #[error("entity type `{0}` is not in the registry")]
    UnknownType(String),
    #[error("unknown task tag `{tag}`; expected ALL or one of: {known}")]
    UnknownTask { tag: String, known: String },
    #[error("unknown label `{label}`; active labels: {known}")]
    UnknownLabel { label: String, known: String },
    #[error("{doc_id}#{sentence}: mentions {a:?} and {b:?} overlap")]
    OverlappingMentions {
        doc_id: String,
        sentence: usize,
        a: (usize, usize, String),
        b: (usize, usize, String),
    },
    #[error("{doc_id}#{sentence}: mention {span:?} does not sit on token boundaries")]
    UnalignedMention { doc_id: String, sentence: usize, span: (usize, usize) },
    #[error("{doc_id}#{sentence}: mention of type `{entity_type}` is not visible under task {task}")]
    InvisibleMention {
        doc_id: String,
        sentence: usize,
        entity_type: String,
        task: String,
    },
    #[error("corpus `{corpus}` declares types {declared:?} which do not fit task {task}")]
    TaskTypeMismatch {
        corpus: String,
        declared: Vec<String>,
        task: String,
    },
    #[error("corpus `{0}` has no documents to split")]
    EmptyCorpus(String),
    #[error("test fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("invalid suffix pattern: {0}")]
    BadPattern(String),
    #[error("label sequence has {labels} labels for {tokens} tokens")]
    LengthMismatch { labels: usize, tokens: usize },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Ordered entity-type names. The order fixes label ids for a model's
/// lifetime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTypeRegistry {
    names: Vec<String>,
}

impl EntityTypeRegistry {
    pub const DEFAULT_TYPES: [&'static str; 6] = ["Gene", "Disease", "Chemical", "Species", "Variant", "CellLine"];

    pub fn new<I, S>(names: I) -> Result<Self, SchemeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for name in names {
            let name = name.into();
            if out.contains(&name) {
                return Err(SchemeError::DuplicateType(name));
            }
            out.push(name);
        }
        Ok(EntityTypeRegistry { names: out })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// All task tags: one per type, then `All`.
    pub fn tasks(&self) -> Vec<TaskTag> {
        self.names
            .iter()
            .map(|n| TaskTag::Single(n.clone()))
            .chain(core::iter::once(TaskTag::All))
            .collect()
    }

    pub fn parse_task(&self, tag: &str) -> Result<TaskTag, SchemeError> {
        let tag = tag.trim_start_matches('<').trim_end_matches('>');
        if tag.eq_ignore_ascii_case("all") {
            return Ok(TaskTag::All);
        }
        match self.names.iter().find(|n| n.as_str() == tag) {
            Some(n) => Ok(TaskTag::Single(n.clone())),
            None => Err(SchemeError::UnknownTask {
                tag: tag.to_string(),
                known: self.names.join(", "),
            }),
        }
    }
}

impl Default for EntityTypeRegistry {
    fn default() -> Self {
        EntityTypeRegistry::new(Self::DEFAULT_TYPES).expect("default registry is unique")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskTag {
    Single(String),
    All,
}

impl TaskTag {
    pub fn name(&self) -> &str {
        match self {
            TaskTag::Single(t) => t,
            TaskTag::All => "ALL",
        }
    }

    pub fn open_sentinel(&self) -> String {
        format!("<{}>", self.name())
    }

    pub fn close_sentinel(&self) -> String {
        format!("</{}>", self.name())
    }

    /// Whether mentions of `entity_type` are annotated under this task.
    pub fn sees(&self, entity_type: &str) -> bool {
        match self {
            TaskTag::Single(t) => t == entity_type,
            TaskTag::All => true,
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelId(pub u16);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A label, with entity types referenced by registry index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Begin(usize),
    Inside(usize),
    /// `O-t` for a single-type task.
    Outside(usize),
    OutsideAll,
}

/// The AIO label vocabulary: `B-t, I-t, O-t` for every registry type in
/// order, then `O-ALL`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    registry: EntityTypeRegistry,
}

impl LabelSet {
    pub fn new(registry: EntityTypeRegistry) -> Self {
        LabelSet { registry }
    }

    pub fn registry(&self) -> &EntityTypeRegistry {
        &self.registry
    }

    pub fn len(&self) -> usize {
        3 * self.registry.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, label: Label) -> LabelId {
        let idx = match label {
            Label::Begin(t) => 3 * t,
            Label::Inside(t) => 3 * t + 1,
            Label::Outside(t) => 3 * t + 2,
            Label::OutsideAll => 3 * self.registry.len(),
        };
        LabelId(idx as u16)
    }

    pub fn label(&self, id: LabelId) -> Option<Label> {
        let idx = id.index();
        let types = self.registry.len();
        if idx == 3 * types {
            Some(Label::OutsideAll)
        } else if idx < 3 * types {
            Some(match idx % 3 {
                0 => Label::Begin(idx / 3),
                1 => Label::Inside(idx / 3),
                _ => Label::Outside(idx / 3),
            })
        } else {
            None
        }
    }

    pub fn name(&self, id: LabelId) -> String {
        match self.label(id) {
            Some(Label::Begin(t)) => format!("B-{}", self.registry.names()[t]),
            Some(Label::Inside(t)) => format!("I-{}", self.registry.names()[t]),
            Some(Label::Outside(t)) => format!("O-{}", self.registry.names()[t]),
            Some(Label::OutsideAll) => "O-ALL".to_string(),
            None => format!("<invalid {}>", id.0),
        }
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.name(LabelId(i as u16))).collect()
    }

    /// Parses an AIO label name. A bare `O` is read as the outside label of
    /// `task` (plain BIO input).
    pub fn parse(&self, name: &str, task: &TaskTag) -> Result<LabelId, SchemeError> {
        let unknown = || SchemeError::UnknownLabel {
            label: name.to_string(),
            known: self.names().join(", "),
        };
        if name == "O" {
            return self.outside(task).ok_or_else(unknown);
        }
        if name == "O-ALL" {
            return Ok(self.id(Label::OutsideAll));
        }
        let (prefix, ty) = name.split_once('-').ok_or_else(unknown)?;
        let t = self.registry.index_of(ty).ok_or_else(unknown)?;
        match prefix {
            "B" => Ok(self.id(Label::Begin(t))),
            "I" => Ok(self.id(Label::Inside(t))),
            "O" => Ok(self.id(Label::Outside(t))),
            _ => Err(unknown()),
        }
    }

    /// The outside label of a task.
    pub fn outside(&self, task: &TaskTag) -> Option<LabelId> {
        match task {
            TaskTag::All => Some(self.id(Label::OutsideAll)),
            TaskTag::Single(t) => self.registry.index_of(t).map(|i| self.id(Label::Outside(i))),
        }
    }

    /// Labels a decoder may emit under `task`, as a membership mask indexed
    /// by label id.
    pub fn valid_labels(&self, task: &TaskTag) -> Vec<bool> {
        let mut mask = alloc::vec![false; self.len()];
        match task {
            TaskTag::All => {
                for t in 0..self.registry.len() {
                    mask[self.id(Label::Begin(t)).index()] = true;
                    mask[self.id(Label::Inside(t)).index()] = true;
                }
                mask[self.id(Label::OutsideAll).index()] = true;
            }
            TaskTag::Single(name) => {
                if let Some(t) = self.registry.index_of(name) {
                    mask[self.id(Label::Begin(t)).index()] = true;
                    mask[self.id(Label::Inside(t)).index()] = true;
                    mask[self.id(Label::Outside(t)).index()] = true;
                }
            }
        }
        mask
    }

    /// Entity type name carried by a B or I label.
    pub fn entity_of(&self, id: LabelId) -> Option<&str> {
        match self.label(id)? {
            Label::Begin(t) | Label::Inside(t) => Some(&self.registry.names()[t]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus: String,
    pub doc_id: String,
    pub sentence_index: usize,
}

/// A sentence ready for the CRF: sentinel-wrapped tokens and one label per
/// real token. Sentinels are `tokens[0]` and `tokens[len - 1]` and carry no
/// label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSentence {
    pub task: TaskTag,
    pub tokens: Vec<Token>,
    pub labels: Vec<LabelId>,
    pub provenance: Provenance,
}

impl EncodedSentence {
    /// Wraps tokens in sentinels with every label set to the task's outside
    /// label. Used at inference time.
    pub fn unlabeled(sentence: &TokenizedSentence, task: &TaskTag, label_set: &LabelSet) -> Self {
        let outside = label_set.outside(task).unwrap_or(LabelId(0));
        EncodedSentence {
            task: task.clone(),
            tokens: wrap_tokens(sentence, task),
            labels: alloc::vec![outside; sentence.tokens.len()],
            provenance: Provenance {
                corpus: String::new(),
                doc_id: sentence.doc_id.clone(),
                sentence_index: sentence.sentence_index,
            },
        }
    }

    /// Tokens without the two sentinels.
    pub fn inner_tokens(&self) -> &[Token] {
        if self.tokens.len() < 2 {
            &[]
        } else {
            &self.tokens[1..self.tokens.len() - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn wrap_tokens(sentence: &TokenizedSentence, task: &TaskTag) -> Vec<Token> {
    let mut tokens = Vec::with_capacity(sentence.tokens.len() + 2);
    tokens.push(Token::new(task.open_sentinel(), sentence.start, sentence.start));
    tokens.extend(sentence.tokens.iter().cloned());
    tokens.push(Token::new(task.close_sentinel(), sentence.end, sentence.end));
    tokens
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Resolve overlapping mentions by keeping the longest instead of
    /// failing.
    pub keep_longest: bool,
}

/// Keeps one mention per overlap cluster: the longest, then the earliest
/// start, then the lowest `type_rank`.
pub fn resolve_overlaps<F>(mut mentions: Vec<Mention>, type_rank: F) -> Vec<Mention>
where
    F: Fn(&str) -> usize,
{
    mentions.sort_by(Mention::span_order);
    mentions.dedup_by(|a, b| a.start == b.start && a.end == b.end && a.entity_type == b.entity_type);
    let mut out: Vec<Mention> = Vec::new();
    let mut cluster: Vec<Mention> = Vec::new();
    let mut cluster_end = 0;
    let better = |a: &Mention, b: &Mention| {
        (core::cmp::Reverse(a.len()), a.start, type_rank(&a.entity_type))
            < (core::cmp::Reverse(b.len()), b.start, type_rank(&b.entity_type))
    };
    let flush = |cluster: &mut Vec<Mention>, out: &mut Vec<Mention>| {
        let mut best: Option<Mention> = None;
        for m in cluster.drain(..) {
            if best.as_ref().is_none_or(|b| better(&m, b)) {
                best = Some(m);
            }
        }
        out.extend(best);
    };
    for m in mentions {
        if !cluster.is_empty() && m.start >= cluster_end {
            flush(&mut cluster, &mut out);
        }
        cluster_end = if cluster.is_empty() { m.end } else { cluster_end.max(m.end) };
        cluster.push(m);
    }
    flush(&mut cluster, &mut out);
    out
}

/// Labels a tokenized sentence under `task`.
pub fn encode_sentence(
    sentence: &TokenizedSentence,
    task: &TaskTag,
    label_set: &LabelSet,
    options: EncodeOptions,
) -> Result<EncodedSentence, SchemeError> {
    let registry = label_set.registry();
    let outside = label_set.outside(task).ok_or_else(|| SchemeError::UnknownTask {
        tag: task.name().to_string(),
        known: registry.names().join(", "),
    })?;
    let mut mentions: Vec<Mention> = Vec::with_capacity(sentence.aligned_mentions.len());
    for m in &sentence.aligned_mentions {
        if !registry.contains(&m.entity_type) {
            return Err(SchemeError::UnknownType(m.entity_type.clone()));
        }
        if !task.sees(&m.entity_type) {
            return Err(SchemeError::InvisibleMention {
                doc_id: sentence.doc_id.clone(),
                sentence: sentence.sentence_index,
                entity_type: m.entity_type.clone(),
                task: task.to_string(),
            });
        }
        mentions.push(m.clone());
    }
    mentions.sort_by(Mention::span_order);
    if options.keep_longest {
        mentions = resolve_overlaps(mentions, |t| registry.index_of(t).unwrap_or(usize::MAX));
    } else if let Some(w) = mentions.windows(2).find(|w| w[0].overlaps(&w[1])) {
        return Err(SchemeError::OverlappingMentions {
            doc_id: sentence.doc_id.clone(),
            sentence: sentence.sentence_index,
            a: (w[0].start, w[0].end, w[0].entity_type.clone()),
            b: (w[1].start, w[1].end, w[1].entity_type.clone()),
        });
    }

    let mut labels = alloc::vec![outside; sentence.tokens.len()];
    for m in &mentions {
        let first = sentence.tokens.iter().position(|t| t.start == m.start);
        let last = sentence.tokens.iter().position(|t| t.end == m.end);
        let (first, last) = match (first, last) {
            (Some(f), Some(l)) if f <= l => (f, l),
            _ => {
                return Err(SchemeError::UnalignedMention {
                    doc_id: sentence.doc_id.clone(),
                    sentence: sentence.sentence_index,
                    span: (m.start, m.end),
                })
            }
        };
        let t = registry.index_of(&m.entity_type).expect("checked above");
        labels[first] = label_set.id(Label::Begin(t));
        for label in &mut labels[first + 1..=last] {
            *label = label_set.id(Label::Inside(t));
        }
    }
    Ok(EncodedSentence {
        task: task.clone(),
        tokens: wrap_tokens(sentence, task),
        labels,
        provenance: Provenance {
            corpus: String::new(),
            doc_id: sentence.doc_id.clone(),
            sentence_index: sentence.sentence_index,
        },
    })
}

/// Counts of repairs applied while decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeStats {
    /// `I-t` with no open mention.
    pub orphan_inside: usize,
    /// `I-t` directly after a mention of another type.
    pub type_switch: usize,
    /// Outside labels belonging to another task.
    pub off_task: usize,
}

impl DecodeStats {
    pub fn repairs(&self) -> usize {
        self.orphan_inside + self.type_switch
    }

    pub fn absorb(&mut self, other: DecodeStats) {
        self.orphan_inside += other.orphan_inside;
        self.type_switch += other.type_switch;
        self.off_task += other.off_task;
    }
}

/// Token-index spans `(first, last_inclusive, type_index)` of a label
/// sequence, applying the BIO repair rules. Labels outside the task's label
/// set end any open span and are counted as off-task.
pub fn label_spans(labels: &[LabelId], label_set: &LabelSet, task: &TaskTag) -> (Vec<(usize, usize, usize)>, DecodeStats) {
    let mut spans = Vec::new();
    let mut stats = DecodeStats::default();
    let mut open: Option<(usize, usize)> = None;
    let valid = label_set.valid_labels(task);
    for (i, &id) in labels.iter().enumerate() {
        let on_task = valid.get(id.index()).copied().unwrap_or(false);
        match label_set.label(id) {
            Some(Label::Begin(t)) if on_task => {
                if let Some((s, u)) = open.take() {
                    spans.push((s, i - 1, u));
                }
                open = Some((i, t));
            }
            Some(Label::Inside(t)) if on_task => match open {
                Some((_, u)) if u == t => {}
                Some((s, u)) => {
                    stats.type_switch += 1;
                    spans.push((s, i - 1, u));
                    open = Some((i, t));
                }
                None => {
                    stats.orphan_inside += 1;
                    open = Some((i, t));
                }
            },
            _ => {
                if !on_task {
                    stats.off_task += 1;
                }
                if let Some((s, u)) = open.take() {
                    spans.push((s, i - 1, u));
                }
            }
        }
    }
    if let Some((s, u)) = open {
        spans.push((s, labels.len() - 1, u));
    }
    (spans, stats)
}

/// Turns labels back into mentions with document offsets taken from the
/// tokens. Surfaces are rebuilt from token text with the original gap
/// widths filled by spaces.
pub fn decode_labels(encoded: &EncodedSentence, label_set: &LabelSet) -> (Vec<Mention>, DecodeStats) {
    let tokens = encoded.inner_tokens();
    let (spans, stats) = label_spans(&encoded.labels, label_set, &encoded.task);
    let names = label_set.registry().names();
    let mentions = spans
        .into_iter()
        .filter(|&(_, last, _)| last < tokens.len())
        .map(|(first, last, t)| {
            let mut surface = String::new();
            for (k, tok) in tokens[first..=last].iter().enumerate() {
                if k > 0 {
                    let gap = tok.start.saturating_sub(tokens[first + k - 1].end);
                    surface.extend(core::iter::repeat_n(' ', gap));
                }
                surface.push_str(&tok.text);
            }
            Mention::new(tokens[first].start, tokens[last].end, names[t].clone(), surface)
        })
        .collect();
    (mentions, stats)
}

/// One single-type view per declared entity type; every view keeps all
/// documents. Multi-type corpora get `-<Type>` name suffixes.
pub fn split_corpus_by_type(corpus: &Corpus) -> Vec<Corpus> {
    if corpus.entity_types.len() == 1 {
        return alloc::vec![corpus.clone()];
    }
    corpus
        .entity_types
        .iter()
        .map(|ty| {
            let mut view = Corpus::new(format!("{}-{}", corpus.name, ty), [ty.clone()]);
            view.documents = corpus
                .documents
                .iter()
                .map(|d| {
                    let mut d = d.clone();
                    d.mentions.retain(|m| &m.entity_type == ty);
                    d
                })
                .collect();
            view
        })
        .collect()
}

/// Checks that a corpus's declared types fit its task tag.
pub fn check_task_fit(corpus: &Corpus, task: &TaskTag, registry: &EntityTypeRegistry) -> Result<(), SchemeError> {
    let fits = match task {
        TaskTag::Single(t) => registry.contains(t) && corpus.entity_types.iter().all(|d| d == t),
        TaskTag::All => corpus.entity_types.iter().all(|d| registry.contains(d)),
    };
    if fits {
        Ok(())
    } else {
        Err(SchemeError::TaskTypeMismatch {
            corpus: corpus.name.clone(),
            declared: corpus.entity_types.iter().cloned().collect(),
            task: task.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MergeOptions {
    pub split: SplitConfig,
    pub encode: EncodeOptions,
}

/// Encodes every sentence of every corpus under its task tag and shuffles
/// the result deterministically.
pub fn merge_corpora(
    inputs: &[(Corpus, TaskTag)],
    label_set: &LabelSet,
    seed: u64,
    options: &MergeOptions,
) -> Result<Vec<EncodedSentence>, SchemeError> {
    for (corpus, task) in inputs {
        check_task_fit(corpus, task, label_set.registry())?;
        corpus.validate()?;
    }
    let mut out = Vec::new();
    for (corpus, task) in inputs {
        for doc in &corpus.documents {
            for sentence in split_sentences_with(doc, &options.split).sentences {
                let mut enc = encode_sentence(&sentence, task, label_set, options.encode)?;
                enc.provenance.corpus = corpus.name.clone();
                out.push(enc);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum NormalizationRule {
    /// Strips a trailing match of `pattern` from mentions of `entity_type`,
    /// repeatedly, then trims trailing whitespace.
    StripSuffix { entity_type: String, pattern: Regex },
    Retype { from: String, to: String },
}

impl NormalizationRule {
    pub fn strip_suffix(entity_type: impl Into<String>, pattern: &str) -> Result<Self, SchemeError> {
        let anchored = format!("(?:{pattern})$");
        let pattern = Regex::new(&anchored).map_err(|e| SchemeError::BadPattern(e.to_string()))?;
        Ok(NormalizationRule::StripSuffix {
            entity_type: entity_type.into(),
            pattern,
        })
    }

    pub fn retype(from: impl Into<String>, to: impl Into<String>) -> Self {
        NormalizationRule::Retype {
            from: from.into(),
            to: to.into(),
        }
    }

    /// The cell-line suffix cleanup and gene-family merge.
    pub fn builtin() -> Vec<NormalizationRule> {
        alloc::vec![
            NormalizationRule::strip_suffix("CellLine", r"\s+cells?").expect("valid pattern"),
            NormalizationRule::retype("GeneFamily", "Gene"),
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub stripped: usize,
    pub retyped: usize,
    pub dropped: usize,
}

pub fn apply_normalization(corpus: &Corpus, rules: &[NormalizationRule]) -> Corpus {
    normalize_with_report(corpus, rules).0
}

/// Applies rules in order. Stripping a mention down to nothing drops it.
pub fn normalize_with_report(corpus: &Corpus, rules: &[NormalizationRule]) -> (Corpus, NormalizationReport) {
    let mut out = corpus.clone();
    let mut report = NormalizationReport::default();
    for rule in rules {
        match rule {
            NormalizationRule::StripSuffix { entity_type, pattern } => {
                for doc in &mut out.documents {
                    let doc_id = doc.doc_id.clone();
                    doc.mentions.retain_mut(|m| {
                        if &m.entity_type != entity_type {
                            return true;
                        }
                        let mut surface = m.surface.as_str();
                        while let Some(found) = pattern.find(surface) {
                            if found.start() == found.end() {
                                break;
                            }
                            surface = surface[..found.start()].trim_end();
                        }
                        let surface = surface.trim_end();
                        if surface.len() == m.surface.len() {
                            return true;
                        }
                        if surface.is_empty() {
                            log::warn!("{doc_id}: dropping mention {}..{} emptied by suffix rule", m.start, m.end);
                            report.dropped += 1;
                            return false;
                        }
                        let surface = surface.to_string();
                        m.end = m.start + char_len(&surface);
                        m.surface = surface;
                        report.stripped += 1;
                        true
                    });
                }
            }
            NormalizationRule::Retype { from, to } => {
                for m in out.documents.iter_mut().flat_map(|d| d.mentions.iter_mut()) {
                    if &m.entity_type == from {
                        m.entity_type = to.clone();
                        report.retyped += 1;
                    }
                }
                if out.entity_types.remove(from) {
                    out.entity_types.insert(to.clone());
                }
            }
        }
    }
    for doc in &mut out.documents {
        doc.sort_mentions();
    }
    (out, report)
}

/// Training corpus without the documents that also appear in `test`.
pub fn dedup_overlap(train: &Corpus, test: &Corpus) -> Corpus {
    let test_ids: BTreeSet<&str> = test.documents.iter().map(|d| d.doc_id.as_str()).collect();
    let mut out = train.clone();
    out.documents.retain(|d| !test_ids.contains(d.doc_id.as_str()));
    out
}

/// Document-level split into `(train, test)` with
/// `|test| = round(test_fraction * N)`. Both halves keep the input order.
pub fn random_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), SchemeError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SchemeError::BadFraction(test_fraction));
    }
    let n = corpus.documents.len();
    if n == 0 {
        return Err(SchemeError::EmptyCorpus(corpus.name.clone()));
    }
    let n_test = libm::round(test_fraction * n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut is_test = alloc::vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut train = Corpus::new(corpus.name.clone(), corpus.entity_types.iter().cloned());
    let mut test = Corpus::new(corpus.name.clone(), corpus.entity_types.iter().cloned());
    for (doc, &t) in corpus.documents.iter().zip(&is_test) {
        if t {
            test.documents.push(doc.clone());
        } else {
            train.documents.push(doc.clone());
        }
    }
    Ok((train, test))
}

/// Ids of every document in a corpus.
pub fn doc_ids(corpus: &Corpus) -> BTreeSet<String> {
    corpus.documents.iter().map(|d: &Document| d.doc_id.clone()).collect()
}
