//! The batch commands. Every command is a plain function so the binary and
//! the tests drive exactly the same code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aioner_core::corpus::{Corpus, Mention, SplitConfig};
use aioner_core::eval::{evaluate, report_detail, report_table, wilcoxon_signed_rank, EvalReport, PairedSample, WilcoxonResult};
use aioner_core::predict::{predict_combined_with, predict_document_with, DecodeMode, EmissionProvider, PredictOptions};
use aioner_core::scheme::{
    dedup_overlap, label_spans, merge_corpora, normalize_with_report, random_split, split_corpus_by_type, EncodeOptions, EncodedSentence,
    Label, LabelSet, MergeOptions, NormalizationReport, TaskTag,
};
use aioner_core::train::{train_with_observer, CrfModel, StopReason};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{CorpusEntry, CorpusFormat, PipelineConfig, Role};
use crate::conll::{corpus_to_sentences, parse_conll, read_merged, sentences_to_corpus, write_conll, ConversionStats};
use crate::emissions::parse_emissions;
use crate::error::PipelineError;
use crate::model_file::{decode_model, encode_model};
use crate::pubtator::{parse_pubtator, write_pubtator, ParseOptions, ParseWarning};

/// Settings shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct Context {
    /// Overrides the manifest seed.
    pub seed: Option<u64>,
    /// Worker threads for tagging; 0 or 1 runs on the calling thread.
    pub threads: usize,
    /// Parse warnings become errors.
    pub strict: bool,
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn report_warnings(path: &Path, warnings: &[ParseWarning], strict: bool) -> Result<(), PipelineError> {
    for w in warnings {
        log::warn!("{}:{}: document `{}`: {:?}", path.display(), w.line, w.doc_id, w.kind);
    }
    if strict && !warnings.is_empty() {
        return Err(PipelineError::Strict {
            path: path.to_path_buf(),
            count: warnings.len(),
        });
    }
    Ok(())
}

/// Loads a corpus in either format.
pub fn read_corpus(
    path: &Path,
    format: CorpusFormat,
    name: &str,
    entity_types: Option<BTreeSet<String>>,
    label_set: &LabelSet,
    strict: bool,
) -> Result<Corpus, PipelineError> {
    let text = read_text(path)?;
    match format {
        CorpusFormat::Pubtator => {
            let parsed = parse_pubtator(
                &text,
                &ParseOptions {
                    corpus_name: name.to_string(),
                    entity_types,
                    strict,
                },
            )
            .map_err(|e| PipelineError::parse(path, e))?;
            report_warnings(path, &parsed.warnings, strict)?;
            Ok(parsed.corpus)
        }
        CorpusFormat::Conll => {
            let sentences = parse_conll(&text, label_set).map_err(|e| PipelineError::parse(path, e))?;
            let repairs: usize = sentences.iter().map(|s| s.stats.repairs()).sum();
            if repairs > 0 {
                log::warn!("{}: {repairs} BIO repair(s)", path.display());
                if strict {
                    return Err(PipelineError::Strict {
                        path: path.to_path_buf(),
                        count: repairs,
                    });
                }
            }
            let mut corpus = sentences_to_corpus(&sentences, name, entity_types.as_ref());
            if entity_types.is_some() {
                for d in &mut corpus.documents {
                    d.mentions.retain(|m| corpus.entity_types.contains(&m.entity_type));
                }
            }
            Ok(corpus)
        }
    }
}

fn load_entry(entry: &CorpusEntry, label_set: &LabelSet, strict: bool) -> Result<Corpus, PipelineError> {
    let types = entry.entity_types.iter().cloned().collect();
    let mut corpus = read_corpus(&entry.path, entry.format, &entry.name, Some(types), label_set, strict)?;
    for d in &mut corpus.documents {
        d.source_corpus = entry.name.clone();
    }
    Ok(corpus)
}

// ---------------------------------------------------------------- convert

#[derive(Debug, Clone)]
pub struct ConvertOutput {
    pub text: String,
    pub stats: ConversionStats,
}

/// Converts between PubTator and CoNLL. CoNLL output is labeled under the
/// `ALL` task.
pub fn convert(
    input: &Path,
    from: CorpusFormat,
    to: CorpusFormat,
    label_set: &LabelSet,
    split: &SplitConfig,
    ctx: &Context,
) -> Result<ConvertOutput, PipelineError> {
    let corpus = read_corpus(input, from, "converted", None, label_set, ctx.strict)?;
    for t in &corpus.entity_types {
        if !label_set.registry().contains(t) {
            return Err(PipelineError::Config(format!(
                "entity type `{t}` is not in the registry ({})",
                label_set.registry().names().join(", ")
            )));
        }
    }
    match to {
        CorpusFormat::Pubtator => {
            let text = write_pubtator(&corpus).map_err(|e| PipelineError::parse(input, e))?;
            let stats = ConversionStats {
                documents: corpus.documents.len(),
                sentences: 0,
                mentions: corpus.mention_count(),
                repairs: 0,
            };
            Ok(ConvertOutput { text, stats })
        }
        CorpusFormat::Conll => {
            let (sentences, stats) = corpus_to_sentences(&corpus, &TaskTag::All, label_set, split)?;
            Ok(ConvertOutput {
                text: write_conll(&sentences, label_set),
                stats,
            })
        }
    }
}

// ---------------------------------------------------------------- split / normalize

/// Document-level random split of a PubTator file.
pub fn split(input: &Path, test_fraction: f64, seed: u64, ctx: &Context) -> Result<(String, String), PipelineError> {
    let corpus = read_corpus(input, CorpusFormat::Pubtator, "split", None, &LabelSet::new(Default::default()), ctx.strict)?;
    let (train, test) = random_split(&corpus, test_fraction, seed)?;
    let w = |c: &Corpus| write_pubtator(c).map_err(|e| PipelineError::parse(input, e));
    Ok((w(&train)?, w(&test)?))
}

/// Applies the manifest's rules to a PubTator file.
pub fn normalize(input: &Path, cfg: &PipelineConfig, ctx: &Context) -> Result<(String, NormalizationReport), PipelineError> {
    let corpus = read_corpus(input, CorpusFormat::Pubtator, "normalize", None, &cfg.label_set()?, ctx.strict)?;
    let (out, report) = normalize_with_report(&corpus, &cfg.load_rules()?);
    Ok((write_pubtator(&out).map_err(|e| PipelineError::parse(input, e))?, report))
}

// ---------------------------------------------------------------- merge

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub documents: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub mentions: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.documents += o.documents;
        self.sentences += o.sentences;
        self.tokens += o.tokens;
        self.mentions += o.mentions;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViewCounts {
    pub name: String,
    pub task: String,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeReport {
    pub seed: u64,
    pub views: Vec<ViewCounts>,
    pub total: Counts,
    /// Training documents dropped because a test corpus has the same id.
    pub removed_duplicates: usize,
    pub normalization: NormalizationReport,
}

pub fn sentence_counts(sentences: &[EncodedSentence], label_set: &LabelSet) -> Counts {
    let docs: BTreeSet<(&str, &str)> = sentences
        .iter()
        .map(|s| (s.provenance.corpus.as_str(), s.provenance.doc_id.as_str()))
        .collect();
    Counts {
        documents: docs.len(),
        sentences: sentences.len(),
        tokens: sentences.iter().map(|s| s.len()).sum(),
        mentions: sentences
            .iter()
            .flat_map(|s| &s.labels)
            .filter(|&&l| matches!(label_set.label(l), Some(Label::Begin(_))))
            .count(),
    }
}

#[derive(Debug, Clone)]
pub struct MergeOutput {
    pub sentences: Vec<EncodedSentence>,
    pub report: MergeReport,
}

/// Builds the AIO training set of a manifest: split by type, normalize,
/// drop documents shared with a test corpus, then encode and shuffle.
pub fn merge(cfg: &PipelineConfig, ctx: &Context) -> Result<MergeOutput, PipelineError> {
    let label_set = cfg.label_set()?;
    let rules = cfg.load_rules()?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let mut test_ids = Corpus::new("test", Vec::<String>::new());
    for entry in cfg.corpora_with_role(Role::Test) {
        let c = load_entry(entry, &label_set, ctx.strict)?;
        for d in c.documents {
            if !test_ids.documents.iter().any(|t| t.doc_id == d.doc_id) {
                test_ids.documents.push(d);
            }
        }
    }
    let mut inputs: Vec<(Corpus, TaskTag)> = Vec::new();
    let mut normalization = NormalizationReport::default();
    let mut removed = 0;
    for entry in cfg.corpora_with_role(Role::Train) {
        let corpus = load_entry(entry, &label_set, ctx.strict)?;
        // Normalize before splitting so a retyped type joins its target view.
        let (corpus, report) = normalize_with_report(&corpus, &rules);
        normalization.stripped += report.stripped;
        normalization.retyped += report.retyped;
        normalization.dropped += report.dropped;
        let kept = dedup_overlap(&corpus, &test_ids);
        let dropped = corpus.documents.len() - kept.documents.len();
        if dropped > 0 {
            log::info!("{}: removed {dropped} document(s) shared with a test corpus", entry.name);
        }
        removed += dropped;
        let views: Vec<(Corpus, Option<TaskTag>)> = match cfg.task_of(entry)? {
            Some(task) => vec![(kept, Some(task))],
            None => split_corpus_by_type(&kept).into_iter().map(|v| (v, None)).collect(),
        };
        for (view, task) in views {
            let task = match task {
                Some(t) => t,
                None => {
                    let ty = view.entity_types.iter().next().cloned().unwrap_or_default();
                    label_set.registry().parse_task(&ty).map_err(|e| PipelineError::Config(format!("corpus `{}`: {e}", view.name)))?
                }
            };
            inputs.push((view, task));
        }
    }
    let options = MergeOptions {
        split: cfg.split_config(),
        encode: EncodeOptions {
            keep_longest: cfg.keep_longest,
        },
    };
    let sentences = merge_corpora(&inputs, &label_set, seed, &options)?;
    let mut views = Vec::new();
    let mut total = Counts::default();
    for (corpus, task) in &inputs {
        let own: Vec<EncodedSentence> = sentences.iter().filter(|s| s.provenance.corpus == corpus.name).cloned().collect();
        let counts = sentence_counts(&own, &label_set);
        total.add(&counts);
        views.push(ViewCounts {
            name: corpus.name.clone(),
            task: task.name().to_string(),
            counts,
        });
    }
    Ok(MergeOutput {
        sentences,
        report: MergeReport {
            seed,
            views,
            total,
            removed_duplicates: removed,
            normalization,
        },
    })
}

/// [`merge`], writing the merged file and the JSON report.
pub fn cmd_merge(cfg: &PipelineConfig, ctx: &Context) -> Result<MergeReport, PipelineError> {
    let label_set = cfg.label_set()?;
    let out = merge(cfg, ctx)?;
    write_file(&cfg.output.merged(), write_conll(&out.sentences, &label_set))?;
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    write_file(&cfg.output.merge_report(), json + "\n")?;
    Ok(out.report)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub sha256: String,
    pub epochs_run: u32,
    pub best_epoch: u32,
    pub best_dev_f1: f64,
    pub stop_reason: StopReason,
}

/// Trains on a merged file and writes the model plus a JSON-lines log.
pub fn cmd_train(cfg: &PipelineConfig, merged: Option<&Path>, ctx: &Context) -> Result<TrainSummary, PipelineError> {
    let label_set = cfg.label_set()?;
    let merged_path = merged.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.merged());
    let text = read_text(&merged_path)?;
    let (sentences, stats) = read_merged(&text, &label_set).map_err(|e| PipelineError::parse(&merged_path, e))?;
    if stats.repairs() > 0 {
        log::warn!("{}: {} BIO repair(s) while reading", merged_path.display(), stats.repairs());
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = ctx.seed.unwrap_or(cfg.seed);
    let mut log_lines = String::new();
    let outcome = train_with_observer(&sentences, &label_set, &train_cfg, |rec| {
        log::info!("epoch {}: train LL {:.4}, dev F1 {:.4}{}", rec.epoch, rec.train_log_likelihood, rec.dev_f1, if rec.improved { " *" } else { "" });
        log_lines.push_str(&serde_json::to_string(rec).expect("record serializes"));
        log_lines.push('\n');
    })?;
    let bytes = encode_model(&outcome.model);
    let sha256 = sha256_hex(&bytes);
    let model_path = cfg.output.model();
    write_file(&model_path, &bytes)?;
    let meta = &outcome.model.meta;
    let summary = TrainSummary {
        model: model_path,
        sha256,
        epochs_run: meta.epochs_run,
        best_epoch: meta.best_epoch,
        best_dev_f1: meta.best_dev_f1,
        stop_reason: meta.stop_reason,
    };
    #[derive(Serialize)]
    struct Done<'a> {
        done: bool,
        stop_reason: StopReason,
        best_epoch: u32,
        best_dev_f1: f64,
        sha256: &'a str,
    }
    log_lines.push_str(
        &serde_json::to_string(&Done {
            done: true,
            stop_reason: summary.stop_reason,
            best_epoch: summary.best_epoch,
            best_dev_f1: summary.best_dev_f1,
            sha256: &summary.sha256,
        })
        .expect("record serializes"),
    );
    log_lines.push('\n');
    write_file(&cfg.output.train_log(), log_lines)?;
    Ok(summary)
}

pub fn load_model(path: &Path) -> Result<CrfModel, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    decode_model(&bytes).map_err(|e| PipelineError::parse(path, e))
}

// ---------------------------------------------------------------- tag

#[derive(Debug, Clone, Default)]
pub struct TagRequest<'a> {
    /// Decode with this single task tag instead of `mode`.
    pub task: Option<&'a str>,
    pub mode: DecodeMode,
    pub emissions: Option<&'a Path>,
    pub split: SplitConfig,
}

#[derive(Debug, Clone)]
pub struct TagOutput {
    pub corpus: Corpus,
    pub text: String,
    pub per_type: BTreeMap<String, usize>,
}

fn tag_with<P: EmissionProvider + Sync>(
    corpus: &Corpus,
    model: &CrfModel,
    provider: &P,
    task: Option<&TaskTag>,
    mode: DecodeMode,
    options: &PredictOptions,
    threads: usize,
) -> Result<Vec<Vec<Mention>>, PipelineError> {
    let one = |doc: &aioner_core::corpus::Document| match task {
        Some(t) => predict_document_with(doc, t, model, provider, options),
        None => predict_combined_with(doc, model, mode, provider, options),
    };
    let docs = &corpus.documents;
    if threads <= 1 || docs.len() < 2 {
        return docs.iter().map(|d| one(d).map_err(PipelineError::from)).collect();
    }
    let chunk = docs.len().div_ceil(threads);
    let results: Vec<Result<Vec<Vec<Mention>>, PipelineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = docs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|d| one(d).map_err(PipelineError::from)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("tagging thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(docs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Tags a PubTator file. Existing annotations in the input are ignored.
pub fn cmd_tag(model_path: &Path, input: &Path, request: &TagRequest<'_>, ctx: &Context) -> Result<TagOutput, PipelineError> {
    let model = load_model(model_path)?;
    let registry = model.label_set.registry().clone();
    let task = request
        .task
        .map(|t| registry.parse_task(t))
        .transpose()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut corpus = read_corpus(input, CorpusFormat::Pubtator, "tagged", None, &model.label_set, ctx.strict)?;
    let options = PredictOptions {
        masked: true,
        split: request.split,
    };
    let predicted = match request.emissions {
        Some(path) => {
            let ext = parse_emissions(&read_text(path)?, Some(model.label_set.len())).map_err(|e| PipelineError::parse(path, e))?;
            tag_with(&corpus, &model, &ext, task.as_ref(), request.mode, &options, ctx.threads)?
        }
        None => {
            let scorer = model.scorer().ok_or(PipelineError::Config("model has no built-in scorer; pass --emissions".into()))?;
            tag_with(&corpus, &model, scorer, task.as_ref(), request.mode, &options, ctx.threads)?
        }
    };
    let mut per_type: BTreeMap<String, usize> = registry.names().iter().map(|n| (n.clone(), 0)).collect();
    corpus.entity_types = registry.names().iter().cloned().collect();
    for (doc, mentions) in corpus.documents.iter_mut().zip(predicted) {
        for m in &mentions {
            *per_type.entry(m.entity_type.clone()).or_default() += 1;
        }
        doc.mentions = mentions;
        doc.relations.clear();
    }
    let text = write_pubtator(&corpus).map_err(|e| PipelineError::parse(input, e))?;
    Ok(TagOutput { corpus, text, per_type })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub table: String,
    pub detail: String,
    pub json: String,
}

/// Scores a predicted PubTator file against a gold one. Both files must
/// hold the same documents with the same text.
pub fn cmd_eval(gold: &Path, pred: &Path, type_order: &[String], ctx: &Context) -> Result<EvalOutput, PipelineError> {
    let ls = LabelSet::new(Default::default());
    let gold_corpus = read_corpus(gold, CorpusFormat::Pubtator, "gold", None, &ls, ctx.strict)?;
    let pred_corpus = read_corpus(pred, CorpusFormat::Pubtator, "pred", None, &ls, ctx.strict)?;
    let gold_ids: BTreeMap<&str, &str> = gold_corpus.documents.iter().map(|d| (d.doc_id.as_str(), d.text.as_str())).collect();
    let pred_ids: BTreeMap<&str, &str> = pred_corpus.documents.iter().map(|d| (d.doc_id.as_str(), d.text.as_str())).collect();
    if let Some(id) = gold_ids.keys().find(|k| !pred_ids.contains_key(*k)) {
        return Err(PipelineError::Mismatch(format!("document `{id}` is missing from the predictions")));
    }
    for (id, text) in &pred_ids {
        match gold_ids.get(id) {
            None => return Err(PipelineError::Mismatch(format!("predicted document `{id}` is not in the gold file"))),
            Some(g) if g != text => return Err(PipelineError::Mismatch(format!("document `{id}` has different text in the two files"))),
            _ => {}
        }
    }
    let predicted: BTreeMap<String, Vec<Mention>> = pred_corpus.documents.into_iter().map(|d| (d.doc_id, d.mentions)).collect();
    let report = evaluate(&gold_corpus, &predicted, type_order)?;
    let table = report_table(&[(pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), report.clone())]);
    let detail = report_detail(&report);
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    Ok(EvalOutput {
        report,
        table,
        detail,
        json,
    })
}

// ---------------------------------------------------------------- compare

/// Per-run scores, one number per line; `#` comments and blank lines are
/// skipped.
pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<f64>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| PipelineError::parse(path, crate::error::FormatError::syntax(i + 1, format!("not a number: {line:?}"))))?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub result: WilcoxonResult,
    pub significant: bool,
    pub text: String,
}

pub fn cmd_compare(runs_a: &Path, runs_b: &Path) -> Result<CompareOutput, PipelineError> {
    let a = parse_scores(&read_text(runs_a)?, runs_a)?;
    let b = parse_scores(&read_text(runs_b)?, runs_b)?;
    if a.len() != b.len() {
        return Err(PipelineError::Mismatch(format!("{} runs in A but {} in B", a.len(), b.len())));
    }
    let sample = PairedSample::new(&a, &b)?;
    let result = wilcoxon_signed_rank(&sample)?;
    let significant = result.p_value < 0.05;
    let mut text = String::new();
    let _ = writeln!(text, "pairs\t{}", a.len());
    let _ = writeln!(text, "effective\t{}", result.effective);
    let _ = writeln!(text, "W\t{}", result.statistic);
    let _ = writeln!(text, "W+\t{}", result.w_plus);
    let _ = writeln!(text, "W-\t{}", result.w_minus);
    let _ = writeln!(text, "p\t{:.6}", result.p_value);
    let _ = writeln!(text, "method\t{}", if result.exact { "exact" } else { "normal" });
    let _ = writeln!(text, "significant_0.05\t{}", if significant { "yes" } else { "no" });
    Ok(CompareOutput {
        result,
        significant,
        text,
    })
}

/// Mentions per type in a set of encoded sentences, for conversion stats.
pub fn mention_types(sentences: &[EncodedSentence], label_set: &LabelSet) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for s in sentences {
        for (_, _, t) in label_spans(&s.labels, label_set, &s.task).0 {
            *out.entry(label_set.registry().names()[t].clone()).or_default() += 1;
        }
    }
    out
}
