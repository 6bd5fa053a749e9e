//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Every check compares the library against an
//! oracle written here from first principles.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use aioner::config::PipelineConfig;
use aioner::conll::{corpus_to_sentences, parse_conll, sentences_to_corpus, write_conll};
use aioner::pipeline::{self, Context, TagRequest};
use aioner::pubtator::{parse_pubtator, write_pubtator, ParseOptions, WarningKind};
use aioner_core::corpus::{Corpus, Document, Mention, SplitConfig, Token, TokenizedSentence};
use aioner_core::crf::{log_partition_masked, viterbi, EmissionMatrix, TransitionTable};
use aioner_core::eval::{evaluate, wilcoxon_signed_rank, Counts, PairedSample};
use aioner_core::features::{FeatureScorer, FeatureTemplate};
use aioner_core::predict::{predict_combined_with, predict_document_with, DecodeMode, ExternalEmissions, PredictOptions};
use aioner_core::scheme::{
    decode_labels, encode_sentence, merge_corpora, EncodeOptions, EntityTypeRegistry, LabelSet, MergeOptions, TaskTag,
};
use aioner_core::train::{corpus_log_likelihood, gradient, CrfModel, MaskMode};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u8, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn registry(names: &[&str]) -> EntityTypeRegistry {
    EntityTypeRegistry::new(names.iter().copied()).unwrap()
}

// ------------------------------------------------------------ criterion 1

/// Exhaustive path enumeration. Returns the best score, the winning path
/// under the tie rule (smallest when read from the last position
/// backwards) and log Z.
fn enumerate_paths(n: usize, k: usize, start: &[f64], trans: &[f64], em: &[f64], allowed: &[bool]) -> (f64, Vec<usize>, f64) {
    let labels: Vec<usize> = (0..k).filter(|&y| allowed[y]).collect();
    let mut idx = vec![0usize; n];
    let mut scored: Vec<(f64, Vec<usize>)> = Vec::new();
    loop {
        let path: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut s = start[path[0]] + em[path[0]];
        for i in 1..n {
            s += trans[path[i - 1] * k + path[i]] + em[i * k + path[i]];
        }
        scored.push((s, path));
        // odometer
        let mut pos = 0;
        loop {
            if pos == n {
                let best = scored.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                let winner = scored
                    .iter()
                    .filter(|p| p.0 >= best - 1e-9)
                    .map(|p| p.1.iter().rev().copied().collect::<Vec<_>>())
                    .min()
                    .unwrap()
                    .into_iter()
                    .rev()
                    .collect();
                let log_z = best + scored.iter().map(|p| (p.0 - best).exp()).sum::<f64>().ln();
                return (best, winner, log_z);
            }
            idx[pos] += 1;
            if idx[pos] < labels.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn c1_crf_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let instances = 1200;
    let (mut max_err, mut ties, mut masked) = (0.0f64, 0usize, 0usize);
    for inst in 0..instances {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=7);
        // every fourth instance uses small integers so exact ties occur
        let integer = inst % 4 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            if integer {
                rng.random_range(-2i32..=2) as f64
            } else {
                rng.random_range(-3.0..3.0)
            }
        };
        let start: Vec<f64> = (0..k).map(|_| draw(&mut rng)).collect();
        let trans: Vec<f64> = (0..k * k).map(|_| draw(&mut rng)).collect();
        let em: Vec<f64> = (0..n * k).map(|_| draw(&mut rng)).collect();
        let mask: Option<Vec<bool>> = (inst % 3 == 1).then(|| {
            let mut m: Vec<bool> = (0..k).map(|_| rng.random_bool(0.6)).collect();
            let keep = rng.random_range(0..k);
            m[keep] = true;
            m
        });
        let allowed = mask.clone().unwrap_or_else(|| vec![true; k]);
        masked += mask.is_some() as usize;
        let (best, want, want_z) = enumerate_paths(n, k, &start, &trans, &em, &allowed);
        let emissions = EmissionMatrix::from_flat(n, k, em.clone()).unwrap();
        let table = TransitionTable::from_parts(start.clone(), trans.clone()).unwrap();
        let (path, score) = viterbi(&emissions, &table, mask.as_deref()).map_err(|e| e.to_string())?;
        let got: Vec<usize> = path.iter().map(|y| y.index()).collect();
        if integer {
            let optimal = count_optimal(n, k, &start, &trans, &em, &allowed, best);
            ties += (optimal > 1) as usize;
        }
        ensure(got == want, || format!("instance {inst} (n={n}, K={k}): viterbi {got:?}, enumeration {want:?}"))?;
        ensure((score - best).abs() <= 1e-9, || format!("instance {inst}: viterbi score {score} vs {best}"))?;
        let z = log_partition_masked(&emissions, &table, mask.as_deref()).map_err(|e| e.to_string())?;
        let err = (z - want_z).abs();
        max_err = max_err.max(err);
        ensure(err <= 1e-8, || format!("instance {inst}: log Z {z} vs {want_z}"))?;
    }
    Ok(format!(
        "{instances} instances ({masked} masked, {ties} with tied optima), max |log Z error| {max_err:.1e} <= 1e-8"
    ))
}

fn count_optimal(n: usize, k: usize, start: &[f64], trans: &[f64], em: &[f64], allowed: &[bool], best: f64) -> usize {
    let labels: Vec<usize> = (0..k).filter(|&y| allowed[y]).collect();
    let total = labels.len().pow(n as u32);
    (0..total)
        .filter(|code| {
            let mut c = *code;
            let path: Vec<usize> = (0..n)
                .map(|_| {
                    let y = labels[c % labels.len()];
                    c /= labels.len();
                    y
                })
                .collect();
            let mut s = start[path[0]] + em[path[0]];
            for i in 1..n {
                s += trans[path[i - 1] * k + path[i]] + em[i * k + path[i]];
            }
            s == best
        })
        .count()
}

// ------------------------------------------------------------ criterion 2

const WORDS: &[&str] = &[
    "kinase", "binds", "the", "receptor", "Tumor", "cells", "IL", "-", "2", "mutant", "alpha", "NF", "κB", "in", "patients",
    "with", "p53", "BRCA", "1", "loss", "of", "function", "syndrome", "(", ")", "CD4", "+", "T", "levels", "were",
];

fn random_sentence(rng: &mut ChaCha8Rng, n: usize, doc_id: &str) -> TokenizedSentence {
    let mut tokens = Vec::with_capacity(n);
    let mut pos = 0;
    for _ in 0..n {
        let w = *WORDS.choose(rng).unwrap();
        let len = w.chars().count();
        tokens.push(Token::new(w, pos, pos + len));
        pos += len + 1;
    }
    TokenizedSentence {
        doc_id: doc_id.to_string(),
        sentence_index: 0,
        start: 0,
        end: pos.saturating_sub(1),
        tokens,
        aligned_mentions: Vec::new(),
    }
}

/// Random non-overlapping token spans `(first, last)`.
fn random_spans(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n && spans.len() < max {
        if rng.random_bool(0.35) {
            let last = (i + rng.random_range(0..3)).min(n - 1);
            spans.push((i, last));
            i = last + 1 + rng.random_range(0..2);
        } else {
            i += 1;
        }
    }
    spans
}

fn attach_mentions(sentence: &mut TokenizedSentence, spans: &[(usize, usize)], types: &[String]) {
    sentence.aligned_mentions = spans
        .iter()
        .zip(types)
        .map(|(&(a, b), t)| {
            let surface: Vec<&str> = sentence.tokens[a..=b].iter().map(|t| t.text.as_str()).collect();
            Mention::new(sentence.tokens[a].start, sentence.tokens[b].end, t.clone(), surface.join(" "))
        })
        .collect();
}

fn c2_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let instances = 110;
    let h = 1e-5;
    let (mut worst, mut coords, mut min_features, mut max_k) = (0.0f64, 0usize, usize::MAX, 0usize);
    for inst in 0..instances {
        // registry sizes 1..=6, so K = 3R + 1 ranges over 4..=19; every
        // fifth instance uses the full registry
        let r = if inst % 5 == 0 { 6 } else { rng.random_range(1..=6) };
        let names = &EntityTypeRegistry::DEFAULT_TYPES[..r];
        let ls = LabelSet::new(registry(names));
        let k = ls.len();
        max_k = max_k.max(k);
        let mut scorer = FeatureScorer::new(12, k, FeatureTemplate::default_set());
        for w in scorer.weights.iter_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        let mut model = CrfModel::new(ls.clone(), scorer);
        for v in model.transition.start.iter_mut().chain(model.transition.trans.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let n = rng.random_range(6..=8);
        let task = if rng.random_bool(0.4) {
            TaskTag::All
        } else {
            TaskTag::Single(names.choose(&mut rng).unwrap().to_string())
        };
        let mut sentence = random_sentence(&mut rng, n, "g");
        let spans = random_spans(&mut rng, n, 3);
        let types: Vec<String> = spans
            .iter()
            .map(|_| match &task {
                TaskTag::Single(t) => t.clone(),
                TaskTag::All => names.choose(&mut rng).unwrap().to_string(),
            })
            .collect();
        attach_mentions(&mut sentence, &spans, &types);
        let enc = encode_sentence(&sentence, &task, &ls, EncodeOptions::default()).map_err(|e| e.to_string())?;
        let mode = if inst % 2 == 0 { MaskMode::Unmasked } else { MaskMode::TaskMasked };
        let batch = [enc];
        let (grad, _) = gradient(&batch, &model, mode).map_err(|e| e.to_string())?;

        let fired: BTreeSet<u32> = model.scorer().unwrap().extract(&batch[0]).into_iter().flatten().collect();
        min_features = min_features.min(fired.len());
        ensure(fired.len() >= 50, || format!("instance {inst}: only {} distinct features fired", fired.len()))?;
        let base = k + k * k;
        let mut check: Vec<usize> = (0..base).collect();
        for &b in &fired {
            check.extend((0..k).map(|y| base + b as usize * k + y));
        }
        // a few weights of features that never fire: both sides must be 0
        for _ in 0..10 {
            let b = rng.random_range(0..(1usize << 12));
            if !fired.contains(&(b as u32)) {
                check.push(base + b * k + rng.random_range(0..k));
            }
        }
        for idx in check {
            let theta = model.param(idx);
            model.set_param(idx, theta + h);
            let up = corpus_log_likelihood(&batch, &model, mode).map_err(|e| e.to_string())?;
            model.set_param(idx, theta - h);
            let down = corpus_log_likelihood(&batch, &model, mode).map_err(|e| e.to_string())?;
            model.set_param(idx, theta);
            let fd = (up - down) / (2.0 * h);
            let a = grad.flat(idx);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
            coords += 1;
            ensure(rel <= 1e-5, || format!("instance {inst}, parameter {idx}: analytic {a:.9e}, finite difference {fd:.9e} (rel {rel:.2e})"))?;
        }
    }
    Ok(format!(
        "{instances} instances, K up to {max_k}, >= {min_features} features each, {coords} coordinates, max rel error {worst:.1e} <= 1e-5"
    ))
}

// ------------------------------------------------------------ criterion 3

fn expected_label_names(n: usize, spans: &[(usize, usize)], types: &[String], task: &TaskTag) -> Vec<String> {
    let outside = match task {
        TaskTag::All => "O-ALL".to_string(),
        TaskTag::Single(t) => format!("O-{t}"),
    };
    let mut names = vec![outside; n];
    for (&(a, b), t) in spans.iter().zip(types) {
        names[a] = format!("B-{t}");
        for slot in names.iter_mut().take(b + 1).skip(a + 1) {
            *slot = format!("I-{t}");
        }
    }
    names
}

const PLAIN_WORDS: &[&str] = &[
    "kinase", "binding", "tumour", "cellular", "receptor", "mutant", "patients", "protein", "levels", "increased", "signal",
    "pathway", "therapy", "clinical", "allele", "disorder", "response", "marker", "sample", "cohort",
];

/// A document of sentences built from plain lowercase words, each
/// sentence started by a capitalized word and ended by a period. Returns
/// the document plus its sentence and token counts.
fn plain_document(rng: &mut ChaCha8Rng, id: &str, task: &TaskTag, types: &[&str]) -> (Document, usize, usize) {
    let n_sent = rng.random_range(1..=4);
    let mut text = String::new();
    let mut mentions = Vec::new();
    let mut tokens = 0;
    for s in 0..n_sent {
        if s == 1 {
            text.push('\n');
        } else if s > 1 {
            text.push(' ');
        }
        let n_words = rng.random_range(3..=12);
        let spans = random_spans(rng, n_words, 3).into_iter().filter(|&(a, _)| a > 0).collect::<Vec<_>>();
        let mut word_starts = Vec::new();
        for w in 0..n_words {
            if w > 0 {
                text.push(' ');
            }
            word_starts.push(text.chars().count());
            let word = PLAIN_WORDS.choose(rng).unwrap();
            if w == 0 {
                let mut c = word.chars();
                let first = c.next().unwrap().to_uppercase().collect::<String>();
                text.push_str(&first);
                text.push_str(c.as_str());
            } else {
                text.push_str(word);
            }
        }
        let sentence_end = text.chars().count();
        text.push('.');
        tokens += n_words + 1;
        for (a, b) in spans {
            let start = word_starts[a];
            let end = if b + 1 < n_words { word_starts[b + 1] - 1 } else { sentence_end };
            let ty = match task {
                TaskTag::Single(t) => t.clone(),
                TaskTag::All => types.choose(rng).unwrap().to_string(),
            };
            let surface: String = text.chars().skip(start).take(end - start).collect();
            mentions.push(Mention::new(start, end, ty, surface));
        }
    }
    let mut doc = Document::new(id, text);
    doc.mentions = mentions;
    doc.sort_mentions();
    (doc, n_sent, tokens)
}

fn c3_scheme_laws() -> Outcome {
    let default = LabelSet::new(EntityTypeRegistry::default());
    ensure(default.len() == 19, || format!("default registry has {} labels, expected 19", default.len()))?;
    for r in 1..=6 {
        let ls = LabelSet::new(registry(&EntityTypeRegistry::DEFAULT_TYPES[..r]));
        ensure(ls.len() == 3 * r + 1, || format!("registry of {r} types has {} labels", ls.len()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let types = EntityTypeRegistry::DEFAULT_TYPES;
    let trips = 10_000;
    let mut mention_total = 0;
    for i in 0..trips {
        let n = rng.random_range(1..=30);
        let task = if rng.random_bool(0.5) {
            TaskTag::All
        } else {
            TaskTag::Single(types.choose(&mut rng).unwrap().to_string())
        };
        let mut sentence = random_sentence(&mut rng, n, "r");
        let spans = random_spans(&mut rng, n, 6);
        let tys: Vec<String> = spans
            .iter()
            .map(|_| match &task {
                TaskTag::Single(t) => t.clone(),
                TaskTag::All => types.choose(&mut rng).unwrap().to_string(),
            })
            .collect();
        attach_mentions(&mut sentence, &spans, &tys);
        mention_total += spans.len();
        let enc = encode_sentence(&sentence, &task, &default, EncodeOptions::default()).map_err(|e| format!("sentence {i}: {e}"))?;
        let names: Vec<String> = enc.labels.iter().map(|&l| default.name(l)).collect();
        let want = expected_label_names(n, &spans, &tys, &task);
        ensure(names == want, || format!("sentence {i}: labels {names:?}, expected {want:?}"))?;
        ensure(
            enc.tokens.first().map(|t| t.text.clone()) == Some(task.open_sentinel())
                && enc.tokens.last().map(|t| t.text.clone()) == Some(task.close_sentinel())
                && enc.tokens.len() == n + 2,
            || format!("sentence {i}: sentinels missing"),
        )?;
        let (decoded, stats) = decode_labels(&enc, &default);
        let got: Vec<(usize, usize, String)> = decoded.iter().map(|m| (m.start, m.end, m.entity_type.clone())).collect();
        let want: Vec<(usize, usize, String)> = sentence.aligned_mentions.iter().map(|m| (m.start, m.end, m.entity_type.clone())).collect();
        ensure(got == want && stats.repairs() == 0, || format!("sentence {i}: decoded {got:?}, expected {want:?}"))?;
    }

    // merge conservation against counts taken while generating
    let combos = 200;
    for c in 0..combos {
        let n_corpora = rng.random_range(1..=4);
        let mut inputs = Vec::new();
        let mut want: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
        for j in 0..n_corpora {
            let task = if rng.random_bool(0.4) {
                TaskTag::All
            } else {
                TaskTag::Single(types.choose(&mut rng).unwrap().to_string())
            };
            let declared: Vec<&str> = match &task {
                TaskTag::All => types.to_vec(),
                TaskTag::Single(t) => vec![t.as_str()],
            };
            let name = format!("c{c}_{j}");
            let mut corpus = Corpus::new(&name, declared.iter().copied());
            let entry = want.entry(name.clone()).or_default();
            for d in 0..rng.random_range(0..=5) {
                let (doc, sents, toks) = plain_document(&mut rng, &format!("{name}_d{d}"), &task, &types);
                entry.0 += sents;
                entry.1 += toks;
                entry.2 += doc.mentions.len();
                corpus.push(doc).unwrap();
            }
            inputs.push((corpus, task));
        }
        let merged = merge_corpora(&inputs, &default, c as u64, &MergeOptions::default()).map_err(|e| e.to_string())?;
        let mut got: BTreeMap<String, (usize, usize, usize)> = want.keys().map(|k| (k.clone(), (0, 0, 0))).collect();
        for s in &merged {
            let e = got.entry(s.provenance.corpus.clone()).or_default();
            e.0 += 1;
            e.1 += s.len();
            e.2 += s.labels.iter().filter(|&&l| default.name(l).starts_with("B-")).count();
        }
        ensure(got == want, || format!("combination {c}: merged counts {got:?}, expected {want:?}"))?;
        let total: (usize, usize, usize) = want.values().fold((0, 0, 0), |a, v| (a.0 + v.0, a.1 + v.1, a.2 + v.2));
        ensure(merged.len() == total.0, || format!("combination {c}: {} sentences, expected {}", merged.len(), total.0))?;
    }
    Ok(format!("19 labels; {trips} round trips ({mention_total} mentions) exact; {combos} merges conserve sentences, tokens, mentions"))
}

// ------------------------------------------------------------ criterion 4

fn parse_file(name: &str, strict: bool) -> Result<aioner::pubtator::Parsed, String> {
    let text = std::fs::read_to_string(fixture(name)).map_err(|e| e.to_string())?;
    parse_pubtator(
        &text,
        &ParseOptions {
            corpus_name: name.into(),
            entity_types: None,
            strict,
        },
    )
    .map_err(|e| format!("{name}: {e}"))
}

/// Mentions keyed by their type and token sequence; CoNLL keeps tokens but
/// not the original spacing.
fn token_keyed(corpus: &Corpus) -> BTreeSet<(String, String, Vec<String>)> {
    corpus
        .documents
        .iter()
        .flat_map(|d| {
            d.mentions.iter().map(|m| {
                let toks = aioner_core::corpus::tokenize(&m.surface, 0).into_iter().map(|t| t.text).collect();
                (d.doc_id.clone(), m.entity_type.clone(), toks)
            })
        })
        .collect()
}

fn c4_format_fidelity() -> Outcome {
    let ls = LabelSet::new(EntityTypeRegistry::default());
    let canonical = ["titles_only.pubtator", "overlaps.pubtator", "unicode.pubtator", "mixed.pubtator"];
    let mut docs = 0;
    for name in canonical {
        let raw = std::fs::read_to_string(fixture(name)).map_err(|e| e.to_string())?;
        let parsed = parse_file(name, false)?;
        ensure(parsed.warnings.is_empty(), || format!("{name}: unexpected warnings {:?}", parsed.warnings))?;
        docs += parsed.corpus.documents.len();
        let written = write_pubtator(&parsed.corpus).map_err(|e| e.to_string())?;
        ensure(written == raw, || format!("{name}: PubTator write is not a fixed point"))?;
        for d in &parsed.corpus.documents {
            for m in &d.mentions {
                ensure(d.slice(m.start, m.end) == Some(m.surface.as_str()), || format!("{name}: offsets of {:?} are wrong", m.surface))?;
            }
        }

        // CoNLL: overlaps cannot be expressed, so compare with the longest
        // mention of each cluster
        let (sentences, _) =
            corpus_to_sentences(&parsed.corpus, &TaskTag::All, &ls, &SplitConfig::default()).map_err(|e| e.to_string())?;
        let conll = write_conll(&sentences, &ls);
        let reread = parse_conll(&conll, &ls).map_err(|e| format!("{name}: {e}"))?;
        let encoded: Vec<_> = reread.iter().map(|s| s.encoded.clone()).collect();
        ensure(write_conll(&encoded, &ls) == conll, || format!("{name}: CoNLL write is not a fixed point"))?;
        let back = sentences_to_corpus(&reread, name, None);
        let mut expected = parsed.corpus.clone();
        for d in &mut expected.documents {
            d.mentions = longest_per_cluster(&d.mentions);
        }
        let (a, b) = (token_keyed(&expected), token_keyed(&back));
        ensure(a == b, || format!("{name}: CoNLL round trip changed mentions: {:?}", a.symmetric_difference(&b).collect::<Vec<_>>()))?;
        let again = write_pubtator(&back).map_err(|e| e.to_string())?;
        let second = parse_pubtator(&again, &ParseOptions::default()).map_err(|e| e.to_string())?;
        ensure(write_pubtator(&second.corpus).unwrap() == again, || format!("{name}: converted PubTator is not a fixed point"))?;
    }

    // corrupted offsets: relocation without --strict, drops and exit 3 with it
    let lenient = parse_file("corrupted.pubtator", false)?;
    let kinds: Vec<&WarningKind> = lenient.warnings.iter().map(|w| &w.kind).collect();
    ensure(
        matches!(kinds.as_slice(), [WarningKind::Relocated { from: (11, 24), to: (10, 23) }, WarningKind::Dropped { .. }]),
        || format!("lenient warnings {kinds:?}"),
    )?;
    ensure(lenient.warnings.iter().all(|w| w.line > 0 && w.doc_id == "5001"), || "warnings lack a location".into())?;
    let doc = &lenient.corpus.documents[0];
    ensure(doc.mentions.len() == 2 && doc.mentions[1].start == 10, || format!("lenient mentions {:?}", doc.mentions))?;
    let strict = parse_file("corrupted.pubtator", true)?;
    ensure(strict.corpus.documents[0].mentions.len() == 1 && strict.warnings.len() == 2, || {
        format!("strict parse kept {:?}", strict.corpus.documents[0].mentions)
    })?;
    let out = Command::new(env!("CARGO_BIN_EXE_aioner"))
        .args(["--strict", "-q", "convert", "--from", "pubtator", "--to", "conll"])
        .arg(fixture("corrupted.pubtator"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(3), || format!("--strict convert exited with {:?}", out.status.code()))?;
    let out = Command::new(env!("CARGO_BIN_EXE_aioner"))
        .args(["-q", "convert", "--from", "pubtator", "--to", "conll"])
        .arg(fixture("corrupted.pubtator"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("lenient convert exited with {:?}", out.status.code()))?;
    Ok(format!("4 fixtures ({docs} documents) are PubTator and CoNLL fixed points; corrupted offsets relocate, or fail with exit 3 under --strict"))
}

/// Independent overlap resolution: mentions joined by any chain of
/// overlaps form one cluster, and each cluster keeps its longest mention
/// (ties: earliest start, then default registry order).
fn longest_per_cluster(mentions: &[Mention]) -> Vec<Mention> {
    let rank = |t: &str| EntityTypeRegistry::DEFAULT_TYPES.iter().position(|x| *x == t).unwrap_or(usize::MAX);
    let n = mentions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (&mentions[i], &mentions[j]);
            if a.start < b.end && b.start < a.end {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut best: BTreeMap<usize, &Mention> = BTreeMap::new();
    for (i, m) in mentions.iter().enumerate() {
        let key = |m: &Mention| (std::cmp::Reverse(m.end - m.start), m.start, rank(&m.entity_type));
        let r = root(&mut parent, i);
        if best.get(&r).is_none_or(|b| key(m) < key(b)) {
            best.insert(r, m);
        }
    }
    let mut kept: Vec<Mention> = best.into_values().cloned().collect();
    kept.sort_by(Mention::span_order);
    kept
}

// ------------------------------------------------------------ criterion 5

fn c5_eval_arithmetic() -> Outcome {
    let types: Vec<String> = vec!["Gene".into(), "Disease".into(), "Chemical".into()];
    let mut gold = Corpus::new("g", ["Gene", "Disease"]);
    let mut d = Document::new("d1", "BRCA1 causes breast cancer");
    d.add_mention(0, 5, "Gene").unwrap();
    d.add_mention(13, 26, "Disease").unwrap();
    gold.push(d).unwrap();
    let pred = BTreeMap::from([("d1".to_string(), vec![Mention::new(0, 5, "Gene", "BRCA1")])]);
    let r = evaluate(&gold, &pred, &types).map_err(|e| e.to_string())?;
    ensure(r.overall.precision == 1.0 && r.overall.recall == 0.5, || format!("fixture P={} R={}", r.overall.precision, r.overall.recall))?;
    ensure((r.overall.f1 - 2.0 / 3.0).abs() < 1e-12, || format!("fixture F1={}", r.overall.f1))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    let pairs = 1000;
    type Key = (String, usize, usize, String);
    let random_set = |rng: &mut ChaCha8Rng, doc: &str| -> BTreeSet<Key> {
        (0..rng.random_range(0..8))
            .map(|_| {
                let s = rng.random_range(0..20);
                (doc.to_string(), s, s + rng.random_range(1..4), types.choose(rng).unwrap().clone())
            })
            .collect()
    };
    let score = |g: &BTreeSet<Key>, p: &BTreeSet<Key>| -> (u64, u64, u64, f64) {
        let tp = g.intersection(p).count() as u64;
        let (fp, fn_) = (p.len() as u64 - tp, g.len() as u64 - tp);
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        (tp, fp, fn_, f1)
    };
    let run = |g: &BTreeSet<Key>, p: &BTreeSet<Key>, docs: &[String]| {
        let mut corpus = Corpus::new("g", types.iter().cloned());
        for id in docs {
            let mut d = Document::new(id.as_str(), "x".repeat(30));
            d.mentions = g.iter().filter(|k| &k.0 == id).map(|k| Mention::new(k.1, k.2, k.3.clone(), "")).collect();
            corpus.push(d).unwrap();
        }
        let mut pred: BTreeMap<String, Vec<Mention>> = BTreeMap::new();
        for k in p {
            pred.entry(k.0.clone()).or_default().push(Mention::new(k.1, k.2, k.3.clone(), ""));
        }
        evaluate(&corpus, &pred, &types).unwrap()
    };
    for i in 0..pairs {
        let docs: Vec<String> = (0..rng.random_range(1..4)).map(|d| format!("d{d}")).collect();
        let mut g = BTreeSet::new();
        let mut p = BTreeSet::new();
        for id in &docs {
            g.extend(random_set(&mut rng, id));
            let mut own = random_set(&mut rng, id);
            // make overlap with gold likely
            own.extend(g.iter().filter(|k| &k.0 == id && rng.random_bool(0.5)).cloned());
            p.extend(own);
        }
        let r = run(&g, &p, &docs);
        let (tp, fp, fn_, f1) = score(&g, &p);
        let c = r.overall.counts;
        ensure(c == Counts { true_positive: tp, false_positive: fp, false_negative: fn_ }, || format!("pair {i}: counts {c:?}"))?;
        ensure((r.overall.f1 - f1).abs() < 1e-12, || format!("pair {i}: F1 {} vs {f1}", r.overall.f1))?;
        // micro identity: pooled per-type counts are the overall counts
        let mut pooled = Counts::default();
        for t in &r.per_type {
            pooled.add(&t.counts);
        }
        ensure(pooled == c, || format!("pair {i}: per-type counts do not pool to overall"))?;
        // symmetry: swapping gold and predictions swaps P and R
        let swapped = run(&p, &g, &docs);
        ensure(
            (swapped.overall.precision - r.overall.recall).abs() < 1e-12 && (swapped.overall.recall - r.overall.precision).abs() < 1e-12,
            || format!("pair {i}: swap is not symmetric"),
        )?;
        // monotonicity: adding a missed gold mention or removing a false
        // positive never lowers F1
        if let Some(missed) = g.difference(&p).next().cloned() {
            let mut better = p.clone();
            better.insert(missed);
            let b = run(&g, &better, &docs);
            ensure(b.overall.f1 > r.overall.f1 && b.overall.recall > r.overall.recall, || format!("pair {i}: adding a hit did not raise F1"))?;
        }
        if let Some(wrong) = p.difference(&g).next().cloned() {
            let mut better = p.clone();
            better.remove(&wrong);
            let b = run(&g, &better, &docs);
            ensure(b.overall.f1 >= r.overall.f1 && b.overall.precision >= r.overall.precision, || format!("pair {i}: removing a false positive lowered F1"))?;
        }
    }
    Ok(format!("fixture P=1.0 R=0.5 F1={:.4}; {pairs} random pairs match the count oracle, pool, swap and are monotone", r.overall.f1))
}

// ------------------------------------------------------------ criterion 6

/// Two-sided exact p by subset-sum counting over doubled ranks.
fn dp_p_value(doubled: &[u64], stat2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut ways = vec![0u64; total as usize + 1];
    ways[0] = 1;
    for &r in doubled {
        for s in (r as usize..=total as usize).rev() {
            ways[s] += ways[s - r as usize];
        }
    }
    let hits: u64 = (0..=total).filter(|&s| s.min(total - s) <= stat2).map(|s| ways[s as usize]).sum();
    hits as f64 / (1u64 << doubled.len()) as f64
}

/// Doubled average ranks of |d|, computed by counting.
fn doubled_ranks(d: &[f64]) -> Vec<u64> {
    d.iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as u64;
            let tied = d.iter().filter(|y| y.abs() == x.abs()).count() as u64;
            2 * below + tied + 1
        })
        .collect()
}

fn c6_wilcoxon() -> Outcome {
    let mut checked = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    for m in 1..=10usize {
        // distinct magnitudes, then the same sign patterns over tied ones
        let distinct: Vec<f64> = (1..=m).map(|i| i as f64 * 0.5).collect();
        let tied: Vec<f64> = (0..m).map(|_| rng.random_range(1..=3) as f64).collect();
        for magnitudes in [&distinct, &tied] {
            for pattern in 0u32..(1 << m) {
                let d: Vec<f64> = magnitudes.iter().enumerate().map(|(i, &v)| if pattern >> i & 1 == 1 { v } else { -v }).collect();
                let a = vec![10.0; m];
                let b: Vec<f64> = d.iter().map(|x| 10.0 + x).collect();
                let r = wilcoxon_signed_rank(&PairedSample::new(&a, &b).unwrap()).map_err(|e| e.to_string())?;
                let ranks = doubled_ranks(&d);
                let w_plus2: u64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
                let total2: u64 = ranks.iter().sum();
                let stat2 = w_plus2.min(total2 - w_plus2);
                let want = dp_p_value(&ranks, stat2);
                ensure(r.exact && r.p_value == want && r.statistic == stat2 as f64 / 2.0, || {
                    format!("m={m}, pattern {pattern:b}, magnitudes {magnitudes:?}: p {} (W {}) vs {want} (W {})", r.p_value, r.statistic, stat2 as f64 / 2.0)
                })?;
                checked += 1;
            }
        }
    }
    let a = [0.80, 0.81, 0.79, 0.82, 0.80];
    let b = [0.81, 0.83, 0.82, 0.86, 0.85];
    let r = wilcoxon_signed_rank(&PairedSample::new(&a, &b).unwrap()).map_err(|e| e.to_string())?;
    ensure((r.p_value - 0.0625).abs() < 1e-15 && r.p_value >= 0.05, || format!("5 positive pairs: p = {}", r.p_value))?;
    Ok(format!("{checked} sign patterns (m <= 10, distinct and tied ranks) equal the subset-sum oracle; 5 positive pairs give p = {}", r.p_value))
}

// ------------------------------------------------------------ synthetic corpora

mod synth {
    use super::*;

    const SYLLABLES: &[&str] = &[
        "ka", "to", "ri", "mex", "lon", "dra", "vi", "sul", "pe", "gor", "tan", "bel", "fi", "nor", "zu", "qua", "sem", "ho", "lui", "dat",
        "rek", "mo", "cin", "ba", "tel", "yo", "pri", "gas", "wen", "ul", "jor", "ni", "ses", "fal", "kru", "ob", "lem", "tso", "ar",
        "mi",
    ];
    const GENE_BEFORE: &[&str] = &["expression of", "the", "mutant", "levels of", "and"];
    const GENE_AFTER: &[&str] = &["protein", "gene", "was", "and", "in"];
    const DISEASE_BEFORE: &[&str] = &["patients with", "risk of", "the", "and", "onset of"];
    const DISEASE_AFTER: &[&str] = &["patients", "was", "and", "in", "cases"];
    const OPENERS: &[&str] = &["We", "The", "In", "These", "Here", "Our"];

    fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
        (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
    }

    pub struct Vocab {
        genes: Vec<String>,
        diseases: Vec<String>,
        filler: Vec<String>,
    }

    impl Vocab {
        pub fn new(seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
            let mut seen = BTreeSet::new();
            let mut fresh = |rng: &mut ChaCha8Rng, syl: usize| loop {
                let w = pseudo_word(rng, syl);
                if seen.insert(w.clone()) {
                    return w;
                }
            };
            let filler: Vec<String> = (0..150).map(|_| fresh(&mut rng, 2)).collect();
            // gene names: mostly upper case, some lower case with a number
            let genes = (0..300)
                .map(|_| {
                    let w = fresh(&mut rng, 2);
                    if rng.random_bool(0.6) {
                        w.to_uppercase()
                    } else {
                        format!("{w}{}", rng.random_range(1..20))
                    }
                })
                .collect();
            // disease names: lower case, one or two words, sometimes a head noun
            let diseases = (0..300)
                .map(|_| {
                    let syl = rng.random_range(2..=3);
                    let mut w = fresh(&mut rng, syl);
                    if rng.random_bool(0.3) {
                        w = format!("{w} {}", fresh(&mut rng, 2));
                    }
                    if rng.random_bool(0.4) {
                        w.push_str([" syndrome", " disease", " deficiency"].choose(&mut rng).unwrap());
                    }
                    w
                })
                .collect();
            Vocab { genes, diseases, filler }
        }
    }

    /// One synthetic document: a title sentence and 3-5 abstract sentences.
    /// All mentions are returned; callers drop the types a corpus does not
    /// annotate.
    pub fn document(rng: &mut ChaCha8Rng, vocab: &Vocab, id: &str) -> Document {
        let mut text = String::new();
        let mut mentions: Vec<(usize, usize, &'static str)> = Vec::new();
        let sentences = rng.random_range(4..=6);
        for s in 0..sentences {
            if s == 1 {
                text.push('\n');
            } else if s > 1 {
                text.push(' ');
            }
            text.push_str(OPENERS.choose(rng).unwrap());
            for _ in 0..rng.random_range(1..=3) {
                for _ in 0..rng.random_range(1..=3) {
                    text.push(' ');
                    text.push_str(vocab.filler.choose(rng).unwrap());
                }
                let gene = rng.random_bool(0.5);
                let (before, after, names, ty) = if gene {
                    (GENE_BEFORE, GENE_AFTER, &vocab.genes, "Gene")
                } else {
                    (DISEASE_BEFORE, DISEASE_AFTER, &vocab.diseases, "Disease")
                };
                if rng.random_bool(0.6) {
                    text.push(' ');
                    text.push_str(before.choose(rng).unwrap());
                }
                text.push(' ');
                let start = text.chars().count();
                text.push_str(names.choose(rng).unwrap());
                mentions.push((start, text.chars().count(), ty));
                if rng.random_bool(0.6) {
                    text.push(' ');
                    text.push_str(after.choose(rng).unwrap());
                }
            }
            if s > 0 {
                text.push('.');
            }
        }
        let mut doc = Document::new(id, text);
        for (a, b, t) in mentions {
            doc.add_mention(a, b, t).unwrap();
        }
        doc
    }

    pub fn corpus(rng: &mut ChaCha8Rng, vocab: &Vocab, name: &str, docs: usize, keep: &[&str]) -> Corpus {
        let mut c = Corpus::new(name, keep.iter().copied());
        for i in 0..docs {
            let mut d = document(rng, vocab, &format!("{name}-{i}"));
            d.mentions.retain(|m| keep.contains(&m.entity_type.as_str()));
            c.push(d).unwrap();
        }
        c
    }

    pub fn write_benchmark(dir: &Path, seed: u64, sizes: (usize, usize, usize)) {
        let vocab = Vocab::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (single, all, test) = sizes;
        let both = ["Gene", "Disease"];
        let write = |name: &str, c: &Corpus| std::fs::write(dir.join(name), write_pubtator(c).unwrap()).unwrap();
        write("gene.pubtator", &corpus(&mut rng, &vocab, "GeneCorpus", single, &["Gene"]));
        write("disease.pubtator", &corpus(&mut rng, &vocab, "DiseaseCorpus", single, &["Disease"]));
        write("all.pubtator", &corpus(&mut rng, &vocab, "AllCorpus", all, &both));
        write("test.pubtator", &corpus(&mut rng, &vocab, "AllTest", test, &both));
    }

    /// A manifest over the benchmark files. `tasks` gives the task of the
    /// Gene, Disease and all-type corpora; `None` leaves a corpus out.
    pub fn manifest(seed: u64, out: &str, tasks: [Option<&str>; 3], train: &str) -> String {
        let mut m = format!("seed = {seed}\nregistry = [\"Gene\", \"Disease\"]\nmode = \"aio\"\n\n");
        let entries = [
            ("GeneCorpus", "gene.pubtator", "[\"Gene\"]"),
            ("DiseaseCorpus", "disease.pubtator", "[\"Disease\"]"),
            ("AllCorpus", "all.pubtator", "[\"Gene\", \"Disease\"]"),
        ];
        for ((name, path, types), task) in entries.iter().zip(tasks) {
            if let Some(task) = task {
                m += &format!("[[corpus]]\nname = \"{name}\"\npath = \"{path}\"\nentity_types = {types}\ntask = \"{task}\"\n\n");
            }
        }
        m += "[[corpus]]\nname = \"AllTest\"\npath = \"test.pubtator\"\nentity_types = [\"Gene\", \"Disease\"]\nrole = \"test\"\n\n";
        m += &format!("[train]\n{train}\n\n[output]\ndir = \"{out}\"\n");
        m
    }
}

// ------------------------------------------------------------ criterion 7

const BENCH_TRAIN: &str = "max_epochs = 20\npatience = 3\nhash_bits = 16";

fn bench_f1(dir: &Path, seed: u64, name: &str, tasks: [Option<&str>; 3]) -> Result<f64, String> {
    let text = synth::manifest(seed, name, tasks, BENCH_TRAIN);
    let manifest = dir.join(format!("{name}.toml"));
    std::fs::write(&manifest, text).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::load(&manifest).map_err(|e| e.to_string())?;
    let ctx = Context::default();
    pipeline::cmd_merge(&cfg, &ctx).map_err(|e| e.to_string())?;
    let summary = pipeline::cmd_train(&cfg, None, &ctx).map_err(|e| e.to_string())?;
    let test = dir.join("test.pubtator");
    let tagged = pipeline::cmd_tag(&summary.model, &test, &TagRequest::default(), &ctx).map_err(|e| e.to_string())?;
    let pred = dir.join(format!("{name}.pred.pubtator"));
    std::fs::write(&pred, &tagged.text).map_err(|e| e.to_string())?;
    let eval = pipeline::cmd_eval(&test, &pred, &cfg.registry, &ctx).map_err(|e| e.to_string())?;
    Ok(eval.report.overall.f1)
}

fn c7_synthetic_trend() -> Outcome {
    let seeds = 5u64;
    let runs: Vec<Result<[f64; 3], String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..seeds)
            .map(|seed| {
                s.spawn(move || {
                    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                    synth::write_benchmark(dir.path(), seed, (150, 25, 60));
                    let aio = bench_f1(dir.path(), seed, "aio", [Some("Gene"), Some("Disease"), Some("ALL")])?;
                    let alone = bench_f1(dir.path(), seed, "all-only", [None, None, Some("ALL")])?;
                    let naive = bench_f1(dir.path(), seed, "naive", [Some("ALL"), Some("ALL"), Some("ALL")])?;
                    Ok([aio, alone, naive])
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("benchmark thread panicked".into()))).collect()
    });
    let runs: Vec<[f64; 3]> = runs.into_iter().collect::<Result<_, _>>()?;
    let mean = |i: usize| runs.iter().map(|r| r[i]).sum::<f64>() / runs.len() as f64;
    let (aio, alone, naive) = (mean(0), mean(1), mean(2));
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{:.1}/{:.1}/{:.1}", r[0] * 100.0, r[1] * 100.0, r[2] * 100.0)).collect();
    let detail = format!(
        "mean test F1 over {seeds} seeds: AIO {:.2}, all-type only {:.2}, naive concatenation {:.2} (per seed {})",
        aio * 100.0,
        alone * 100.0,
        naive * 100.0,
        per_seed.join(" ")
    );
    // (a) strictly better than the all-type corpus alone; (b) naive
    // concatenation at least 5 F1 points below AIO
    ensure(aio > alone, || format!("AIO does not beat all-type only; {detail}"))?;
    ensure(aio - naive >= 0.05, || format!("naive concatenation is not 5 points worse; {detail}"))?;
    Ok(detail)
}

// ------------------------------------------------------------ criterion 8

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_aioner")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("aioner {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
}

fn pipeline_artifacts(dir: &Path) -> Result<BTreeMap<&'static str, Vec<u8>>, String> {
    synth::write_benchmark(dir, 11, (30, 10, 12));
    let manifest = synth::manifest(11, "out", [Some("Gene"), Some("Disease"), Some("ALL")], "max_epochs = 6\nhash_bits = 14");
    std::fs::write(dir.join("pipeline.toml"), manifest).map_err(|e| e.to_string())?;
    run_cli(dir, &["-q", "--config", "pipeline.toml", "merge"])?;
    run_cli(dir, &["-q", "--config", "pipeline.toml", "train"])?;
    run_cli(dir, &["-q", "--config", "pipeline.toml", "--threads", "3", "tag", "test.pubtator", "--model", "out/model.bin", "--mode", "combined", "-o", "pred.pubtator"])?;
    run_cli(dir, &["-q", "--config", "pipeline.toml", "tag", "test.pubtator", "--model", "out/model.bin", "--mode", "combined", "-o", "pred1.pubtator"])?;
    run_cli(dir, &["-q", "--config", "pipeline.toml", "eval", "test.pubtator", "pred.pubtator", "--json", "eval.json"])?;
    let mut out = BTreeMap::new();
    for (key, path) in [
        ("merged", "out/merged.conll"),
        ("merge report", "out/merge_report.json"),
        ("model", "out/model.bin"),
        ("train log", "out/train.jsonl"),
        ("predictions", "pred.pubtator"),
        ("single-thread predictions", "pred1.pubtator"),
        ("eval report", "eval.json"),
    ] {
        out.insert(key, std::fs::read(dir.join(path)).map_err(|e| format!("{path}: {e}"))?);
    }
    Ok(out)
}

fn c8_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = pipeline_artifacts(a.path())?;
    let second = pipeline_artifacts(b.path())?;
    for (key, bytes) in &first {
        ensure(second[key] == *bytes, || format!("{key} differs between runs"))?;
    }
    ensure(first["predictions"] == first["single-thread predictions"], || "--threads changed the predictions".into())?;
    Ok(format!(
        "merge, train, tag and eval twice: {} artifacts byte-identical (model sha256 {})",
        first.len(),
        &pipeline::sha256_hex(&first["model"])[..16]
    ))
}

// ------------------------------------------------------------ criterion 9

fn c9_inference_modes() -> Outcome {
    // labels: 0 B-Gene, 1 I-Gene, 2 O-Gene, 3 B-Disease, 4 I-Disease,
    // 5 O-Disease, 6 O-ALL. Zero transitions make Viterbi a per-token
    // argmax inside the task's label mask.
    let ls = LabelSet::new(registry(&["Gene", "Disease"]));
    let k = ls.len();
    let model = CrfModel::external(ls.clone(), TransitionTable::zeros(k));
    let doc = Document::new("fx", "wa wb wc wd we wf");
    let mut rows = vec![vec![0.0; k]; 6];
    for r in rows.iter_mut() {
        r[2] = 3.0;
        r[5] = 3.0;
        r[6] = 5.0;
    }
    rows[1][0] = 6.0;
    rows[1][3] = 5.5;
    rows[2][1] = 6.0;
    rows[2][4] = 5.5;
    rows[3][4] = 4.0;
    rows[4][0] = 4.0;
    rows[5][1] = 4.0;
    rows[5][3] = 4.0;
    let mut ext = ExternalEmissions::new(k);
    ext.insert("fx", 0, EmissionMatrix::from_rows(&rows, k).unwrap()).unwrap();
    let opts = PredictOptions::default();
    let spans = |ms: &[Mention]| ms.iter().map(|m| (m.start, m.end, m.entity_type.clone())).collect::<Vec<_>>();
    let task = |t: &TaskTag| predict_document_with(&doc, t, &model, &ext, &opts).map_err(|e| e.to_string());
    let aio = task(&TaskTag::All)?;
    let gene = task(&TaskTag::Single("Gene".into()))?;
    let disease = task(&TaskTag::Single("Disease".into()))?;
    let g = |a: usize, b: usize, t: &str| (a, b, t.to_string());
    ensure(spans(&aio) == [g(3, 8, "Gene")], || format!("AIO pass {:?}", spans(&aio)))?;
    ensure(spans(&gene) == [g(3, 8, "Gene"), g(12, 17, "Gene")], || format!("Gene pass {:?}", spans(&gene)))?;
    ensure(spans(&disease) == [g(3, 11, "Disease"), g(15, 17, "Disease")], || format!("Disease pass {:?}", spans(&disease)))?;
    let combined = predict_combined_with(&doc, &model, DecodeMode::Combined, &ext, &opts).map_err(|e| e.to_string())?;
    let mut pool = aio.clone();
    pool.extend(gene.iter().cloned());
    pool.extend(disease.iter().cloned());
    let oracle = longest_per_cluster(&pool);
    ensure(spans(&combined) == spans(&oracle), || format!("Combined {:?} vs oracle {:?}", spans(&combined), spans(&oracle)))?;
    ensure(spans(&combined) == [g(3, 11, "Disease"), g(12, 17, "Gene")], || format!("Combined {:?}", spans(&combined)))?;

    // random emissions: IND passes stay on their type, Combined equals the
    // oracle resolution of the pooled passes
    let mut rng = ChaCha8Rng::seed_from_u64(0xC9);
    let full = LabelSet::new(EntityTypeRegistry::default());
    let kf = full.len();
    let trials = 300;
    for trial in 0..trials {
        let mut trans = TransitionTable::zeros(kf);
        for v in trans.trans.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let model = CrfModel::external(full.clone(), trans);
        let n = rng.random_range(1..=12);
        let words: Vec<String> = (0..n).map(|i| format!("t{}", (b'a' + i as u8) as char)).collect();
        let doc = Document::new("r", words.join(" "));
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..kf).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut ext = ExternalEmissions::new(kf);
        ext.insert("r", 0, EmissionMatrix::from_rows(&rows, kf).unwrap()).unwrap();
        let mut pool = predict_document_with(&doc, &TaskTag::All, &model, &ext, &opts).map_err(|e| e.to_string())?;
        for t in EntityTypeRegistry::DEFAULT_TYPES {
            let ind = predict_document_with(&doc, &TaskTag::Single(t.into()), &model, &ext, &opts).map_err(|e| e.to_string())?;
            ensure(ind.iter().all(|m| m.entity_type == t), || format!("trial {trial}: IND {t} emitted {:?}", spans(&ind)))?;
            pool.extend(ind);
        }
        let combined = predict_combined_with(&doc, &model, DecodeMode::Combined, &ext, &opts).map_err(|e| e.to_string())?;
        let oracle = longest_per_cluster(&pool);
        ensure(spans(&combined) == spans(&oracle), || format!("trial {trial}: Combined {:?} vs oracle {:?}", spans(&combined), spans(&oracle)))?;
    }

    // the CLI with --task Disease writes Disease mentions only
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model_path = dir.path().join("m.bin");
    std::fs::write(&model_path, aioner::model_file::encode_model(&model_with_emissions(&ls))).map_err(|e| e.to_string())?;
    let input = dir.path().join("in.pubtator");
    std::fs::write(&input, "1|t|wa wb wc wd we wf\n\n").map_err(|e| e.to_string())?;
    let emissions = dir.path().join("em.tsv");
    std::fs::write(&emissions, aioner::emissions::write_emissions(&ext_fixture(&rows_fixture(), k, "1"))).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_aioner"))
        .arg("-q")
        .arg("tag")
        .arg(&input)
        .arg("--model")
        .arg(&model_path)
        .args(["--task", "Disease", "--emissions"])
        .arg(&emissions)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("tag --task Disease failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let tagged = parse_pubtator(&text, &ParseOptions::default()).map_err(|e| e.to_string())?;
    let types: BTreeSet<&str> = tagged.corpus.documents[0].mentions.iter().map(|m| m.entity_type.as_str()).collect();
    ensure(types == BTreeSet::from(["Disease"]), || format!("--task Disease emitted {types:?}"))?;
    Ok(format!("fixture keeps the longest span per cluster; {trials} random documents: IND single-type, Combined equals the oracle"))
}

fn rows_fixture() -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0, 0.0, 3.0, 0.0, 0.0, 3.0, 5.0]; 6];
    rows[1][0] = 6.0;
    rows[1][3] = 5.5;
    rows[2][1] = 6.0;
    rows[2][4] = 5.5;
    rows[3][4] = 4.0;
    rows
}

fn ext_fixture(rows: &[Vec<f64>], k: usize, doc: &str) -> ExternalEmissions {
    let mut ext = ExternalEmissions::new(k);
    ext.insert(doc, 0, EmissionMatrix::from_rows(rows, k).unwrap()).unwrap();
    ext
}

fn model_with_emissions(ls: &LabelSet) -> CrfModel {
    CrfModel::external(ls.clone(), TransitionTable::zeros(ls.len()))
}

// ------------------------------------------------------------ driver

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "CRF oracle equivalence", c1_crf_oracle),
        (2, "gradient check", c2_gradient_check),
        (3, "AIO scheme laws", c3_scheme_laws),
        (4, "format fidelity", c4_format_fidelity),
        (5, "evaluation arithmetic", c5_eval_arithmetic),
        (6, "Wilcoxon exactness", c6_wilcoxon),
        (7, "synthetic multi-corpus benchmark", c7_synthetic_trend),
        (8, "end-to-end determinism", c8_determinism),
        (9, "inference-mode contract", c9_inference_modes),
    ];
    let only: Option<u8> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let results: Vec<(u8, &str, Outcome, Duration)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .filter(|c| only.is_none_or(|o| o == c.0))
            .map(|&(id, name, f)| {
                (
                    id,
                    name,
                    s.spawn(move || {
                        let t = Instant::now();
                        (f(), t.elapsed())
                    }),
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|(id, name, h)| {
                let (outcome, took) = h.join().unwrap_or_else(|_| (Err("panicked".into()), Duration::ZERO));
                (id, name, outcome, took)
            })
            .collect()
    });
    let mut failed = 0;
    for (id, name, outcome, took) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id} PASS [{:.1}s] {name}: {detail}", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL [{:.1}s] {name}: {why}", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
