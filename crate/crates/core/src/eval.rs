//! Entity-level evaluation and paired significance testing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Mention};
use crate::math::{erfc, sqrt};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction for unknown document `{0}`")]
    UnknownDocument(String),
    #[error("paired sample has {a} and {b} values")]
    UnequalLengths { a: usize, b: usize },
    #[error("non-finite value in paired sample")]
    NonFinite,
    #[error("no information: every paired difference is zero")]
    NoInformation,
}

/// An exact fraction; `0/0` evaluates to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl Counts {
    pub fn precision_ratio(&self) -> Ratio {
        Ratio {
            num: self.true_positive,
            den: self.true_positive + self.false_positive,
        }
    }

    pub fn recall_ratio(&self) -> Ratio {
        Ratio {
            num: self.true_positive,
            den: self.true_positive + self.false_negative,
        }
    }

    /// `2PR / (P + R)`, which reduces to `2TP / (2TP + FP + FN)`.
    pub fn f1_ratio(&self) -> Ratio {
        Ratio {
            num: 2 * self.true_positive,
            den: 2 * self.true_positive + self.false_positive + self.false_negative,
        }
    }

    pub fn precision(&self) -> f64 {
        self.precision_ratio().value()
    }

    pub fn recall(&self) -> f64 {
        self.recall_ratio().value()
    }

    pub fn f1(&self) -> f64 {
        self.f1_ratio().value()
    }

    pub fn add(&mut self, other: &Counts) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.false_negative += other.false_negative;
    }

    /// Counts for one pair of sets. Duplicates are already collapsed by the
    /// set representation.
    pub fn compare<T: Ord>(gold: &BTreeSet<T>, predicted: &BTreeSet<T>) -> Counts {
        let tp = gold.intersection(predicted).count() as u64;
        Counts {
            true_positive: tp,
            false_positive: predicted.len() as u64 - tp,
            false_negative: gold.len() as u64 - tp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub entity_type: String,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TypeScores {
    fn new(entity_type: String, counts: Counts) -> Self {
        TypeScores {
            entity_type,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: Vec<TypeScores>,
    pub overall: TypeScores,
}

impl EvalReport {
    pub fn from_counts(per_type: BTreeMap<String, Counts>, type_order: &[String]) -> Self {
        // Registry types always get a column, even if unseen.
        let mut ordered: Vec<String> = type_order.to_vec();
        for t in per_type.keys() {
            if !ordered.contains(t) {
                ordered.push(t.clone());
            }
        }
        let mut overall = Counts::default();
        let per_type = ordered
            .into_iter()
            .map(|t| {
                let c = per_type.get(&t).copied().unwrap_or_default();
                overall.add(&c);
                TypeScores::new(t, c)
            })
            .collect();
        EvalReport {
            per_type,
            overall: TypeScores::new("Overall".to_string(), overall),
        }
    }

    pub fn type_scores(&self, entity_type: &str) -> Option<&TypeScores> {
        self.per_type.iter().find(|t| t.entity_type == entity_type)
    }
}

type SpanKey = (usize, usize);

fn by_type(mentions: &[Mention]) -> BTreeMap<&str, BTreeSet<SpanKey>> {
    let mut out: BTreeMap<&str, BTreeSet<SpanKey>> = BTreeMap::new();
    for m in mentions {
        out.entry(m.entity_type.as_str()).or_default().insert((m.start, m.end));
    }
    out
}

/// Strict entity-level comparison: a true positive needs the same start,
/// end and type. Documents without predictions count every gold mention as
/// a false negative.
pub fn evaluate(
    gold: &Corpus,
    predicted: &BTreeMap<String, Vec<Mention>>,
    type_order: &[String],
) -> Result<EvalReport, EvalError> {
    let gold_ids: BTreeSet<&str> = gold.documents.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(unknown) = predicted.keys().find(|k| !gold_ids.contains(k.as_str())) {
        return Err(EvalError::UnknownDocument(unknown.clone()));
    }
    let empty = Vec::new();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for doc in &gold.documents {
        let g = by_type(&doc.mentions);
        let p = by_type(predicted.get(&doc.doc_id).unwrap_or(&empty));
        let types: BTreeSet<&str> = g.keys().chain(p.keys()).copied().collect();
        let none = BTreeSet::new();
        for t in types {
            let c = Counts::compare(g.get(t).unwrap_or(&none), p.get(t).unwrap_or(&none));
            per_type.entry(t.to_string()).or_default().add(&c);
        }
    }
    Ok(EvalReport::from_counts(per_type, type_order))
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// F1 grid, one row per named report: `System`, `Overall`, then one column
/// per entity type in the first report's order.
pub fn report_table(reports: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    let types: Vec<&str> = reports
        .first()
        .map(|(_, r)| r.per_type.iter().map(|t| t.entity_type.as_str()).collect())
        .unwrap_or_default();
    out.push_str("System\tOverall");
    for t in &types {
        out.push('\t');
        out.push_str(t);
    }
    out.push('\n');
    for (name, report) in reports {
        out.push_str(name);
        out.push('\t');
        out.push_str(&pct(report.overall.f1));
        for t in &types {
            out.push('\t');
            out.push_str(&report.type_scores(t).map(|s| pct(s.f1)).unwrap_or_else(|| "-".to_string()));
        }
        out.push('\n');
    }
    out
}

/// Per-type counts and P/R/F1 of a single report.
pub fn report_detail(report: &EvalReport) -> String {
    let mut out = String::from("Type\tTP\tFP\tFN\tP\tR\tF1\n");
    for s in report.per_type.iter().chain(core::iter::once(&report.overall)) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.entity_type,
            s.counts.true_positive,
            s.counts.false_positive,
            s.counts.false_negative,
            pct(s.precision),
            pct(s.recall),
            pct(s.f1)
        );
    }
    out
}

/// Matched `(a, b)` scores, e.g. overall F1 of two systems across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pairs: Vec<(f64, f64)>,
}

impl PairedSample {
    pub fn new(a: &[f64], b: &[f64]) -> Result<Self, EvalError> {
        if a.len() != b.len() {
            return Err(EvalError::UnequalLengths { a: a.len(), b: b.len() });
        }
        if a.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        Ok(PairedSample {
            pairs: a.iter().copied().zip(b.iter().copied()).collect(),
        })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn swapped(&self) -> PairedSample {
        PairedSample {
            pairs: self.pairs.iter().map(|&(a, b)| (b, a)).collect(),
        }
    }
}

/// Treatment of zero differences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroPolicy {
    /// Drop zero differences before ranking.
    #[default]
    Wilcoxon,
    /// Rank with zeros included, then leave their ranks out of both sums.
    Pratt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PValueMethod {
    /// Exact up to [`EXACT_LIMIT`] effective pairs, normal approximation above.
    #[default]
    Auto,
    Exact,
    Normal,
}

/// Largest effective sample size for which `Auto` enumerates sign patterns.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WilcoxonOptions {
    pub zeros: ZeroPolicy,
    pub method: PValueMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Rank sum of pairs with `b > a`.
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    /// Non-zero differences.
    pub effective: usize,
    pub exact: bool,
}

impl WilcoxonResult {
    /// `+1` when `b` tends to exceed `a`, `-1` for the reverse, `0` on a tie.
    pub fn direction(&self) -> i8 {
        if self.w_plus > self.w_minus {
            1
        } else if self.w_plus < self.w_minus {
            -1
        } else {
            0
        }
    }
}

pub fn wilcoxon_signed_rank(sample: &PairedSample) -> Result<WilcoxonResult, EvalError> {
    wilcoxon_signed_rank_with(sample, WilcoxonOptions::default())
}

/// Two-sided Wilcoxon signed-rank test on `b - a`.
pub fn wilcoxon_signed_rank_with(sample: &PairedSample, options: WilcoxonOptions) -> Result<WilcoxonResult, EvalError> {
    let diffs: Vec<f64> = sample.pairs.iter().map(|&(a, b)| b - a).collect();
    let ranked: Vec<f64> = match options.zeros {
        ZeroPolicy::Wilcoxon => diffs.iter().copied().filter(|d| *d != 0.0).collect(),
        ZeroPolicy::Pratt => diffs.clone(),
    };
    // Doubled average ranks are integers, which keeps the exact tail count
    // free of float comparisons.
    let doubled = doubled_ranks(&ranked);
    let mut signed: Vec<(u64, bool)> = Vec::new();
    for (d, r) in ranked.iter().zip(&doubled) {
        if *d != 0.0 {
            signed.push((*r, *d > 0.0));
        }
    }
    let m = signed.len();
    if m == 0 {
        return Err(EvalError::NoInformation);
    }
    let w_plus2: u64 = signed.iter().filter(|s| s.1).map(|s| s.0).sum();
    let total2: u64 = signed.iter().map(|s| s.0).sum();
    let w_minus2 = total2 - w_plus2;
    let stat2 = w_plus2.min(w_minus2);
    let exact = match options.method {
        PValueMethod::Exact => true,
        PValueMethod::Normal => false,
        PValueMethod::Auto => m <= EXACT_LIMIT,
    };
    let ranks: Vec<u64> = signed.iter().map(|s| s.0).collect();
    let p_value = if exact {
        exact_p(&ranks, stat2)
    } else {
        normal_p(&ranks, stat2)
    };
    Ok(WilcoxonResult {
        statistic: stat2 as f64 / 2.0,
        w_plus: w_plus2 as f64 / 2.0,
        w_minus: w_minus2 as f64 / 2.0,
        p_value,
        effective: m,
        exact,
    })
}

fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| libm::fabs(values[a]).total_cmp(&libm::fabs(values[b])));
    let mut ranks = alloc::vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && libm::fabs(values[order[j + 1]]) == libm::fabs(values[order[i]]) {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Fraction of the `2^m` sign assignments whose `min(W+, W-)` is at most the
/// observed statistic. Walks the assignments in Gray-code order.
fn exact_p(ranks: &[u64], stat2: u64) -> f64 {
    let m = ranks.len();
    let total: u64 = ranks.iter().sum();
    let patterns: u64 = 1 << m;
    let mut w_plus = 0u64;
    let mut hits = 0u64;
    for step in 0..patterns {
        if step > 0 {
            let bit = step.trailing_zeros() as usize;
            let gray = step ^ (step >> 1);
            if gray & (1 << bit) != 0 {
                w_plus += ranks[bit];
            } else {
                w_plus -= ranks[bit];
            }
        }
        if w_plus.min(total - w_plus) <= stat2 {
            hits += 1;
        }
    }
    hits as f64 / patterns as f64
}

/// Normal approximation with tie-corrected variance (`sum r^2 / 4`) and a
/// continuity correction of one half.
fn normal_p(ranks: &[u64], stat2: u64) -> f64 {
    let mean = ranks.iter().map(|&r| r as f64 / 2.0).sum::<f64>() / 2.0;
    let var = ranks.iter().map(|&r| (r as f64 / 2.0) * (r as f64 / 2.0)).sum::<f64>() / 4.0;
    let w = stat2 as f64 / 2.0;
    let z = ((libm::fabs(w - mean) - 0.5).max(0.0)) / sqrt(var);
    erfc(z / core::f64::consts::SQRT_2).min(1.0)
}
