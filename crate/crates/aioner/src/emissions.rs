//! Externally computed emission scores.
//!
//! ```text
//! #emissions	K=19
//! #sent	PMID1	0	n=3
//! 0.1	-2.0	...   (K scores)
//! ...              (n rows)
//! ```

use std::fmt::Write as _;

use aioner_core::crf::EmissionMatrix;
use aioner_core::predict::ExternalEmissions;

use crate::error::FormatError;

fn keyed(field: &str, key: &str, line: usize) -> Result<usize, FormatError> {
    field
        .strip_prefix(key)
        .and_then(|v| v.strip_prefix('='))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| FormatError::syntax(line, format!("expected `{key}=<int>`, found {field:?}")))
}

/// Parses an emissions file. With `expected_labels` set, a header whose `K`
/// differs is an error.
pub fn parse_emissions(input: &str, expected_labels: Option<usize>) -> Result<ExternalEmissions, FormatError> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let (line_no, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| FormatError::syntax(1, "missing `#emissions` header"))?;
    let k_field = header
        .strip_prefix("#emissions\t")
        .ok_or_else(|| FormatError::syntax(line_no, "missing `#emissions` header"))?;
    let k = keyed(k_field, "K", line_no)?;
    if let Some(expected) = expected_labels {
        if k != expected {
            return Err(FormatError::syntax(line_no, format!("emissions have K={k}, the model has {expected} labels")));
        }
    }
    let mut out = ExternalEmissions::new(k);
    let mut current: Option<(String, usize, usize, Vec<f64>, usize)> = None;
    let finish = |cur: (String, usize, usize, Vec<f64>, usize), out: &mut ExternalEmissions| -> Result<(), FormatError> {
        let (doc, idx, n, scores, line) = cur;
        if scores.len() != n * k {
            return Err(FormatError::syntax(line, format!("sentence {doc}#{idx} declares n={n} but has {} rows", scores.len() / k.max(1))));
        }
        if out.get(&doc, idx).is_some() {
            return Err(FormatError::syntax(line, format!("duplicate sentence {doc}#{idx}")));
        }
        let m = EmissionMatrix::from_flat(n, k, scores).map_err(|e| FormatError::syntax(line, e.to_string()))?;
        out.insert(doc, idx, m).map_err(|e| FormatError::syntax(line, e.to_string()))?;
        Ok(())
    };
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#sent\t") {
            if let Some(cur) = current.take() {
                finish(cur, &mut out)?;
            }
            let fields: Vec<&str> = rest.split('\t').collect();
            if fields.len() != 3 {
                return Err(FormatError::syntax(line_no, "expected `#sent<TAB>doc_id<TAB>sentence_index<TAB>n=<int>`"));
            }
            let idx = fields[1]
                .parse()
                .map_err(|_| FormatError::syntax(line_no, format!("bad sentence index {:?}", fields[1])))?;
            let n = keyed(fields[2], "n", line_no)?;
            current = Some((fields[0].to_string(), idx, n, Vec::with_capacity(n * k), line_no));
            continue;
        }
        let cur = current
            .as_mut()
            .ok_or_else(|| FormatError::syntax(line_no, "score row before any `#sent` line"))?;
        let row: Vec<f64> = line
            .split('\t')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| FormatError::syntax(line_no, "non-numeric score"))?;
        if row.len() != k {
            return Err(FormatError::syntax(line_no, format!("row has {} scores, expected {k}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::syntax(line_no, "non-finite score"));
        }
        if cur.3.len() == cur.2 * k {
            return Err(FormatError::syntax(line_no, "more rows than declared"));
        }
        cur.3.extend(row);
    }
    if let Some(cur) = current.take() {
        finish(cur, &mut out)?;
    }
    Ok(out)
}

pub fn write_emissions(emissions: &ExternalEmissions) -> String {
    let mut out = format!("#emissions\tK={}\n", emissions.num_labels);
    for ((doc, idx), m) in &emissions.matrices {
        let _ = writeln!(out, "#sent\t{doc}\t{idx}\tn={}", m.len());
        for i in 0..m.len() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
    }
    out
}
