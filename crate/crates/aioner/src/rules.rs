//! Normalization rule files, one rule per line:
//!
//! ```text
//! # comment
//! strip_suffix	CellLine	\s+cells?
//! retype	GeneFamily	Gene
//! ```

use aioner_core::scheme::NormalizationRule;

use crate::error::FormatError;

pub fn parse_rules(input: &str) -> Result<Vec<NormalizationRule>, FormatError> {
    let mut rules = Vec::new();
    for (idx, raw) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let rule = match fields.as_slice() {
            ["strip_suffix", ty, pattern] if !ty.is_empty() && !pattern.is_empty() => NormalizationRule::strip_suffix(*ty, pattern)
                .map_err(|e| FormatError::syntax(line_no, e.to_string()))?,
            ["retype", from, to] if !from.is_empty() && !to.is_empty() => NormalizationRule::retype(*from, *to),
            _ => {
                return Err(FormatError::syntax(
                    line_no,
                    "expected `strip_suffix<TAB>TYPE<TAB>regex` or `retype<TAB>FROM<TAB>TO`",
                ))
            }
        };
        rules.push(rule);
    }
    Ok(rules)
}

/// Types a rule list renames away, so a manifest may declare them.
pub fn retyped_sources(rules: &[NormalizationRule]) -> Vec<&str> {
    rules
        .iter()
        .filter_map(|r| match r {
            NormalizationRule::Retype { from, .. } => Some(from.as_str()),
            _ => None,
        })
        .collect()
}
