//! Linear-chain CRF primitives.
//!
//! A path `y_1..y_n` over `K` labels scores
//! `start[y_1] + P[1][y_1] + sum_{i>=2} (trans[y_{i-1}][y_i] + P[i][y_i])`.
//! There is a start vector and no stop vector. All dynamic programs run left
//! to right in log space.
//!
//! Every routine takes an optional label mask; masked-out labels are removed
//! from the path space entirely.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{exp, log_sum_exp};
use crate::scheme::LabelId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrfError {
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("label id {id} out of range for {k} labels")]
    LabelOutOfRange { id: usize, k: usize },
    #[error("non-finite score in {0}")]
    NonFinite(&'static str),
    #[error("label mask admits no labels")]
    EmptyMask,
    #[error("gold label {id} at position {pos} is excluded by the mask")]
    MaskedGold { id: usize, pos: usize },
}

/// `n x K` emission scores, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionMatrix {
    n: usize,
    k: usize,
    scores: Vec<f64>,
}

impl EmissionMatrix {
    pub fn zeros(n: usize, k: usize) -> Self {
        EmissionMatrix {
            n,
            k,
            scores: vec![0.0; n * k],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], k: usize) -> Result<Self, CrfError> {
        let mut scores = Vec::with_capacity(rows.len() * k);
        for row in rows {
            if row.len() != k {
                return Err(CrfError::Dimension("emission row width"));
            }
            scores.extend_from_slice(row);
        }
        Ok(EmissionMatrix { n: rows.len(), k, scores })
    }

    pub fn from_flat(n: usize, k: usize, scores: Vec<f64>) -> Result<Self, CrfError> {
        if scores.len() != n * k {
            return Err(CrfError::Dimension("emission buffer length"));
        }
        Ok(EmissionMatrix { n, k, scores })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, y: usize) -> f64 {
        self.scores[i * self.k + y]
    }

    #[inline]
    pub fn set(&mut self, i: usize, y: usize, v: f64) {
        self.scores[i * self.k + y] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.k..(i + 1) * self.k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.scores[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    fn check(&self, k: usize) -> Result<(), CrfError> {
        if self.k != k {
            return Err(CrfError::Dimension("emission width vs transition size"));
        }
        if self.scores.iter().any(|v| !v.is_finite()) {
            return Err(CrfError::NonFinite("emissions"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    k: usize,
    pub start: Vec<f64>,
    /// Row-major: `trans[i * K + j]` scores label `i` followed by label `j`.
    pub trans: Vec<f64>,
}

impl TransitionTable {
    pub fn zeros(k: usize) -> Self {
        TransitionTable {
            k,
            start: vec![0.0; k],
            trans: vec![0.0; k * k],
        }
    }

    pub fn from_parts(start: Vec<f64>, trans: Vec<f64>) -> Result<Self, CrfError> {
        let k = start.len();
        if trans.len() != k * k {
            return Err(CrfError::Dimension("transition matrix is not K x K"));
        }
        Ok(TransitionTable { k, start, trans })
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.k + to]
    }

    pub fn set(&mut self, from: usize, to: usize, v: f64) {
        self.trans[from * self.k + to] = v;
    }

    fn check(&self) -> Result<(), CrfError> {
        if self.start.iter().chain(&self.trans).any(|v| !v.is_finite()) {
            return Err(CrfError::NonFinite("transitions"));
        }
        Ok(())
    }
}

fn check_mask(mask: Option<&[bool]>, k: usize) -> Result<(), CrfError> {
    if let Some(m) = mask {
        if m.len() != k {
            return Err(CrfError::Dimension("mask length"));
        }
        if !m.iter().any(|&b| b) {
            return Err(CrfError::EmptyMask);
        }
    }
    Ok(())
}

#[inline]
fn allowed(mask: Option<&[bool]>, y: usize) -> bool {
    mask.is_none_or(|m| m[y])
}

/// Score of one path.
pub fn sequence_score(emissions: &EmissionMatrix, transition: &TransitionTable, path: &[LabelId]) -> Result<f64, CrfError> {
    let k = transition.num_labels();
    if emissions.num_labels() != k {
        return Err(CrfError::Dimension("emission width vs transition size"));
    }
    if path.len() != emissions.len() {
        return Err(CrfError::Dimension("path length vs emission rows"));
    }
    if let Some(bad) = path.iter().find(|y| y.index() >= k) {
        return Err(CrfError::LabelOutOfRange { id: bad.index(), k });
    }
    let mut score = 0.0;
    for (i, y) in path.iter().map(|y| y.index()).enumerate() {
        if i == 0 {
            score = transition.start[y] + emissions.get(0, y);
        } else {
            score += transition.get(path[i - 1].index(), y);
            score += emissions.get(i, y);
        }
    }
    Ok(score)
}

fn forward(emissions: &EmissionMatrix, transition: &TransitionTable, mask: Option<&[bool]>) -> Vec<f64> {
    let (n, k) = (emissions.len(), transition.num_labels());
    let mut alpha = vec![f64::NEG_INFINITY; n * k];
    let mut terms = vec![0.0; k];
    for y in 0..k {
        if allowed(mask, y) {
            alpha[y] = transition.start[y] + emissions.get(0, y);
        }
    }
    for i in 1..n {
        for y in 0..k {
            if !allowed(mask, y) {
                continue;
            }
            for (prev, term) in terms.iter_mut().enumerate() {
                *term = alpha[(i - 1) * k + prev] + transition.get(prev, y);
            }
            alpha[i * k + y] = log_sum_exp(&terms) + emissions.get(i, y);
        }
    }
    alpha
}

fn backward(emissions: &EmissionMatrix, transition: &TransitionTable, mask: Option<&[bool]>) -> Vec<f64> {
    let (n, k) = (emissions.len(), transition.num_labels());
    let mut beta = vec![f64::NEG_INFINITY; n * k];
    let mut terms = vec![0.0; k];
    for y in 0..k {
        if allowed(mask, y) {
            beta[(n - 1) * k + y] = 0.0;
        }
    }
    for i in (0..n - 1).rev() {
        for y in 0..k {
            if !allowed(mask, y) {
                continue;
            }
            for (next, term) in terms.iter_mut().enumerate() {
                *term = transition.get(y, next) + emissions.get(i + 1, next) + beta[(i + 1) * k + next];
            }
            beta[i * k + y] = log_sum_exp(&terms);
        }
    }
    beta
}

/// Log of the sum of `exp(score)` over all `K^n` paths. Zero for `n == 0`.
pub fn log_partition(emissions: &EmissionMatrix, transition: &TransitionTable) -> Result<f64, CrfError> {
    log_partition_masked(emissions, transition, None)
}

/// [`log_partition`] restricted to paths whose labels all lie in `mask`.
pub fn log_partition_masked(
    emissions: &EmissionMatrix,
    transition: &TransitionTable,
    mask: Option<&[bool]>,
) -> Result<f64, CrfError> {
    let k = transition.num_labels();
    emissions.check(k)?;
    transition.check()?;
    check_mask(mask, k)?;
    let n = emissions.len();
    if n == 0 {
        return Ok(0.0);
    }
    let alpha = forward(emissions, transition, mask);
    Ok(log_sum_exp(&alpha[(n - 1) * k..]))
}

/// `log p(gold | emissions)`; never positive.
pub fn log_likelihood(
    emissions: &EmissionMatrix,
    transition: &TransitionTable,
    gold: &[LabelId],
    mask: Option<&[bool]>,
) -> Result<f64, CrfError> {
    if let Some(m) = mask {
        if let Some((pos, y)) = gold.iter().enumerate().find(|(_, y)| !m.get(y.index()).copied().unwrap_or(false)) {
            return Err(CrfError::MaskedGold { id: y.index(), pos });
        }
    }
    let score = sequence_score(emissions, transition, gold)?;
    let log_z = log_partition_masked(emissions, transition, mask)?;
    Ok(score - log_z)
}

/// Posterior marginals from forward-backward.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// `node[i * K + y] = p(y_i = y)`.
    pub node: Vec<f64>,
    /// Expected count of every transition `i -> j`, summed over positions.
    pub trans: Vec<f64>,
}

impl Marginals {
    pub fn node(&self, i: usize, y: usize, k: usize) -> f64 {
        self.node[i * k + y]
    }
}

pub fn marginals(
    emissions: &EmissionMatrix,
    transition: &TransitionTable,
    mask: Option<&[bool]>,
) -> Result<Marginals, CrfError> {
    let k = transition.num_labels();
    emissions.check(k)?;
    transition.check()?;
    check_mask(mask, k)?;
    let n = emissions.len();
    if n == 0 {
        return Ok(Marginals {
            log_z: 0.0,
            node: Vec::new(),
            trans: vec![0.0; k * k],
        });
    }
    let alpha = forward(emissions, transition, mask);
    let beta = backward(emissions, transition, mask);
    let log_z = log_sum_exp(&alpha[(n - 1) * k..]);
    let node = alpha.iter().zip(&beta).map(|(a, b)| exp(a + b - log_z)).collect();
    let mut trans = vec![0.0; k * k];
    for i in 0..n - 1 {
        for from in 0..k {
            let a = alpha[i * k + from];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for to in 0..k {
                let b = beta[(i + 1) * k + to];
                if b == f64::NEG_INFINITY {
                    continue;
                }
                trans[from * k + to] += exp(a + transition.get(from, to) + emissions.get(i + 1, to) + b - log_z);
            }
        }
    }
    Ok(Marginals { log_z, node, trans })
}

/// Highest-scoring path, optionally restricted to `mask`.
///
/// Ties resolve to the lowest label id, first at the final position and then
/// at every backpointer; among equally good paths this returns the one that
/// is smallest when compared from the last position backwards.
pub fn viterbi(
    emissions: &EmissionMatrix,
    transition: &TransitionTable,
    mask: Option<&[bool]>,
) -> Result<(Vec<LabelId>, f64), CrfError> {
    let k = transition.num_labels();
    emissions.check(k)?;
    transition.check()?;
    check_mask(mask, k)?;
    let n = emissions.len();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut delta = vec![f64::NEG_INFINITY; n * k];
    let mut back = vec![0usize; n * k];
    for y in 0..k {
        if allowed(mask, y) {
            delta[y] = transition.start[y] + emissions.get(0, y);
        }
    }
    for i in 1..n {
        for y in 0..k {
            if !allowed(mask, y) {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for prev in 0..k {
                if !allowed(mask, prev) {
                    continue;
                }
                let s = delta[(i - 1) * k + prev] + transition.get(prev, y);
                if s > best {
                    best = s;
                    arg = prev;
                }
            }
            delta[i * k + y] = best + emissions.get(i, y);
            back[i * k + y] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for y in 0..k {
        if allowed(mask, y) && delta[(n - 1) * k + y] > best {
            best = delta[(n - 1) * k + y];
            last = y;
        }
    }
    let mut path = vec![LabelId(0); n];
    let mut y = last;
    for i in (0..n).rev() {
        path[i] = LabelId(y as u16);
        y = back[i * k + y];
    }
    Ok((path, best))
}
