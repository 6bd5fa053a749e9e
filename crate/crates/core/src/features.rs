//! Hashed linear emission scorer.
//!
//! Each real token fires a set of string features built from the token, its
//! neighbours (sentinels included) and the task tag. Features are hashed into
//! a fixed number of buckets and every bucket holds one weight per label, so
//! `P[i][y] = sum over fired buckets b of w[b][y]`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::crf::EmissionMatrix;
use crate::scheme::EncodedSentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureTemplate {
    Bias,
    Identity,
    Lowercase,
    /// Every character mapped to `X`, `x`, `d` or itself.
    Shape,
    /// [`FeatureTemplate::Shape`] with repeated classes collapsed.
    CharClass,
    Prefix(u8),
    Suffix(u8),
    /// Lowercased token at a relative offset; sentinels count as tokens.
    Context(i8),
    Task,
    /// Fires on the first and last real token.
    Boundary,
}

impl FeatureTemplate {
    /// Token identity, lowercase, shape, character class, affixes of length
    /// 1-4, a +-2 context window, the task tag and boundary flags.
    pub fn default_set() -> Vec<FeatureTemplate> {
        let mut t = vec![
            FeatureTemplate::Bias,
            FeatureTemplate::Identity,
            FeatureTemplate::Lowercase,
            FeatureTemplate::Shape,
            FeatureTemplate::CharClass,
        ];
        t.extend((1..=4).map(FeatureTemplate::Prefix));
        t.extend((1..=4).map(FeatureTemplate::Suffix));
        t.extend([-2i8, -1, 1, 2].map(FeatureTemplate::Context));
        t.push(FeatureTemplate::Task);
        t.push(FeatureTemplate::Boundary);
        t
    }

    /// `(tag, parameter)` pair used by the model file and the hash seed.
    pub fn code(self) -> (u8, i8) {
        match self {
            FeatureTemplate::Bias => (0, 0),
            FeatureTemplate::Identity => (1, 0),
            FeatureTemplate::Lowercase => (2, 0),
            FeatureTemplate::Shape => (3, 0),
            FeatureTemplate::CharClass => (4, 0),
            FeatureTemplate::Prefix(n) => (5, n as i8),
            FeatureTemplate::Suffix(n) => (6, n as i8),
            FeatureTemplate::Context(o) => (7, o),
            FeatureTemplate::Task => (8, 0),
            FeatureTemplate::Boundary => (9, 0),
        }
    }

    pub fn from_code(tag: u8, param: i8) -> Option<FeatureTemplate> {
        Some(match tag {
            0 => FeatureTemplate::Bias,
            1 => FeatureTemplate::Identity,
            2 => FeatureTemplate::Lowercase,
            3 => FeatureTemplate::Shape,
            4 => FeatureTemplate::CharClass,
            5 if param > 0 => FeatureTemplate::Prefix(param as u8),
            6 if param > 0 => FeatureTemplate::Suffix(param as u8),
            7 => FeatureTemplate::Context(param),
            8 => FeatureTemplate::Task,
            9 => FeatureTemplate::Boundary,
            _ => return None,
        })
    }
}

fn shape_char(c: char) -> char {
    if c.is_uppercase() {
        'X'
    } else if c.is_lowercase() {
        'x'
    } else if c.is_numeric() {
        'd'
    } else {
        c
    }
}

// FNV-1a, 64 bit.
fn fnv1a(seed: (u8, i8), value: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in [seed.0, seed.1 as u8].into_iter().chain(value.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fired feature buckets per real token.
pub type SentenceFeatures = Vec<Vec<u32>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScorer {
    hash_bits: u8,
    num_labels: usize,
    templates: Vec<FeatureTemplate>,
    /// `weights[bucket * K + label]`.
    pub weights: Vec<f64>,
}

impl FeatureScorer {
    pub fn new(hash_bits: u8, num_labels: usize, templates: Vec<FeatureTemplate>) -> Self {
        let buckets = 1usize << hash_bits;
        FeatureScorer {
            hash_bits,
            num_labels,
            templates,
            weights: vec![0.0; buckets * num_labels],
        }
    }

    pub fn from_parts(hash_bits: u8, num_labels: usize, templates: Vec<FeatureTemplate>, weights: Vec<f64>) -> Option<Self> {
        if weights.len() != (1usize << hash_bits) * num_labels {
            return None;
        }
        Some(FeatureScorer {
            hash_bits,
            num_labels,
            templates,
            weights,
        })
    }

    pub fn hash_bits(&self) -> u8 {
        self.hash_bits
    }

    pub fn buckets(&self) -> usize {
        1 << self.hash_bits
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn templates(&self) -> &[FeatureTemplate] {
        &self.templates
    }

    fn bucket(&self, template: FeatureTemplate, value: &str) -> u32 {
        (fnv1a(template.code(), value) & ((1u64 << self.hash_bits) - 1)) as u32
    }

    /// Feature buckets for every real token of a sentence.
    pub fn extract(&self, sentence: &EncodedSentence) -> SentenceFeatures {
        let tokens = &sentence.tokens;
        let n = sentence.labels.len();
        let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
        let mut out = Vec::with_capacity(n);
        let mut buf = String::new();
        for i in 0..n {
            let pos = i + 1;
            let text = tokens.get(pos).map(|t| t.text.as_str()).unwrap_or("");
            let chars: Vec<char> = text.chars().collect();
            let mut fired = Vec::with_capacity(self.templates.len());
            for &template in &self.templates {
                buf.clear();
                match template {
                    FeatureTemplate::Bias => {}
                    FeatureTemplate::Identity => buf.push_str(text),
                    FeatureTemplate::Lowercase => buf.push_str(&lower[pos]),
                    FeatureTemplate::Shape => buf.extend(chars.iter().map(|&c| shape_char(c))),
                    FeatureTemplate::CharClass => {
                        let mut last = None;
                        for c in chars.iter().map(|&c| shape_char(c)) {
                            if last != Some(c) {
                                buf.push(c);
                                last = Some(c);
                            }
                        }
                    }
                    FeatureTemplate::Prefix(len) => {
                        let len = len as usize;
                        if chars.len() < len {
                            continue;
                        }
                        buf.extend(&chars[..len]);
                    }
                    FeatureTemplate::Suffix(len) => {
                        let len = len as usize;
                        if chars.len() < len {
                            continue;
                        }
                        buf.extend(&chars[chars.len() - len..]);
                    }
                    FeatureTemplate::Context(offset) => {
                        let at = pos as isize + offset as isize;
                        if at >= 0 && (at as usize) < tokens.len() {
                            buf.push_str(&lower[at as usize]);
                        } else {
                            let _ = write!(buf, "<PAD{}>", offset);
                        }
                    }
                    FeatureTemplate::Task => buf.push_str(sentence.task.name()),
                    FeatureTemplate::Boundary => match (i == 0, i + 1 == n) {
                        (true, true) => buf.push_str("only"),
                        (true, false) => buf.push_str("first"),
                        (false, true) => buf.push_str("last"),
                        (false, false) => continue,
                    },
                }
                fired.push(self.bucket(template, &buf));
            }
            out.push(fired);
        }
        out
    }

    pub fn emissions(&self, features: &SentenceFeatures) -> EmissionMatrix {
        let k = self.num_labels;
        let mut em = EmissionMatrix::zeros(features.len(), k);
        for (i, fired) in features.iter().enumerate() {
            let row = em.row_mut(i);
            for &b in fired {
                let w = &self.weights[b as usize * k..(b as usize + 1) * k];
                for (r, &wv) in row.iter_mut().zip(w) {
                    *r += wv;
                }
            }
        }
        em
    }

    /// Adds `sum_i d_emission[i][y] * feature_i` into a weight-shaped buffer.
    pub fn accumulate(&self, features: &SentenceFeatures, d_emission: &EmissionMatrix, out: &mut [f64]) {
        let k = self.num_labels;
        for (i, fired) in features.iter().enumerate() {
            let row = d_emission.row(i);
            for &b in fired {
                let slot = &mut out[b as usize * k..(b as usize + 1) * k];
                for (o, &g) in slot.iter_mut().zip(row) {
                    *o += g;
                }
            }
        }
    }
}
