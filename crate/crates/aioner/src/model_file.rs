//! Binary model container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "AIONERM\0"
//! version    u32      1
//! registry   u32 count, then strings
//! labels     u32 count, then strings (checked against the registry)
//! start      K x f64
//! trans      K*K x f64, row-major
//! emitter    u8: 0 external, 1 hashed features
//!   hash_bits u8
//!   templates u32 count, then (u8 tag, i8 param) pairs
//!   weights   u8 storage (0 dense, 1 sparse), u64 length, then data
//! meta       u64 seed, u32 epochs_run, u32 best_epoch, f64 best_dev_f1,
//!            u8 stop_reason, u8 mask_mode
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Sparse weights are a u64
//! count of `(u64 index, f64 value)` pairs. The writer picks whichever
//! storage is smaller, so equal models always produce equal bytes.

use aioner_core::crf::TransitionTable;
use aioner_core::features::{FeatureScorer, FeatureTemplate};
use aioner_core::scheme::{EntityTypeRegistry, LabelSet};
use aioner_core::train::{CrfModel, Emitter, MaskMode, StopReason, TrainingMeta};

use crate::error::FormatError;

pub const MAGIC: &[u8; 8] = b"AIONERM\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

pub fn encode_model(model: &CrfModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let names = model.label_set.registry().names();
    w.u32(names.len() as u32);
    for n in names {
        w.str(n);
    }
    let labels = model.label_set.names();
    w.u32(labels.len() as u32);
    for l in &labels {
        w.str(l);
    }
    for &v in &model.transition.start {
        w.f64(v);
    }
    for &v in &model.transition.trans {
        w.f64(v);
    }
    match &model.emitter {
        Emitter::External => w.u8(0),
        Emitter::Features(s) => {
            w.u8(1);
            w.u8(s.hash_bits());
            w.u32(s.templates().len() as u32);
            for t in s.templates() {
                let (tag, param) = t.code();
                w.u8(tag);
                w.u8(param as u8);
            }
            let nonzero: Vec<(usize, f64)> = s
                .weights
                .iter()
                .enumerate()
                .filter(|(_, v)| v.to_bits() != 0)
                .map(|(i, &v)| (i, v))
                .collect();
            if nonzero.len() * 16 < s.weights.len() * 8 {
                w.u8(1);
                w.u64(s.weights.len() as u64);
                w.u64(nonzero.len() as u64);
                for (i, v) in nonzero {
                    w.u64(i as u64);
                    w.f64(v);
                }
            } else {
                w.u8(0);
                w.u64(s.weights.len() as u64);
                for &v in &s.weights {
                    w.f64(v);
                }
            }
        }
    }
    let m = &model.meta;
    w.u64(m.seed);
    w.u32(m.epochs_run);
    w.u32(m.best_epoch);
    w.f64(m.best_dev_f1);
    w.u8(match m.stop_reason {
        StopReason::Untrained => 0,
        StopReason::Patience => 1,
        StopReason::MaxEpochs => 2,
    });
    w.u8(match m.mask_mode {
        MaskMode::Unmasked => 0,
        MaskMode::TaskMasked => 1,
    });
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FormatError::Model(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, limit: usize) -> Result<usize, FormatError> {
        let n = self.u64()? as usize;
        if n > limit {
            return Err(FormatError::Model(format!("length {n} exceeds {limit}")));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Model("string is not UTF-8".into()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<CrfModel, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(FormatError::Model("not a model file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::Model(format!("unsupported version {version}")));
    }
    let n_types = r.u32()? as usize;
    let types = (0..n_types).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    let registry = EntityTypeRegistry::new(types).map_err(|e| FormatError::Model(e.to_string()))?;
    let label_set = LabelSet::new(registry);
    let n_labels = r.u32()? as usize;
    let labels = (0..n_labels).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    if labels != label_set.names() {
        return Err(FormatError::Model("label names do not match the registry".into()));
    }
    let k = label_set.len();
    let start = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let trans = (0..k * k).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let transition = TransitionTable::from_parts(start, trans).map_err(|e| FormatError::Model(e.to_string()))?;
    let emitter = match r.u8()? {
        0 => Emitter::External,
        1 => {
            let hash_bits = r.u8()?;
            if hash_bits == 0 || hash_bits > 28 {
                return Err(FormatError::Model(format!("hash_bits {hash_bits} out of range")));
            }
            let n_templates = r.u32()? as usize;
            let mut templates = Vec::with_capacity(n_templates.min(256));
            for _ in 0..n_templates {
                let tag = r.u8()?;
                let param = r.u8()? as i8;
                templates.push(
                    FeatureTemplate::from_code(tag, param)
                        .ok_or_else(|| FormatError::Model(format!("unknown feature template ({tag}, {param})")))?,
                );
            }
            let expected = (1usize << hash_bits) * k;
            let storage = r.u8()?;
            let len = r.len(expected)?;
            if len != expected {
                return Err(FormatError::Model(format!("{len} weights, expected {expected}")));
            }
            let weights = match storage {
                0 => (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?,
                1 => {
                    let mut w = vec![0.0; len];
                    let count = r.len(len)?;
                    for _ in 0..count {
                        let i = r.len(len - 1)?;
                        w[i] = r.f64()?;
                    }
                    w
                }
                other => return Err(FormatError::Model(format!("unknown weight storage {other}"))),
            };
            Emitter::Features(FeatureScorer::from_parts(hash_bits, k, templates, weights).expect("length checked"))
        }
        other => return Err(FormatError::Model(format!("unknown emitter kind {other}"))),
    };
    let meta = TrainingMeta {
        seed: r.u64()?,
        epochs_run: r.u32()?,
        best_epoch: r.u32()?,
        best_dev_f1: r.f64()?,
        stop_reason: match r.u8()? {
            0 => StopReason::Untrained,
            1 => StopReason::Patience,
            2 => StopReason::MaxEpochs,
            other => return Err(FormatError::Model(format!("unknown stop reason {other}"))),
        },
        mask_mode: match r.u8()? {
            0 => MaskMode::Unmasked,
            1 => MaskMode::TaskMasked,
            other => return Err(FormatError::Model(format!("unknown mask mode {other}"))),
        },
    };
    if r.pos != bytes.len() {
        return Err(FormatError::Model(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(CrfModel {
        label_set,
        transition,
        emitter,
        meta,
    })
}
