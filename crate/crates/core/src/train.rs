//! The CRF model, its exact gradient and the training loop.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::{self, CrfError, EmissionMatrix, TransitionTable};
use crate::eval::Counts;
use crate::features::{FeatureScorer, FeatureTemplate, SentenceFeatures};
use crate::math::sqrt;
use crate::scheme::{label_spans, EncodedSentence, Label, LabelSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("model has no built-in emission scorer")]
    NoScorer,
    #[error("sentence {index}: {source}")]
    Sentence { index: usize, source: CrfError },
}

/// Whether the partition function of a sentence ranges over all labels or
/// only the labels valid for its task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Unmasked,
    TaskMasked,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Adam with the usual `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    #[default]
    Adam,
    /// Plain gradient ascent.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Share of sentences held out for early stopping. With no held-out
    /// sentences the training set itself is scored.
    pub dev_fraction: f64,
    pub label_mask_mode: MaskMode,
    /// L2 penalty coefficient.
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    pub hash_bits: u8,
    /// Dev F1 gains below this count as no improvement.
    pub min_improvement: f64,
    pub templates: Vec<FeatureTemplate>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            dev_fraction: 0.1,
            label_mask_mode: MaskMode::Unmasked,
            weight_decay: 1e-6,
            optimizer: Optimizer::Adam,
            hash_bits: 16,
            min_improvement: 1e-4,
            templates: FeatureTemplate::default_set(),
        }
    }
}

impl TrainConfig {
    /// The hyper-parameters used with a pre-trained transformer encoder
    /// (learning rate 5e-6, batch 32, patience 5, at most 50 epochs). The
    /// learning rate is far too small for the hashed linear scorer; kept as
    /// a reference point.
    pub fn transformer_reference() -> Self {
        TrainConfig {
            learning_rate: 5e-6,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.patience < 1 {
            return Err(TrainError::InvalidConfig("patience must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(TrainError::InvalidConfig("max_epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(TrainError::InvalidConfig("dev_fraction must be in [0, 1)"));
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive"));
        }
        if self.hash_bits == 0 || self.hash_bits > 28 {
            return Err(TrainError::InvalidConfig("hash_bits must be in 1..=28"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Emitter {
    Features(FeatureScorer),
    /// Emission scores are supplied from outside at prediction time.
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    #[default]
    Untrained,
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: u32,
    pub best_epoch: u32,
    pub best_dev_f1: f64,
    pub stop_reason: StopReason,
    pub mask_mode: MaskMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub label_set: LabelSet,
    pub transition: TransitionTable,
    pub emitter: Emitter,
    pub meta: TrainingMeta,
}

impl CrfModel {
    pub fn new(label_set: LabelSet, scorer: FeatureScorer) -> Self {
        let k = label_set.len();
        CrfModel {
            label_set,
            transition: TransitionTable::zeros(k),
            emitter: Emitter::Features(scorer),
            meta: TrainingMeta::default(),
        }
    }

    /// A model whose emissions always come from an external source.
    pub fn external(label_set: LabelSet, transition: TransitionTable) -> Self {
        CrfModel {
            label_set,
            transition,
            emitter: Emitter::External,
            meta: TrainingMeta::default(),
        }
    }

    pub fn scorer(&self) -> Option<&FeatureScorer> {
        match &self.emitter {
            Emitter::Features(s) => Some(s),
            Emitter::External => None,
        }
    }

    fn scorer_mut(&mut self) -> Option<&mut FeatureScorer> {
        match &mut self.emitter {
            Emitter::Features(s) => Some(s),
            Emitter::External => None,
        }
    }

    /// Number of trainable parameters: start, transitions, scorer weights.
    pub fn param_count(&self) -> usize {
        let k = self.label_set.len();
        k + k * k + self.scorer().map_or(0, |s| s.weights.len())
    }

    /// Parameter by flat index, in [`ModelGradient::flat`] order.
    pub fn param(&self, idx: usize) -> f64 {
        let k = self.label_set.len();
        if idx < k {
            self.transition.start[idx]
        } else if idx < k + k * k {
            self.transition.trans[idx - k]
        } else {
            self.scorer().expect("index within scorer weights").weights[idx - k - k * k]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let k = self.label_set.len();
        if idx < k {
            self.transition.start[idx] = value;
        } else if idx < k + k * k {
            self.transition.trans[idx - k] = value;
        } else {
            self.scorer_mut().expect("index within scorer weights").weights[idx - k - k * k] = value;
        }
    }

    /// Mask used by the partition function for a sentence.
    pub fn training_mask(&self, sentence: &EncodedSentence, mode: MaskMode) -> Option<Vec<bool>> {
        match mode {
            MaskMode::Unmasked => None,
            MaskMode::TaskMasked => Some(self.label_set.valid_labels(&sentence.task)),
        }
    }
}

/// Gradient of the summed log-likelihood with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub start: Vec<f64>,
    pub trans: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ModelGradient {
    pub fn zeros_like(model: &CrfModel) -> Self {
        let k = model.label_set.len();
        ModelGradient {
            start: vec![0.0; k],
            trans: vec![0.0; k * k],
            weights: vec![0.0; model.scorer().map_or(0, |s| s.weights.len())],
        }
    }

    /// Component by flat index: start, then transitions, then weights.
    pub fn flat(&self, idx: usize) -> f64 {
        let (ks, kt) = (self.start.len(), self.trans.len());
        if idx < ks {
            self.start[idx]
        } else if idx < ks + kt {
            self.trans[idx - ks]
        } else {
            self.weights[idx - ks - kt]
        }
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.start.iter().chain(&self.trans).chain(&self.weights).map(|g| g * g).sum())
    }

    fn clear(&mut self) {
        for g in self.start.iter_mut().chain(&mut self.trans).chain(&mut self.weights) {
            *g = 0.0;
        }
    }
}

/// Adds one sentence's gradient into `grad` and returns its log-likelihood.
pub fn accumulate_sentence(
    model: &CrfModel,
    features: &SentenceFeatures,
    sentence: &EncodedSentence,
    mask: Option<&[bool]>,
    grad: &mut ModelGradient,
) -> Result<f64, CrfError> {
    let scorer = match &model.emitter {
        Emitter::Features(s) => s,
        Emitter::External => return Err(CrfError::Dimension("model has no feature scorer")),
    };
    let emissions = scorer.emissions(features);
    accumulate_with_emissions(model, &emissions, sentence, mask, grad, |d_em, grad| {
        scorer.accumulate(features, d_em, &mut grad.weights)
    })
}

fn accumulate_with_emissions<F>(
    model: &CrfModel,
    emissions: &EmissionMatrix,
    sentence: &EncodedSentence,
    mask: Option<&[bool]>,
    grad: &mut ModelGradient,
    emission_sink: F,
) -> Result<f64, CrfError>
where
    F: FnOnce(&EmissionMatrix, &mut ModelGradient),
{
    let k = model.label_set.len();
    let gold = &sentence.labels;
    let n = gold.len();
    if n == 0 {
        return Ok(0.0);
    }
    let ll = crf::log_likelihood(emissions, &model.transition, gold, mask)?;
    let marg = crf::marginals(emissions, &model.transition, mask)?;

    grad.start[gold[0].index()] += 1.0;
    for y in 0..k {
        grad.start[y] -= marg.node(0, y, k);
    }
    for w in gold.windows(2) {
        grad.trans[w[0].index() * k + w[1].index()] += 1.0;
    }
    for (g, e) in grad.trans.iter_mut().zip(&marg.trans) {
        *g -= e;
    }
    let mut d_em = EmissionMatrix::zeros(n, k);
    for (i, y_gold) in gold.iter().enumerate() {
        let row = d_em.row_mut(i);
        for (y, r) in row.iter_mut().enumerate() {
            *r = -marg.node(i, y, k);
        }
        row[y_gold.index()] += 1.0;
    }
    emission_sink(&d_em, grad);
    Ok(ll)
}

/// Summed gradient and log-likelihood of a batch, accumulated in order.
pub fn gradient(batch: &[EncodedSentence], model: &CrfModel, mode: MaskMode) -> Result<(ModelGradient, f64), TrainError> {
    let scorer = model.scorer().ok_or(TrainError::NoScorer)?;
    let mut grad = ModelGradient::zeros_like(model);
    let mut total = 0.0;
    for (index, sentence) in batch.iter().enumerate() {
        let features = scorer.extract(sentence);
        let mask = model.training_mask(sentence, mode);
        total += accumulate_sentence(model, &features, sentence, mask.as_deref(), &mut grad)
            .map_err(|source| TrainError::Sentence { index, source })?;
    }
    Ok((grad, total))
}

/// Summed log-likelihood of a set of sentences.
pub fn corpus_log_likelihood(sentences: &[EncodedSentence], model: &CrfModel, mode: MaskMode) -> Result<f64, TrainError> {
    let scorer = model.scorer().ok_or(TrainError::NoScorer)?;
    let mut total = 0.0;
    for (index, s) in sentences.iter().enumerate() {
        let em = scorer.emissions(&scorer.extract(s));
        let mask = model.training_mask(s, mode);
        total += crf::log_likelihood(&em, &model.transition, &s.labels, mask.as_deref())
            .map_err(|source| TrainError::Sentence { index, source })?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Log-likelihood summed over the epoch's batches, each measured before
    /// its update.
    pub train_log_likelihood: f64,
    pub dev_f1: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CrfModel,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

fn apply_update(model: &mut CrfModel, grad: &ModelGradient, scale: f64, config: &TrainConfig, adam: &mut Adam) {
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    adam.t += 1;
    let bias1 = 1.0 - libm::pow(Adam::BETA1, adam.t as f64);
    let bias2 = 1.0 - libm::pow(Adam::BETA2, adam.t as f64);
    let step = |idx: usize, param: &mut f64, g: f64, adam: &mut Adam| {
        // ascent direction on the penalized objective
        let g = g * scale - wd * *param;
        match config.optimizer {
            Optimizer::Sgd => *param += lr * g,
            Optimizer::Adam => {
                let m = &mut adam.m[idx];
                let v = &mut adam.v[idx];
                *m = Adam::BETA1 * *m + (1.0 - Adam::BETA1) * g;
                *v = Adam::BETA2 * *v + (1.0 - Adam::BETA2) * g * g;
                *param += lr * (*m / bias1) / (sqrt(*v / bias2) + Adam::EPS);
            }
        }
    };
    let k = model.label_set.len();
    for (y, p) in model.transition.start.iter_mut().enumerate() {
        step(y, p, grad.start[y], adam);
    }
    for (i, p) in model.transition.trans.iter_mut().enumerate() {
        step(k + i, p, grad.trans[i], adam);
    }
    if let Emitter::Features(s) = &mut model.emitter {
        let off = k + k * k;
        for (i, p) in s.weights.iter_mut().enumerate() {
            step(off + i, p, grad.weights[i], adam);
        }
    }
}

/// Entity spans as `(sentence, first, last, type)` for F1 bookkeeping.
type SpanSet = BTreeSet<(usize, usize, usize, usize)>;

fn spans_of(sentence_idx: usize, labels: &[crate::scheme::LabelId], model: &CrfModel, sentence: &EncodedSentence, out: &mut SpanSet) {
    let (spans, _) = label_spans(labels, &model.label_set, &sentence.task);
    for (f, l, t) in spans {
        if sentence.task.sees(&model.label_set.registry().names()[t]) {
            out.insert((sentence_idx, f, l, t));
        }
    }
}

/// Entity-level micro F1 of task-masked Viterbi decoding against the gold
/// labels of `sentences`.
pub fn sentence_f1(model: &CrfModel, sentences: &[EncodedSentence], features: Option<&[SentenceFeatures]>) -> Result<f64, TrainError> {
    let scorer = model.scorer().ok_or(TrainError::NoScorer)?;
    let mut gold = SpanSet::new();
    let mut pred = SpanSet::new();
    for (i, s) in sentences.iter().enumerate() {
        let em = match features {
            Some(f) => scorer.emissions(&f[i]),
            None => scorer.emissions(&scorer.extract(s)),
        };
        let mask = model.label_set.valid_labels(&s.task);
        let (path, _) = crf::viterbi(&em, &model.transition, Some(&mask)).map_err(|source| TrainError::Sentence { index: i, source })?;
        spans_of(i, &s.labels, model, s, &mut gold);
        spans_of(i, &path, model, s, &mut pred);
    }
    Ok(Counts::compare(&gold, &pred).f1())
}

pub fn train(train_set: &[EncodedSentence], label_set: &LabelSet, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_observer(train_set, label_set, config, |_| {})
}

/// Mini-batch training with early stopping on held-out entity-level F1.
///
/// Returns the checkpoint with the best held-out score. For a fixed seed the
/// result is bit-for-bit reproducible.
pub fn train_with_observer<F>(
    train_set: &[EncodedSentence],
    label_set: &LabelSet,
    config: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let positive = train_set
        .iter()
        .flat_map(|s| &s.labels)
        .any(|&l| matches!(label_set.label(l), Some(Label::Begin(_) | Label::Inside(_))));
    if !positive {
        log::warn!("training set has no entity labels; the model will only learn outside labels");
    }

    let scorer = FeatureScorer::new(config.hash_bits, label_set.len(), config.templates.clone());
    let mut model = CrfModel::new(label_set.clone(), scorer);
    model.meta.seed = config.seed;
    model.meta.mask_mode = config.label_mask_mode;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut rng);
    let mut n_dev = libm::round(config.dev_fraction * train_set.len() as f64) as usize;
    if n_dev >= train_set.len() {
        n_dev = 0;
    }
    let (dev_idx, fit_idx) = order.split_at(n_dev);
    let mut fit_idx = fit_idx.to_vec();
    let dev: Vec<EncodedSentence> = dev_idx.iter().map(|&i| train_set[i].clone()).collect();

    let scorer = model.scorer().expect("freshly built scorer");
    let features: Vec<SentenceFeatures> = train_set.iter().map(|s| scorer.extract(s)).collect();
    let masks: Vec<Option<Vec<bool>>> = train_set.iter().map(|s| model.training_mask(s, config.label_mask_mode)).collect();
    let dev_features: Vec<SentenceFeatures> = dev_idx.iter().map(|&i| features[i].clone()).collect();
    let fit_sentences: Vec<EncodedSentence>;
    let fit_features: Vec<SentenceFeatures>;
    let (score_set, score_features): (&[EncodedSentence], &[SentenceFeatures]) = if dev.is_empty() {
        fit_sentences = train_set.to_vec();
        fit_features = features.clone();
        (&fit_sentences, &fit_features)
    } else {
        (&dev, &dev_features)
    };

    let mut adam = Adam::new(model.param_count());
    let mut grad = ModelGradient::zeros_like(&model);
    let mut best: Option<CrfModel> = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs as u32 {
        fit_idx.shuffle(&mut rng);
        let mut epoch_ll = 0.0;
        for batch in fit_idx.chunks(config.batch_size) {
            grad.clear();
            for &i in batch {
                epoch_ll += accumulate_sentence(&model, &features[i], &train_set[i], masks[i].as_deref(), &mut grad)
                    .map_err(|source| TrainError::Sentence { index: i, source })?;
            }
            apply_update(&mut model, &grad, 1.0 / batch.len() as f64, config, &mut adam);
        }
        let dev_f1 = sentence_f1(&model, score_set, Some(score_features))?;
        let improved = dev_f1 > best_f1 + config.min_improvement || best.is_none();
        if improved {
            best_f1 = dev_f1;
            stale = 0;
            model.meta.best_epoch = epoch;
            model.meta.best_dev_f1 = dev_f1;
            best = Some(model.clone());
        } else {
            stale += 1;
        }
        model.meta.epochs_run = epoch;
        let record = EpochRecord {
            epoch,
            train_log_likelihood: epoch_ll,
            dev_f1,
            improved,
        };
        observer(&record);
        history.push(record);
        if stale >= config.patience {
            stop = StopReason::Patience;
            break;
        }
    }

    let mut best = best.expect("at least one epoch ran");
    best.meta.epochs_run = model.meta.epochs_run;
    best.meta.stop_reason = stop;
    Ok(TrainOutcome { model: best, history })
}

/// Flat-parameter description used by finite-difference checks.
pub fn param_names(model: &CrfModel) -> Vec<String> {
    let k = model.label_set.len();
    let mut names = Vec::with_capacity(model.param_count());
    for y in 0..k {
        names.push(alloc::format!("start[{y}]"));
    }
    for i in 0..k {
        for j in 0..k {
            names.push(alloc::format!("trans[{i}][{j}]"));
        }
    }
    for w in 0..model.scorer().map_or(0, |s| s.weights.len()) {
        names.push(alloc::format!("w[{w}]"));
    }
    names
}
