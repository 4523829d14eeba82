//! Linear-chain CRF over IO tags.
//!
//! Token features follow a classic NER-style template set (word identity,
//! POS, orthographic shape, neighbouring words and n-grams) with optional
//! pattern-lexicon indicators. Inference runs in log space; training is
//! mini-batch SGD with a proximal L2 step and dev-F1 early stopping.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Category, Sentence, Tag};
use crate::eval::token_prf;
use crate::patterns::{pattern_indicators, PatternLexicon};

pub const NUM_LABELS: usize = Tag::COUNT;
pub const MODEL_VERSION: u32 = 1;

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("sentence {0} has no {1} labels")]
    MissingLabels(usize, Category),
    #[error("training data is empty")]
    EmptyData,
    #[error("model file: {0}")]
    Format(String),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Word,
    Pos,
    IsDigit,
    IsTitle,
    IsUpper,
    IsHyphen,
    Punct,
    PrevWord,
    NextWord,
    PrevBigram,
    NextBigram,
    PrevTrigram,
    NextTrigram,
    Pattern,
    Transition,
}

impl Template {
    fn name(self) -> &'static str {
        match self {
            Template::Word => "word",
            Template::Pos => "pos",
            Template::IsDigit => "is_digit",
            Template::IsTitle => "is_title",
            Template::IsUpper => "is_upper",
            Template::IsHyphen => "is_hyphen",
            Template::Punct => "punct",
            Template::PrevWord => "prev_word",
            Template::NextWord => "next_word",
            Template::PrevBigram => "prev_bigram",
            Template::NextBigram => "next_bigram",
            Template::PrevTrigram => "prev_trigram",
            Template::NextTrigram => "next_trigram",
            Template::Pattern => "pattern",
            Template::Transition => "transition",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown template `{s}`"))
    }
}

/// Observation part of a feature: template plus payload.
pub type Attribute = (Template, String);

/// A full feature: an attribute paired with the current label, or a
/// (previous label, current label) transition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureKey {
    Emission { attribute: Attribute, label: Tag },
    Transition { from: Tag, to: Tag },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PunctClass {
    Colon,
    Fullstop,
    OtherSymbol,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenShape {
    pub is_digit: bool,
    pub is_title: bool,
    pub is_upper: bool,
    pub is_hyphen: bool,
    pub punct: PunctClass,
}

pub fn token_shape(surface: &str) -> TokenShape {
    let mut chars = surface.chars();
    let first = chars.next();
    let is_digit = !surface.is_empty() && surface.chars().all(|c| c.is_numeric());
    let is_title = first.is_some_and(char::is_uppercase) && !chars.any(char::is_uppercase);
    let is_upper = !surface.is_empty()
        && surface
            .chars()
            .all(|c| c.is_alphabetic() && c.is_uppercase());
    let is_hyphen = surface.contains('-') && surface.len() > 1;
    let punct = if !surface.is_empty() && surface.chars().all(|c| !c.is_alphanumeric()) {
        match surface {
            ":" => PunctClass::Colon,
            "." => PunctClass::Fullstop,
            _ => PunctClass::OtherSymbol,
        }
    } else {
        PunctClass::None
    };
    TokenShape {
        is_digit,
        is_title,
        is_upper,
        is_hyphen,
        punct,
    }
}

fn word_at(sentence: &Sentence, i: isize) -> &str {
    if i < 0 {
        BOS
    } else if i as usize >= sentence.len() {
        EOS
    } else {
        sentence.lower(i as usize)
    }
}

fn ngram(sentence: &Sentence, from: isize, len: isize) -> String {
    (from..from + len)
        .map(|k| word_at(sentence, k))
        .collect::<Vec<_>>()
        .join("|")
}

/// Active attributes for token `i`. Binary templates are emitted only when
/// the predicate holds; pattern indicators only when `lexicon` is given and
/// the indicator fires (payload = indicator position 0..9).
pub fn extract_features(
    sentence: &Sentence,
    i: usize,
    lexicon: Option<&PatternLexicon>,
) -> Vec<Attribute> {
    let tok = &sentence.tokens()[i];
    let at = i as isize;
    let mut out = Vec::with_capacity(20);
    out.push((Template::Word, tok.lower().to_string()));
    out.push((Template::Pos, tok.pos().to_string()));
    let shape = token_shape(tok.surface());
    for (flag, t) in [
        (shape.is_digit, Template::IsDigit),
        (shape.is_title, Template::IsTitle),
        (shape.is_upper, Template::IsUpper),
        (shape.is_hyphen, Template::IsHyphen),
    ] {
        if flag {
            out.push((t, String::new()));
        }
    }
    let punct = match shape.punct {
        PunctClass::Colon => "colon",
        PunctClass::Fullstop => "fullstop",
        PunctClass::OtherSymbol => "other_symbol",
        PunctClass::None => "none",
    };
    out.push((Template::Punct, punct.to_string()));
    out.push((Template::PrevWord, word_at(sentence, at - 1).to_string()));
    out.push((Template::NextWord, word_at(sentence, at + 1).to_string()));
    out.push((Template::PrevBigram, ngram(sentence, at - 2, 2)));
    out.push((Template::NextBigram, ngram(sentence, at + 1, 2)));
    out.push((Template::PrevTrigram, ngram(sentence, at - 3, 3)));
    out.push((Template::NextTrigram, ngram(sentence, at + 1, 3)));
    if let Some(lex) = lexicon {
        for (k, on) in pattern_indicators(sentence, lex, i).iter().enumerate() {
            if *on {
                out.push((Template::Pattern, k.to_string()));
            }
        }
    }
    out
}

/// Emission `[T x L]` and transition `[L x L]` log-potentials, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub len: usize,
    pub labels: usize,
    pub emission: Vec<f64>,
    pub transition: Vec<f64>,
}

impl Potentials {
    pub fn zeros(len: usize, labels: usize) -> Self {
        Potentials {
            len,
            labels,
            emission: vec![0.0; len * labels],
            transition: vec![0.0; labels * labels],
        }
    }

    #[inline]
    pub fn emit(&self, t: usize, y: usize) -> f64 {
        self.emission[t * self.labels + y]
    }

    #[inline]
    pub fn trans(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.labels + to]
    }

    /// Unnormalized log-score of a label sequence, accumulated left to right.
    pub fn sequence_score(&self, tags: &[usize]) -> f64 {
        assert_eq!(tags.len(), self.len);
        let mut s = self.emit(0, tags[0]);
        for t in 1..self.len {
            s = s + self.trans(tags[t - 1], tags[t]) + self.emit(t, tags[t]);
        }
        s
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Forward log-messages `alpha[t][y]`.
pub fn forward(p: &Potentials) -> Vec<f64> {
    let l = p.labels;
    let mut alpha = vec![0.0; p.len * l];
    let mut buf = vec![0.0; l];
    for y in 0..l {
        alpha[y] = p.emit(0, y);
    }
    for t in 1..p.len {
        for y in 0..l {
            for (yp, b) in buf.iter_mut().enumerate() {
                *b = alpha[(t - 1) * l + yp] + p.trans(yp, y);
            }
            alpha[t * l + y] = log_sum_exp(&buf) + p.emit(t, y);
        }
    }
    alpha
}

/// Backward log-messages `beta[t][y]` (excluding the emission at `t`).
pub fn backward(p: &Potentials) -> Vec<f64> {
    let l = p.labels;
    let mut beta = vec![0.0; p.len * l];
    let mut buf = vec![0.0; l];
    for t in (0..p.len.saturating_sub(1)).rev() {
        for y in 0..l {
            for (yn, b) in buf.iter_mut().enumerate() {
                *b = p.trans(y, yn) + p.emit(t + 1, yn) + beta[(t + 1) * l + yn];
            }
            beta[t * l + y] = log_sum_exp(&buf);
        }
    }
    beta
}

/// Log of the sum over all label sequences of exp(score). Requires `len >= 1`.
pub fn log_partition(p: &Potentials) -> f64 {
    assert!(p.len >= 1, "log_partition needs at least one position");
    let alpha = forward(p);
    log_sum_exp(&alpha[(p.len - 1) * p.labels..])
}

/// Same quantity computed from the backward messages.
pub fn log_partition_backward(p: &Potentials) -> f64 {
    assert!(p.len >= 1);
    let beta = backward(p);
    let first: Vec<f64> = (0..p.labels).map(|y| p.emit(0, y) + beta[y]).collect();
    log_sum_exp(&first)
}

#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// `unary[t][y]` = P(y_t = y).
    pub unary: Vec<f64>,
    /// Expected transition counts summed over positions, `[L x L]`.
    pub pairwise: Vec<f64>,
}

pub fn marginals(p: &Potentials) -> Marginals {
    let l = p.labels;
    let alpha = forward(p);
    let beta = backward(p);
    let log_z = log_sum_exp(&alpha[(p.len - 1) * l..]);
    let unary = (0..p.len * l)
        .map(|k| (alpha[k] + beta[k] - log_z).exp())
        .collect();
    let mut pairwise = vec![0.0; l * l];
    for t in 1..p.len {
        for a in 0..l {
            for b in 0..l {
                let lp =
                    alpha[(t - 1) * l + a] + p.trans(a, b) + p.emit(t, b) + beta[t * l + b] - log_z;
                pairwise[a * l + b] += lp.exp();
            }
        }
    }
    Marginals {
        log_z,
        unary,
        pairwise,
    }
}

/// Highest-scoring label sequence. Ties go to the lower label index at the
/// final position and at every backpointer.
pub fn viterbi(p: &Potentials) -> Vec<usize> {
    let l = p.labels;
    if p.len == 0 {
        return Vec::new();
    }
    let mut delta = vec![0.0; p.len * l];
    let mut back = vec![0usize; p.len * l];
    for y in 0..l {
        delta[y] = p.emit(0, y);
    }
    for t in 1..p.len {
        for y in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for yp in 0..l {
                let s = delta[(t - 1) * l + yp] + p.trans(yp, y);
                if s > best {
                    best = s;
                    arg = yp;
                }
            }
            delta[t * l + y] = best + p.emit(t, y);
            back[t * l + y] = arg;
        }
    }
    let last = (p.len - 1) * l;
    let mut y = 0;
    for k in 1..l {
        if delta[last + k] > delta[last + y] {
            y = k;
        }
    }
    let mut path = vec![0; p.len];
    path[p.len - 1] = y;
    for t in (1..p.len).rev() {
        y = back[t * l + y];
        path[t - 1] = y;
    }
    path
}

/// Feature configuration shared by training and decoding.
#[derive(Debug, Clone, Default)]
pub struct FeatureConfig {
    /// Pattern lexicon for the nine indicator features; `None` disables them.
    pub lexicon: Option<PatternLexicon>,
}

/// A sentence with its attributes resolved to model indices.
#[derive(Debug, Clone)]
pub struct Prepared {
    attrs: Vec<Vec<usize>>,
    gold: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct CrfModel {
    pub category: Category,
    pub l2: f64,
    pub features: FeatureConfig,
    index: HashMap<Attribute, usize>,
    attributes: Vec<Attribute>,
    /// Emission block `[A x L]` followed by transitions `[L x L]`.
    weights: Vec<f64>,
}

impl CrfModel {
    /// Empty model with every attribute observed in `sentences` registered.
    pub fn new(
        category: Category,
        features: FeatureConfig,
        l2: f64,
        sentences: &[Sentence],
    ) -> Self {
        let mut model = CrfModel {
            category,
            l2,
            features,
            index: HashMap::new(),
            attributes: Vec::new(),
            weights: Vec::new(),
        };
        for s in sentences {
            for i in 0..s.len() {
                for a in extract_features(s, i, model.features.lexicon.as_ref()) {
                    if !model.index.contains_key(&a) {
                        model.index.insert(a.clone(), model.attributes.len());
                        model.attributes.push(a);
                    }
                }
            }
        }
        model.weights = vec![0.0; model.attributes.len() * NUM_LABELS + NUM_LABELS * NUM_LABELS];
        model
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn transition_offset(&self) -> usize {
        self.attributes.len() * NUM_LABELS
    }

    /// Feature key for a weight index.
    pub fn feature_key(&self, k: usize) -> FeatureKey {
        let off = self.transition_offset();
        if k < off {
            FeatureKey::Emission {
                attribute: self.attributes[k / NUM_LABELS].clone(),
                label: Tag::from_index(k % NUM_LABELS),
            }
        } else {
            let r = k - off;
            FeatureKey::Transition {
                from: Tag::from_index(r / NUM_LABELS),
                to: Tag::from_index(r % NUM_LABELS),
            }
        }
    }

    pub fn weight_index(&self, key: &FeatureKey) -> Option<usize> {
        match key {
            FeatureKey::Emission { attribute, label } => self
                .index
                .get(attribute)
                .map(|a| a * NUM_LABELS + label.index()),
            FeatureKey::Transition { from, to } => {
                Some(self.transition_offset() + from.index() * NUM_LABELS + to.index())
            }
        }
    }

    pub fn weight_map(&self) -> HashMap<FeatureKey, f64> {
        (0..self.weights.len())
            .map(|k| (self.feature_key(k), self.weights[k]))
            .collect()
    }

    pub fn prepare(&self, sentence: &Sentence) -> Prepared {
        let attrs = (0..sentence.len())
            .map(|i| {
                extract_features(sentence, i, self.features.lexicon.as_ref())
                    .iter()
                    .filter_map(|a| self.index.get(a).copied())
                    .collect()
            })
            .collect();
        let gold = sentence
            .labels(self.category)
            .map(|tags| tags.iter().map(|t| t.index()).collect());
        Prepared { attrs, gold }
    }

    fn potentials_prepared(&self, prep: &Prepared) -> Potentials {
        let mut p = Potentials::zeros(prep.attrs.len(), NUM_LABELS);
        for (t, attrs) in prep.attrs.iter().enumerate() {
            for &a in attrs {
                for y in 0..NUM_LABELS {
                    p.emission[t * NUM_LABELS + y] += self.weights[a * NUM_LABELS + y];
                }
            }
        }
        p.transition
            .copy_from_slice(&self.weights[self.transition_offset()..]);
        p
    }

    pub fn log_potentials(&self, sentence: &Sentence) -> Potentials {
        self.potentials_prepared(&self.prepare(sentence))
    }

    pub fn decode(&self, sentence: &Sentence) -> Vec<Tag> {
        if sentence.is_empty() {
            return Vec::new();
        }
        viterbi(&self.log_potentials(sentence))
            .into_iter()
            .map(Tag::from_index)
            .collect()
    }

    /// Adds one sentence's negative log-likelihood gradient (expected minus
    /// empirical counts) into `grad`; returns its NLL.
    fn accumulate(&self, prep: &Prepared, grad: &mut [f64]) -> f64 {
        let gold = prep.gold.as_ref().expect("prepared with labels");
        if gold.is_empty() {
            return 0.0;
        }
        let p = self.potentials_prepared(prep);
        let m = marginals(&p);
        let off = self.transition_offset();
        for (t, attrs) in prep.attrs.iter().enumerate() {
            for &a in attrs {
                for y in 0..NUM_LABELS {
                    grad[a * NUM_LABELS + y] += m.unary[t * NUM_LABELS + y];
                }
                grad[a * NUM_LABELS + gold[t]] -= 1.0;
            }
        }
        for k in 0..NUM_LABELS * NUM_LABELS {
            grad[off + k] += m.pairwise[k];
        }
        for t in 1..gold.len() {
            grad[off + gold[t - 1] * NUM_LABELS + gold[t]] -= 1.0;
        }
        m.log_z - p.sequence_score(gold)
    }

    /// Batch loss `sum(logZ - gold score) + (l2/2)|w|^2` and its gradient,
    /// indexed like [`CrfModel::weights`].
    pub fn nll_and_gradient(&self, batch: &[Sentence]) -> Result<(f64, Vec<f64>), CrfError> {
        let prepared = batch
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let p = self.prepare(s);
                if p.gold.is_none() {
                    Err(CrfError::MissingLabels(k, self.category))
                } else {
                    Ok(p)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut grad = vec![0.0; self.weights.len()];
        let mut loss = 0.0;
        for p in &prepared {
            loss += self.accumulate(p, &mut grad);
        }
        let mut sq = 0.0;
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g += self.l2 * w;
            sq += w * w;
        }
        Ok((loss + 0.5 * self.l2 * sq, grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfTrainConfig {
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Step size at epoch `e` is `lr / (1 + decay * e)`.
    pub decay: f64,
    pub seed: u64,
    /// Stop after this many epochs without a dev-F1 improvement.
    pub patience: Option<usize>,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        CrfTrainConfig {
            l2: 1.0,
            epochs: 20,
            batch_size: 8,
            lr: 0.5,
            decay: 0.1,
            seed: 1,
            patience: Some(5),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean training NLL per sentence, per epoch (before the L2 term).
    pub epoch_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
    pub best_epoch: usize,
}

fn dev_f1(model: &CrfModel, dev: &[(Prepared, Vec<Tag>)]) -> f64 {
    let mut gold = Vec::with_capacity(dev.len());
    let mut pred = Vec::with_capacity(dev.len());
    for (prep, g) in dev {
        if g.is_empty() {
            continue;
        }
        let path = viterbi(&model.potentials_prepared(prep));
        pred.push(path.into_iter().map(Tag::from_index).collect::<Vec<_>>());
        gold.push(g.clone());
    }
    token_prf(&gold, &pred).map(|s| s.f1).unwrap_or(0.0)
}

/// Trains a CRF for `category` on labeled sentences.
pub fn train_crf(
    train: &[Sentence],
    dev: Option<&[Sentence]>,
    category: Category,
    features: FeatureConfig,
    config: &CrfTrainConfig,
) -> Result<(CrfModel, TrainReport), CrfError> {
    if train.is_empty() {
        return Err(CrfError::EmptyData);
    }
    let mut model = CrfModel::new(category, features, config.l2, train);
    let prepared = train
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = model.prepare(s);
            p.gold
                .as_ref()
                .ok_or(CrfError::MissingLabels(k, category))?;
            Ok(p)
        })
        .collect::<Result<Vec<_>, CrfError>>()?;
    let dev_prepared: Option<Vec<(Prepared, Vec<Tag>)>> = dev
        .map(|d| {
            d.iter()
                .enumerate()
                .map(|(k, s)| {
                    let gold = s
                        .labels(category)
                        .ok_or(CrfError::MissingLabels(k, category))?;
                    Ok((model.prepare(s), gold.to_vec()))
                })
                .collect::<Result<Vec<_>, CrfError>>()
        })
        .transpose()?;

    let n = prepared.len() as f64;
    let batch_size = config.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut grad = vec![0.0; model.weights.len()];
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let step = config.lr / (1.0 + config.decay * epoch as f64);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &k in batch {
                epoch_loss += model.accumulate(&prepared[k], &mut grad);
            }
            let b = batch.len() as f64;
            // batch-mean gradient, then a proximal step on the matching share of the penalty
            let shrink = 1.0 / (1.0 + step * config.l2 / n);
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w = (*w - step * g / b) * shrink;
            }
        }
        report.epoch_loss.push(epoch_loss / n);
        log::debug!("crf epoch {epoch}: mean nll {:.6}", epoch_loss / n);

        if let Some(dev) = &dev_prepared {
            let f1 = dev_f1(&model, dev);
            report.dev_f1.push(f1);
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, model.weights.clone()));
                report.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if config.patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some((_, w)) = best {
        model.weights = w;
    }
    Ok((model, report))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    category: Category,
    l2: f64,
    with_patterns: bool,
    #[serde(default)]
    lexicon: Vec<String>,
    features: Vec<(String, String, String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_config: Option<serde_json::Value>,
}

fn tag_name(t: Tag) -> &'static str {
    match t {
        Tag::Out => "OUT",
        Tag::In => "IN",
    }
}

fn parse_tag(s: &str) -> Result<Tag, CrfError> {
    match s {
        "OUT" => Ok(Tag::Out),
        "IN" => Ok(Tag::In),
        other => Err(CrfError::Format(format!("unknown label `{other}`"))),
    }
}

impl CrfModel {
    /// Versioned JSON with every weight as a 17-significant-digit decimal string.
    pub fn to_json(&self, run_config: Option<serde_json::Value>) -> Result<String, CrfError> {
        let features = (0..self.weights.len())
            .map(|k| {
                let w = format!("{:.16e}", self.weights[k]);
                match self.feature_key(k) {
                    FeatureKey::Emission { attribute, label } => (
                        attribute.0.to_string(),
                        attribute.1,
                        tag_name(label).to_string(),
                        w,
                    ),
                    FeatureKey::Transition { from, to } => (
                        Template::Transition.to_string(),
                        String::new(),
                        format!("{}>{}", tag_name(from), tag_name(to)),
                        w,
                    ),
                }
            })
            .collect();
        let lexicon = match &self.features.lexicon {
            Some(lex) => {
                let mut buf = Vec::new();
                lex.write_tsv(&mut buf).expect("write to Vec");
                String::from_utf8(buf)
                    .expect("utf8")
                    .lines()
                    .map(str::to_string)
                    .collect()
            }
            None => Vec::new(),
        };
        let file = ModelFile {
            version: MODEL_VERSION,
            category: self.category,
            l2: self.l2,
            with_patterns: self.features.lexicon.is_some(),
            lexicon,
            features,
            run_config,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<CrfModel, CrfError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(CrfError::Format(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let lexicon = if file.with_patterns {
            let joined = file.lexicon.join("\n");
            Some(
                PatternLexicon::read_tsv(joined.as_bytes())
                    .map_err(|e| CrfError::Format(e.to_string()))?,
            )
        } else {
            None
        };
        let mut model = CrfModel {
            category: file.category,
            l2: file.l2,
            features: FeatureConfig { lexicon },
            index: HashMap::new(),
            attributes: Vec::new(),
            weights: Vec::new(),
        };
        let mut emissions = Vec::new();
        let mut transitions = [0.0; NUM_LABELS * NUM_LABELS];
        for (template, payload, label, weight) in file.features {
            let w: f64 = weight
                .parse()
                .map_err(|_| CrfError::Format(format!("bad weight `{weight}`")))?;
            if !w.is_finite() {
                return Err(CrfError::Format(format!("non-finite weight `{weight}`")));
            }
            let template: Template = template.parse().map_err(CrfError::Format)?;
            if template == Template::Transition {
                let (a, b) = label
                    .split_once('>')
                    .ok_or_else(|| CrfError::Format(format!("bad transition `{label}`")))?;
                transitions[parse_tag(a)?.index() * NUM_LABELS + parse_tag(b)?.index()] = w;
            } else {
                let attribute = (template, payload);
                let a = match model.index.get(&attribute) {
                    Some(&a) => a,
                    None => {
                        model
                            .index
                            .insert(attribute.clone(), model.attributes.len());
                        model.attributes.push(attribute);
                        emissions.push([0.0; NUM_LABELS]);
                        model.attributes.len() - 1
                    }
                };
                emissions[a][parse_tag(&label)?.index()] = w;
            }
        }
        model.weights = emissions.into_iter().flatten().chain(transitions).collect();
        Ok(model)
    }
}
