//! BiLSTM-CRF tagger with a character-level BiLSTM, written out by hand:
//! forward pass, backpropagation through time, and Adam.
//!
//! Token representation is `[word embedding; char BiLSTM final states]`.
//! Pattern knowledge enters in one of three ways, chosen by [`Strategy`]:
//! the nine indicators appended after the word BiLSTM (`BeforeCrf`) or to
//! its input (`BeforeLstm`), or pattern occurrences collapsed into single
//! tokens with their own embeddings (`Embedding`).

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{merge_pattern_tokens, Category, Sentence, Tag};
use crate::crf::{marginals, viterbi, Potentials, NUM_LABELS};
use crate::embeddings::WordVectors;
use crate::eval::token_prf;
use crate::patterns::{pattern_indicators, PatternLexicon};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const NUM_INDICATORS: usize = 9;
pub const UNK: &str = "<UNK>";

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite values in `{0}`")]
    NonFinite(&'static str),
    #[error("sentence {0} has no {1} labels")]
    MissingLabels(usize, Category),
    #[error("training data is empty")]
    EmptyData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    None,
    BeforeCrf,
    BeforeLstm,
    Embedding,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::None,
        Strategy::BeforeCrf,
        Strategy::BeforeLstm,
        Strategy::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::BeforeCrf => "before-crf",
            Strategy::BeforeLstm => "before-lstm",
            Strategy::Embedding => "embedding",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                format!("unknown strategy `{s}` (none|before-crf|before-lstm|embedding)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub word_dim: usize,
    pub char_emb_dim: usize,
    /// Character LSTM hidden size per direction.
    pub char_dim: usize,
    /// Word LSTM hidden size per direction.
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            word_dim: 200,
            char_emb_dim: 25,
            char_dim: 25,
            hidden: 200,
            dropout: 0.5,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            seed: 1,
            strategy: Strategy::None,
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NeuralError::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if self.lr <= 0.0 {
            return Err(NeuralError::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.word_dim == 0 || self.char_emb_dim == 0 || self.char_dim == 0 || self.hidden == 0 {
            return Err(NeuralError::Config("dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Width of the word BiLSTM input.
    pub fn input_dim(&self) -> usize {
        let extra = if self.strategy == Strategy::BeforeLstm {
            NUM_INDICATORS
        } else {
            0
        };
        self.word_dim + 2 * self.char_dim + extra
    }

    /// Width of the vector fed to the emission projection.
    pub fn feature_dim(&self) -> usize {
        let extra = if self.strategy == Strategy::BeforeCrf {
            NUM_INDICATORS
        } else {
            0
        };
        2 * self.hidden + extra
    }
}

/// Dense row-major matrix (vectors are `cols == 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Tensor { rows, cols, data }
    }

    fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::uniform(rows, cols, limit, rng)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// LSTM with stacked gates `[input; forget; cell; output]`; the weight
/// matrix acts on `[x; h_prev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w: Tensor,
    pub b: Tensor,
}

impl Lstm {
    fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = Tensor::xavier(4 * hidden, input + hidden, rng);
        let mut b = Tensor::zeros(4 * hidden, 1);
        b.data[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        Lstm { w, b }
    }

    fn zeros_like(&self) -> Self {
        Lstm {
            w: Tensor::zeros(self.w.rows, self.w.cols),
            b: Tensor::zeros(self.b.rows, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.rows / 4
    }

    pub fn input(&self) -> usize {
        self.w.cols - self.hidden()
    }
}

struct LstmCache {
    xs: Vec<Vec<f64>>,
    /// `hs[t]` is the state after step t; `hs[0]` the zero initial state.
    hs: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
    /// Post-activation gates per step.
    gates: Vec<Vec<f64>>,
}

impl LstmCache {
    fn outputs(&self) -> &[Vec<f64>] {
        &self.hs[1..]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lstm_forward(p: &Lstm, xs: Vec<Vec<f64>>) -> LstmCache {
    let h = p.hidden();
    let d = p.input();
    let cols = p.w.cols;
    let mut hs = vec![vec![0.0; h]];
    let mut cs = vec![vec![0.0; h]];
    let mut gates = Vec::with_capacity(xs.len());
    for x in &xs {
        debug_assert_eq!(x.len(), d);
        let h_prev = hs.last().unwrap();
        let c_prev = cs.last().unwrap();
        let mut z = p.b.data.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            let row = &p.w.data[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (w, xv) in row[..d].iter().zip(x) {
                acc += w * xv;
            }
            for (w, hv) in row[d..].iter().zip(h_prev) {
                acc += w * hv;
            }
            *zr += acc;
        }
        for k in 0..h {
            z[k] = sigmoid(z[k]);
            z[h + k] = sigmoid(z[h + k]);
            z[2 * h + k] = z[2 * h + k].tanh();
            z[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for k in 0..h {
            c[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
            hn[k] = z[3 * h + k] * c[k].tanh();
        }
        gates.push(z);
        cs.push(c);
        hs.push(hn);
    }
    LstmCache { xs, hs, cs, gates }
}

/// Backpropagates output-state gradients `dhs` through the sequence,
/// accumulating parameter gradients into `grad`; returns input gradients.
fn lstm_backward(p: &Lstm, cache: &LstmCache, dhs: &[Vec<f64>], grad: &mut Lstm) -> Vec<Vec<f64>> {
    let h = p.hidden();
    let d = p.input();
    let cols = p.w.cols;
    let steps = cache.xs.len();
    let mut dxs = vec![vec![0.0; d]; steps];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let g = &cache.gates[t];
        let c = &cache.cs[t + 1];
        let c_prev = &cache.cs[t];
        let h_prev = &cache.hs[t];
        let x = &cache.xs[t];
        for k in 0..h {
            let dh = dhs[t][k] + dh_next[k];
            let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let tc = c[k].tanh();
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * gg * i * (1.0 - i);
            dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - gg * gg);
            dz[3 * h + k] = dh * tc * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            grad.b.data[r] += dzr;
            let row = &p.w.data[r * cols..(r + 1) * cols];
            let grow = &mut grad.w.data[r * cols..(r + 1) * cols];
            for j in 0..d {
                grow[j] += dzr * x[j];
                dxs[t][j] += dzr * row[j];
            }
            for k in 0..h {
                grow[d + k] += dzr * h_prev[k];
                dh_next[k] += dzr * row[d + k];
            }
        }
    }
    dxs
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub word_emb: Tensor,
    pub char_emb: Tensor,
    pub char_fw: Lstm,
    pub char_bw: Lstm,
    pub word_fw: Lstm,
    pub word_bw: Lstm,
    pub out_w: Tensor,
    pub out_b: Tensor,
    pub transition: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            word_emb: Tensor::zeros(self.word_emb.rows, self.word_emb.cols),
            char_emb: Tensor::zeros(self.char_emb.rows, self.char_emb.cols),
            char_fw: self.char_fw.zeros_like(),
            char_bw: self.char_bw.zeros_like(),
            word_fw: self.word_fw.zeros_like(),
            word_bw: self.word_bw.zeros_like(),
            out_w: Tensor::zeros(self.out_w.rows, self.out_w.cols),
            out_b: Tensor::zeros(self.out_b.rows, 1),
            transition: Tensor::zeros(NUM_LABELS, NUM_LABELS),
        }
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 13] {
        [
            ("word_emb", &self.word_emb),
            ("char_emb", &self.char_emb),
            ("char_fw.w", &self.char_fw.w),
            ("char_fw.b", &self.char_fw.b),
            ("char_bw.w", &self.char_bw.w),
            ("char_bw.b", &self.char_bw.b),
            ("word_fw.w", &self.word_fw.w),
            ("word_fw.b", &self.word_fw.b),
            ("word_bw.w", &self.word_bw.w),
            ("word_bw.b", &self.word_bw.b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
            ("transition", &self.transition),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.word_emb,
            &mut self.char_emb,
            &mut self.char_fw.w,
            &mut self.char_fw.b,
            &mut self.char_bw.w,
            &mut self.char_bw.b,
            &mut self.word_fw.w,
            &mut self.word_fw.b,
            &mut self.word_bw.w,
            &mut self.word_bw.b,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.transition,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data.len()).sum()
    }
}

/// String-to-row lookup with row 0 reserved for unknown items.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab::default();
        v.add(UNK);
        v
    }

    pub fn add(&mut self, item: &str) -> usize {
        if let Some(&k) = self.index.get(item) {
            return k;
        }
        self.index.insert(item.to_string(), self.items.len());
        self.items.push(item.to_string());
        self.items.len() - 1
    }

    /// Row for `item`, or the unknown row.
    pub fn get(&self, item: &str) -> usize {
        self.index.get(item).copied().unwrap_or(0)
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index.contains_key(item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    fn from_items(items: Vec<String>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        Vocab { items, index }
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.items {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NeuralModel {
    pub config: NeuralConfig,
    pub category: Category,
    pub words: Vocab,
    pub chars: Vocab,
    pub params: Params,
    /// Needed by every strategy except `None`.
    pub lexicon: Option<PatternLexicon>,
}

/// A sentence mapped to vocabulary rows, ready for the network.
#[derive(Debug, Clone)]
pub struct Prepared {
    words: Vec<usize>,
    chars: Vec<Vec<usize>>,
    indicators: Vec<[f64; NUM_INDICATORS]>,
    gold: Option<Vec<usize>>,
    /// Original-token ranges of each (possibly merged) token.
    alignment: Vec<std::ops::Range<usize>>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Word-embedding row of each token.
    pub fn word_ids(&self) -> &[usize] {
        &self.words
    }

    /// Char-embedding rows of each token.
    pub fn char_ids(&self) -> &[Vec<usize>] {
        &self.chars
    }

    pub fn indicators(&self) -> &[[f64; NUM_INDICATORS]] {
        &self.indicators
    }
}

struct ForwardPass {
    char_fw: Vec<LstmCache>,
    char_bw: Vec<LstmCache>,
    masks: Vec<Vec<f64>>,
    fw: LstmCache,
    bw: LstmCache,
    feats: Vec<Vec<f64>>,
    potentials: Potentials,
}

/// Output of one forward evaluation.
#[derive(Debug, Clone)]
pub struct NetworkOutput {
    pub potentials: Potentials,
    /// CRF negative log-likelihood of the gold tags; `None` without labels.
    pub loss: Option<f64>,
}

impl NeuralModel {
    /// Builds vocabularies and initializes parameters. For the `Embedding`
    /// strategy, `train` must already be pattern-merged.
    pub fn build(
        config: NeuralConfig,
        category: Category,
        train: &[Sentence],
        pretrained: Option<&WordVectors>,
        lexicon: Option<PatternLexicon>,
    ) -> Result<NeuralModel, NeuralError> {
        config.validate()?;
        if config.strategy != Strategy::None && lexicon.is_none() {
            return Err(NeuralError::Config(format!(
                "strategy `{}` needs a pattern lexicon",
                config.strategy
            )));
        }
        if let Some(pre) = pretrained {
            if pre.dim() != config.word_dim {
                return Err(NeuralError::Config(format!(
                    "embedding dimension {} does not match word_dim {}",
                    pre.dim(),
                    config.word_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut words = Vocab::new();
        let mut chars = Vocab::new();
        if let Some(pre) = pretrained {
            for w in pre.words() {
                words.add(&w.to_lowercase());
            }
        }
        for s in train {
            for t in s.tokens() {
                words.add(t.lower());
                for ch in t.surface().chars() {
                    chars.add(ch.encode_utf8(&mut [0; 4]));
                }
            }
        }

        let mut word_emb = Tensor::uniform(words.len(), config.word_dim, 0.25, &mut rng);
        if let Some(pre) = pretrained {
            let mut filled = vec![false; words.len()];
            for (k, w) in pre.words().iter().enumerate() {
                let row = words.get(&w.to_lowercase());
                if row != 0 && !filled[row] {
                    word_emb.row_mut(row).copy_from_slice(pre.vector(k));
                    filled[row] = true;
                }
            }
        }
        let char_limit = (3.0 / config.char_emb_dim as f64).sqrt();
        let char_emb = Tensor::uniform(chars.len(), config.char_emb_dim, char_limit, &mut rng);
        let char_fw = Lstm::new(config.char_emb_dim, config.char_dim, &mut rng);
        let char_bw = Lstm::new(config.char_emb_dim, config.char_dim, &mut rng);
        let word_fw = Lstm::new(config.input_dim(), config.hidden, &mut rng);
        let word_bw = Lstm::new(config.input_dim(), config.hidden, &mut rng);
        let out_w = Tensor::xavier(NUM_LABELS, config.feature_dim(), &mut rng);
        let params = Params {
            word_emb,
            char_emb,
            char_fw,
            char_bw,
            word_fw,
            word_bw,
            out_w,
            out_b: Tensor::zeros(NUM_LABELS, 1),
            transition: Tensor::zeros(NUM_LABELS, NUM_LABELS),
        };
        Ok(NeuralModel {
            config,
            category,
            words,
            chars,
            params,
            lexicon,
        })
    }

    /// Maps a sentence (original tokens) into network inputs, merging
    /// pattern tokens first under the `Embedding` strategy.
    pub fn prepare(&self, sentence: &Sentence) -> Prepared {
        let (sentence, alignment) = match (self.config.strategy, &self.lexicon) {
            (Strategy::Embedding, Some(lex)) => {
                let merged = merge_pattern_tokens(sentence, lex);
                (merged.sentence, merged.alignment)
            }
            _ => (
                sentence.clone(),
                (0..sentence.len()).map(|i| i..i + 1).collect(),
            ),
        };
        let words = sentence
            .tokens()
            .iter()
            .map(|t| self.words.get(t.lower()))
            .collect();
        let chars = sentence
            .tokens()
            .iter()
            .map(|t| {
                t.surface()
                    .chars()
                    .map(|ch| self.chars.get(ch.encode_utf8(&mut [0; 4])))
                    .collect()
            })
            .collect();
        let indicators = match (self.config.strategy, &self.lexicon) {
            (Strategy::BeforeCrf | Strategy::BeforeLstm, Some(lex)) => (0..sentence.len())
                .map(|i| pattern_indicators(&sentence, lex, i).map(|b| if b { 1.0 } else { 0.0 }))
                .collect(),
            _ => vec![[0.0; NUM_INDICATORS]; sentence.len()],
        };
        let gold = sentence
            .labels(self.category)
            .map(|tags| tags.iter().map(|t| t.index()).collect());
        Prepared {
            words,
            chars,
            indicators,
            gold,
            alignment,
        }
    }

    /// Token representation in eval mode: word embedding, char BiLSTM final
    /// states, and (for `BeforeLstm`) the nine indicators.
    pub fn token_representation(&self, sentence: &Sentence, i: usize) -> Vec<f64> {
        let prep = self.prepare(sentence);
        self.representation(&prep, i).0
    }

    fn representation(&self, prep: &Prepared, i: usize) -> (Vec<f64>, LstmCache, LstmCache) {
        let p = &self.params;
        let char_inputs: Vec<Vec<f64>> = prep.chars[i]
            .iter()
            .map(|&c| p.char_emb.row(c).to_vec())
            .collect();
        let mut reversed = char_inputs.clone();
        reversed.reverse();
        let fw = lstm_forward(&p.char_fw, char_inputs);
        let bw = lstm_forward(&p.char_bw, reversed);
        let mut v = Vec::with_capacity(self.config.input_dim());
        v.extend_from_slice(p.word_emb.row(prep.words[i]));
        v.extend_from_slice(fw.hs.last().unwrap());
        v.extend_from_slice(bw.hs.last().unwrap());
        if self.config.strategy == Strategy::BeforeLstm {
            v.extend_from_slice(&prep.indicators[i]);
        }
        (v, fw, bw)
    }

    fn forward_pass(
        &self,
        prep: &Prepared,
        train_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass, NeuralError> {
        let p = &self.params;
        let cfg = &self.config;
        let n = prep.len();
        let mut inputs = Vec::with_capacity(n);
        let mut char_fw = Vec::with_capacity(n);
        let mut char_bw = Vec::with_capacity(n);
        for i in 0..n {
            let (v, fw, bw) = self.representation(prep, i);
            inputs.push(v);
            char_fw.push(fw);
            char_bw.push(bw);
        }

        // Masks for the base dimensions of every token are drawn before any
        // indicator dimension, so strategies share the same random stream.
        let din = cfg.input_dim();
        let base = cfg.word_dim + 2 * cfg.char_dim;
        let mut masks = vec![vec![1.0; din]; n];
        if train_mode && cfg.dropout > 0.0 {
            let keep = 1.0 - cfg.dropout;
            let mut draw = |m: &mut f64| {
                *m = if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            };
            for m in masks.iter_mut() {
                m[..base].iter_mut().for_each(&mut draw);
            }
            for m in masks.iter_mut() {
                m[base..].iter_mut().for_each(&mut draw);
            }
        }
        for (x, m) in inputs.iter_mut().zip(&masks) {
            for (a, b) in x.iter_mut().zip(m) {
                *a *= b;
            }
        }

        let mut reversed = inputs.clone();
        reversed.reverse();
        let fw = lstm_forward(&p.word_fw, inputs);
        let bw = lstm_forward(&p.word_bw, reversed);
        let h = cfg.hidden;
        let mut feats = Vec::with_capacity(n);
        for t in 0..n {
            let mut f = Vec::with_capacity(cfg.feature_dim());
            f.extend_from_slice(&fw.outputs()[t]);
            f.extend_from_slice(&bw.outputs()[n - 1 - t]);
            if cfg.strategy == Strategy::BeforeCrf {
                f.extend_from_slice(&prep.indicators[t]);
            }
            debug_assert_eq!(
                f.len(),
                2 * h
                    + if cfg.strategy == Strategy::BeforeCrf {
                        NUM_INDICATORS
                    } else {
                        0
                    }
            );
            feats.push(f);
        }
        if !feats.iter().flatten().all(|x| x.is_finite()) {
            return Err(NeuralError::NonFinite("word_lstm.h"));
        }

        let mut potentials = Potentials::zeros(n, NUM_LABELS);
        for (t, f) in feats.iter().enumerate() {
            for y in 0..NUM_LABELS {
                let row = p.out_w.row(y);
                let mut acc = p.out_b.data[y];
                for (w, x) in row.iter().zip(f) {
                    acc += w * x;
                }
                potentials.emission[t * NUM_LABELS + y] = acc;
            }
        }
        potentials.transition.copy_from_slice(&p.transition.data);
        if !potentials.emission.iter().all(|x| x.is_finite()) {
            return Err(NeuralError::NonFinite("emission"));
        }
        Ok(ForwardPass {
            char_fw,
            char_bw,
            masks,
            fw,
            bw,
            feats,
            potentials,
        })
    }

    /// Emission/transition potentials and, when gold labels are present,
    /// the CRF negative log-likelihood.
    pub fn forward(
        &self,
        prep: &Prepared,
        train_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NetworkOutput, NeuralError> {
        if prep.is_empty() {
            return Ok(NetworkOutput {
                potentials: Potentials::zeros(0, NUM_LABELS),
                loss: prep.gold.as_ref().map(|_| 0.0),
            });
        }
        let pass = self.forward_pass(prep, train_mode, rng)?;
        let loss = prep.gold.as_ref().map(|gold| {
            let m = marginals(&pass.potentials);
            m.log_z - pass.potentials.sequence_score(gold)
        });
        Ok(NetworkOutput {
            potentials: pass.potentials,
            loss,
        })
    }

    /// Loss and full parameter gradient for one labeled sentence.
    pub fn loss_and_gradient(
        &self,
        prep: &Prepared,
        train_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Params), NeuralError> {
        let gold = prep
            .gold
            .as_ref()
            .ok_or(NeuralError::MissingLabels(0, self.category))?;
        let mut grad = self.params.zeros_like();
        if prep.is_empty() {
            return Ok((0.0, grad));
        }
        let p = &self.params;
        let cfg = &self.config;
        let n = prep.len();
        let pass = self.forward_pass(prep, train_mode, rng)?;
        let m = marginals(&pass.potentials);
        let loss = m.log_z - pass.potentials.sequence_score(gold);
        if !loss.is_finite() {
            return Err(NeuralError::NonFinite("loss"));
        }

        // CRF layer
        for k in 0..NUM_LABELS * NUM_LABELS {
            grad.transition.data[k] += m.pairwise[k];
        }
        for t in 1..n {
            grad.transition.data[gold[t - 1] * NUM_LABELS + gold[t]] -= 1.0;
        }
        let h = cfg.hidden;
        let mut dh_fw = vec![vec![0.0; h]; n];
        let mut dh_bw = vec![vec![0.0; h]; n];
        for t in 0..n {
            let f = &pass.feats[t];
            let mut dfeat = vec![0.0; f.len()];
            for y in 0..NUM_LABELS {
                let de = m.unary[t * NUM_LABELS + y] - if gold[t] == y { 1.0 } else { 0.0 };
                grad.out_b.data[y] += de;
                let grow = grad.out_w.row_mut(y);
                for (g, x) in grow.iter_mut().zip(f) {
                    *g += de * x;
                }
                for (d, w) in dfeat.iter_mut().zip(p.out_w.row(y)) {
                    *d += de * w;
                }
            }
            dh_fw[t].copy_from_slice(&dfeat[..h]);
            dh_bw[n - 1 - t].copy_from_slice(&dfeat[h..2 * h]);
        }

        // word BiLSTM
        let dx_fw = lstm_backward(&p.word_fw, &pass.fw, &dh_fw, &mut grad.word_fw);
        let dx_bw = lstm_backward(&p.word_bw, &pass.bw, &dh_bw, &mut grad.word_bw);

        // token representations
        let wd = cfg.word_dim;
        let cd = cfg.char_dim;
        for t in 0..n {
            let dx: Vec<f64> = dx_fw[t]
                .iter()
                .zip(&dx_bw[n - 1 - t])
                .zip(&pass.masks[t])
                .map(|((a, b), mk)| (a + b) * mk)
                .collect();
            for (g, d) in grad
                .word_emb
                .row_mut(prep.words[t])
                .iter_mut()
                .zip(&dx[..wd])
            {
                *g += d;
            }
            let steps = prep.chars[t].len();
            if steps == 0 {
                continue;
            }
            let mut dfinal = vec![vec![0.0; cd]; steps];
            dfinal[steps - 1].copy_from_slice(&dx[wd..wd + cd]);
            let dc_fw = lstm_backward(&p.char_fw, &pass.char_fw[t], &dfinal, &mut grad.char_fw);
            dfinal[steps - 1].copy_from_slice(&dx[wd + cd..wd + 2 * cd]);
            let dc_bw = lstm_backward(&p.char_bw, &pass.char_bw[t], &dfinal, &mut grad.char_bw);
            for (s, &c) in prep.chars[t].iter().enumerate() {
                let row = grad.char_emb.row_mut(c);
                for (g, (a, b)) in row
                    .iter_mut()
                    .zip(dc_fw[s].iter().zip(&dc_bw[steps - 1 - s]))
                {
                    *g += a + b;
                }
            }
        }
        Ok((loss, grad))
    }

    /// Viterbi tags for the original tokens of `sentence`; merged tokens
    /// pass their tag to every constituent.
    pub fn decode(&self, sentence: &Sentence) -> Result<Vec<Tag>, NeuralError> {
        let prep = self.prepare(sentence);
        self.decode_prepared(&prep)
    }

    fn decode_prepared(&self, prep: &Prepared) -> Result<Vec<Tag>, NeuralError> {
        if prep.is_empty() {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(prep, false, &mut rng)?;
        let path = viterbi(&out.potentials);
        Ok(project(&path, &prep.alignment))
    }
}

fn project(path: &[usize], alignment: &[std::ops::Range<usize>]) -> Vec<Tag> {
    let mut tags = Vec::new();
    for (y, r) in path.iter().zip(alignment) {
        tags.extend(std::iter::repeat_n(Tag::from_index(*y), r.len()));
    }
    tags
}

pub fn neural_decode(model: &NeuralModel, sentence: &Sentence) -> Result<Vec<Tag>, NeuralError> {
    model.decode(sentence)
}

/// Adam moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Params,
    v: Params,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Params, config: &NeuralConfig) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }

    pub fn update(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let grads = grad.named();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, (_, g)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                if gk == 0.0 && m.data[k] == 0.0 && v.data[k] == 0.0 {
                    continue;
                }
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeuralReport {
    /// Summed training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
    pub best_epoch: usize,
}

fn eval_f1(model: &NeuralModel, dev: &[(Prepared, Vec<Tag>)]) -> Result<f64, NeuralError> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (prep, g) in dev {
        pred.push(model.decode_prepared(prep)?);
        gold.push(g.clone());
    }
    Ok(token_prf(&gold, &pred).map(|s| s.f1).unwrap_or(0.0))
}

/// Per-sentence Adam training, shuffled each epoch under the config seed;
/// returns the best-dev-F1 snapshot (or the final model without a dev set).
pub fn train_neural(
    mut model: NeuralModel,
    train: &[Sentence],
    dev: Option<&[Sentence]>,
) -> Result<(NeuralModel, NeuralReport), NeuralError> {
    if train.is_empty() {
        return Err(NeuralError::EmptyData);
    }
    let category = model.category;
    let prepared = train
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = model.prepare(s);
            if p.gold.is_none() {
                Err(NeuralError::MissingLabels(k, category))
            } else {
                Ok(p)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dev_prepared = dev
        .map(|d| {
            d.iter()
                .enumerate()
                .map(|(k, s)| {
                    let gold = s
                        .labels(category)
                        .ok_or(NeuralError::MissingLabels(k, category))?;
                    Ok((model.prepare(s), gold.to_vec()))
                })
                .collect::<Result<Vec<_>, NeuralError>>()
        })
        .transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(&model.params, &model.config);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut report = NeuralReport::default();
    let mut best: Option<(f64, Params)> = None;
    for epoch in 0..model.config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let (loss, grad) = model.loss_and_gradient(&prepared[k], true, &mut rng)?;
            total += loss;
            adam.update(&mut model.params, &grad);
        }
        if !model.params.named().iter().all(|(_, t)| t.is_finite()) {
            return Err(NeuralError::NonFinite("parameters"));
        }
        report.epoch_loss.push(total);
        log::debug!("neural epoch {epoch}: loss {total:.6}");
        if let Some(dev) = &dev_prepared {
            let f1 = eval_f1(&model, dev)?;
            report.dev_f1.push(f1);
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, model.params.clone()));
                report.best_epoch = epoch;
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, report))
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: NeuralConfig,
    strategy: Strategy,
    category: Category,
    vocab_hash: String,
    words: Vec<String>,
    chars: Vec<String>,
    #[serde(default)]
    lexicon: Vec<String>,
    /// Tensor name to shape and element offset in the blob.
    tensors: std::collections::BTreeMap<String, TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_config: Option<serde_json::Value>,
}

impl NeuralModel {
    /// Writes the JSON manifest and the little-endian f64 tensor blob.
    pub fn save<M: Write, B: Write>(
        &self,
        manifest: M,
        mut blob: B,
        run_config: Option<serde_json::Value>,
    ) -> Result<(), NeuralError> {
        let mut tensors = std::collections::BTreeMap::new();
        let mut offset = 0;
        for (name, t) in self.params.named() {
            tensors.insert(
                name.to_string(),
                TensorEntry {
                    shape: [t.rows, t.cols],
                    offset,
                },
            );
            for x in &t.data {
                blob.write_all(&x.to_le_bytes())?;
            }
            offset += t.data.len();
        }
        let lexicon = match &self.lexicon {
            Some(lex) => {
                let mut buf = Vec::new();
                lex.write_tsv(&mut buf)?;
                String::from_utf8_lossy(&buf)
                    .lines()
                    .map(str::to_string)
                    .collect()
            }
            None => Vec::new(),
        };
        let m = Manifest {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            strategy: self.config.strategy,
            category: self.category,
            vocab_hash: self.words.digest(),
            words: self.words.items().to_vec(),
            chars: self.chars.items().to_vec(),
            lexicon,
            tensors,
            run_config,
        };
        serde_json::to_writer_pretty(manifest, &m)?;
        Ok(())
    }

    pub fn load<M: Read, B: Read>(manifest: M, mut blob: B) -> Result<NeuralModel, NeuralError> {
        let m: Manifest = serde_json::from_reader(manifest)?;
        if m.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported version {}",
                m.version
            )));
        }
        let words = Vocab::from_items(m.words);
        if words.digest() != m.vocab_hash {
            return Err(NeuralError::Checkpoint("vocabulary hash mismatch".into()));
        }
        let chars = Vocab::from_items(m.chars);
        let mut bytes = Vec::new();
        blob.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(NeuralError::Checkpoint(
                "blob length is not a multiple of 8".into(),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let lexicon = if m.lexicon.is_empty() {
            None
        } else {
            let joined = m.lexicon.join("\n");
            Some(
                PatternLexicon::read_tsv(joined.as_bytes())
                    .map_err(|e| NeuralError::Checkpoint(e.to_string()))?,
            )
        };
        let mut config = m.config;
        config.strategy = m.strategy;
        let mut model = NeuralModel::build(
            config,
            m.category,
            &[],
            None,
            lexicon.clone().or_else(|| Some(PatternLexicon::default())),
        )?;
        model.lexicon = lexicon;
        model.words = words;
        model.chars = chars;
        model.params.word_emb = Tensor::zeros(model.words.len(), model.config.word_dim);
        model.params.char_emb = Tensor::zeros(model.chars.len(), model.config.char_emb_dim);
        let names: Vec<&'static str> = model.params.named().iter().map(|(n, _)| *n).collect();
        for (name, t) in names.into_iter().zip(model.params.tensors_mut()) {
            let entry = m
                .tensors
                .get(name)
                .ok_or_else(|| NeuralError::Checkpoint(format!("missing tensor `{name}`")))?;
            if entry.shape != [t.rows, t.cols] {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    entry.shape,
                    [t.rows, t.cols]
                )));
            }
            let end = entry.offset + t.data.len();
            if end > values.len() {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor `{name}` runs past the blob"
                )));
            }
            t.data.copy_from_slice(&values[entry.offset..end]);
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::Pattern;

    fn tiny_config(strategy: Strategy) -> NeuralConfig {
        NeuralConfig {
            word_dim: 4,
            char_emb_dim: 3,
            char_dim: 3,
            hidden: 5,
            dropout: 0.0,
            epochs: 1,
            seed: 7,
            strategy,
            ..NeuralConfig::default()
        }
    }

    fn sample() -> Sentence {
        Sentence::from_pairs(&["patients", "with", "asthma"], &["NNS", "IN", "NN"])
            .with_labels(Category::P, vec![Tag::In, Tag::Out, Tag::In])
    }

    fn lexicon() -> PatternLexicon {
        let mut lex = PatternLexicon::default();
        lex.insert(Pattern::new(
            vec!["patients".into(), "with".into()],
            Category::P,
            20,
            21,
        ));
        lex.insert(Pattern::new(vec!["asthma".into()], Category::I, 20, 21));
        lex
    }

    #[test]
    fn representation_widths() {
        let cfg = NeuralConfig::default();
        assert_eq!(cfg.input_dim(), 250);
        let cfg = NeuralConfig {
            strategy: Strategy::BeforeLstm,
            ..NeuralConfig::default()
        };
        assert_eq!(cfg.input_dim(), 259);
        let cfg = NeuralConfig {
            strategy: Strategy::BeforeCrf,
            ..NeuralConfig::default()
        };
        assert_eq!(cfg.feature_dim(), 409);
        let model = NeuralModel::build(
            NeuralConfig {
                strategy: Strategy::BeforeLstm,
                ..NeuralConfig::default()
            },
            Category::P,
            &[sample()],
            None,
            Some(lexicon()),
        )
        .unwrap();
        assert_eq!(model.token_representation(&sample(), 0).len(), 259);
    }

    #[test]
    fn unknown_words_share_the_unk_row() {
        let model = NeuralModel::build(
            tiny_config(Strategy::None),
            Category::P,
            &[sample()],
            None,
            None,
        )
        .unwrap();
        let unseen = Sentence::from_pairs(&["zzz", "qqq"], &["NN", "NN"]);
        let a = model.token_representation(&unseen, 0);
        let b = model.token_representation(&unseen, 1);
        assert_eq!(&a[..4], model.params.word_emb.row(0));
        assert_eq!(&a[..4], &b[..4]);
    }

    #[test]
    fn zero_network_gives_uniform_loss() {
        let mut model = NeuralModel::build(
            tiny_config(Strategy::None),
            Category::P,
            &[sample()],
            None,
            None,
        )
        .unwrap();
        for t in [&mut model.params.word_fw, &mut model.params.word_bw] {
            t.w.data.iter_mut().for_each(|x| *x = 0.0);
        }
        model.params.out_w.data.iter_mut().for_each(|x| *x = 0.0);
        let prep = model.prepare(&sample());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = model.forward(&prep, false, &mut rng).unwrap();
        assert!((out.loss.unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(model.decode(&sample()).unwrap(), vec![Tag::Out; 3]);
    }

    #[test]
    fn eval_mode_is_deterministic_and_zero_dropout_matches() {
        let mut cfg = tiny_config(Strategy::None);
        cfg.dropout = 0.0;
        let model = NeuralModel::build(cfg, Category::P, &[sample()], None, None).unwrap();
        let prep = model.prepare(&sample());
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = model.forward(&prep, false, &mut r1).unwrap();
        let b = model.forward(&prep, false, &mut r2).unwrap();
        let c = model.forward(&prep, true, &mut r2).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.potentials, c.potentials);
    }

    #[test]
    fn adam_ignores_zero_gradient_from_fresh_state() {
        let model = NeuralModel::build(
            tiny_config(Strategy::None),
            Category::P,
            &[sample()],
            None,
            None,
        )
        .unwrap();
        let mut params = model.params.clone();
        let mut adam = Adam::new(&params, &model.config);
        adam.update(&mut params, &model.params.zeros_like());
        assert_eq!(params, model.params);
    }

    #[test]
    fn strategy_needs_lexicon_and_matching_dims() {
        assert!(matches!(
            NeuralModel::build(
                tiny_config(Strategy::BeforeCrf),
                Category::P,
                &[sample()],
                None,
                None
            ),
            Err(NeuralError::Config(_))
        ));
        let vectors = WordVectors::new(vec!["a".into()], 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            NeuralModel::build(
                tiny_config(Strategy::None),
                Category::P,
                &[sample()],
                Some(&vectors),
                None
            ),
            Err(NeuralError::Config(_))
        ));
        let bad = NeuralConfig {
            dropout: 1.0,
            ..tiny_config(Strategy::None)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn embedding_strategy_uses_merged_rows_and_projects_back() {
        let lex = lexicon();
        let merged = merge_pattern_tokens(&sample(), &lex).sentence;
        let vectors = WordVectors::new(
            vec!["patients_with".into(), "patients".into(), "with".into()],
            4,
            (0..12).map(|k| k as f64).collect(),
        )
        .unwrap();
        let model = NeuralModel::build(
            tiny_config(Strategy::Embedding),
            Category::P,
            &[merged],
            Some(&vectors),
            Some(lex),
        )
        .unwrap();
        let row = model.words.get("patients_with");
        assert_ne!(row, 0);
        assert_eq!(model.params.word_emb.row(row), &[0.0, 1.0, 2.0, 3.0]);
        assert_ne!(row, model.words.get("patients"));
        let rep = model.token_representation(&sample(), 0);
        assert_eq!(&rep[..4], &[0.0, 1.0, 2.0, 3.0]);

        let prep = model.prepare(&sample());
        assert_eq!(prep.len(), 2);
        assert_eq!(
            project(&[1, 0], &prep.alignment),
            vec![Tag::In, Tag::In, Tag::Out]
        );
        assert_eq!(model.decode(&sample()).unwrap().len(), 3);
    }

    #[test]
    fn lstm_states_stay_finite_on_long_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = Lstm::new(6, 8, &mut rng);
        let xs: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let cache = lstm_forward(&lstm, xs);
        assert!(cache
            .hs
            .iter()
            .chain(&cache.cs)
            .flatten()
            .all(|x| x.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let lex = lexicon();
        let model = NeuralModel::build(
            tiny_config(Strategy::BeforeLstm),
            Category::P,
            &[sample()],
            None,
            Some(lex),
        )
        .unwrap();
        let mut manifest = Vec::new();
        let mut blob = Vec::new();
        model.save(&mut manifest, &mut blob, None).unwrap();
        let back = NeuralModel::load(manifest.as_slice(), blob.as_slice()).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.words, model.words);
        assert_eq!(back.config, model.config);
        assert_eq!(
            back.decode(&sample()).unwrap(),
            model.decode(&sample()).unwrap()
        );
        assert!(NeuralModel::load(manifest.as_slice(), &blob[..blob.len() - 8]).is_err());
    }

    fn fd_check(strategy: Strategy, seed: u64) -> f64 {
        let lex = lexicon();
        let sent = Sentence::from_pairs(
            &["patients", "with", "asthma", "got", "x"],
            &["NNS", "IN", "NN", "VBD", "NN"],
        )
        .with_labels(
            Category::P,
            vec![Tag::In, Tag::Out, Tag::In, Tag::Out, Tag::In],
        );
        let train = if strategy == Strategy::Embedding {
            let mut m = merge_pattern_tokens(&sent, &lex).sentence;
            m.set_labels(Category::P, vec![Tag::In, Tag::In, Tag::Out, Tag::In]);
            vec![m]
        } else {
            vec![sent.clone()]
        };
        let mut model =
            NeuralModel::build(tiny_config(strategy), Category::P, &train, None, Some(lex))
                .unwrap();
        model.params.transition.data = vec![0.3, -0.2, 0.1, 0.4];
        model.params.out_b.data = vec![0.05, -0.1];
        let prep = model.prepare(&sent);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, grad) = model.loss_and_gradient(&prep, false, &mut rng).unwrap();
        let used_words: Vec<usize> = prep.words.clone();
        let used_chars: Vec<usize> = prep.chars.iter().flatten().copied().collect();

        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..30 {
            let t = pick.gen_range(0..13);
            let n = grad.named()[t].1.data.len();
            let k = match t {
                0 => {
                    used_words[pick.gen_range(0..used_words.len())] * model.config.word_dim
                        + pick.gen_range(0..model.config.word_dim)
                }
                1 => {
                    used_chars[pick.gen_range(0..used_chars.len())] * model.config.char_emb_dim
                        + pick.gen_range(0..model.config.char_emb_dim)
                }
                _ => pick.gen_range(0..n),
            };
            let analytic = grad.named()[t].1.data[k];
            let h = 1e-3;
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params.tensors_mut()[t].data[k] += delta;
                let mut r = ChaCha8Rng::seed_from_u64(0);
                m.forward(&prep, false, &mut r).unwrap().loss.unwrap()
            };
            let numeric =
                (8.0 * (eval(h) - eval(-h)) - (eval(2.0 * h) - eval(-2.0 * h))) / (12.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences_for_every_strategy() {
        for strategy in Strategy::ALL {
            let worst = fd_check(strategy, 11);
            assert!(worst < 1e-5, "{strategy}: {worst}");
        }
    }

    #[test]
    fn zero_indicators_leave_loss_unchanged() {
        let plain = NeuralModel::build(
            tiny_config(Strategy::None),
            Category::P,
            &[sample()],
            None,
            None,
        )
        .unwrap();
        let prep = plain.prepare(&sample());
        let base = plain
            .forward(&prep, true, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap()
            .loss
            .unwrap();
        for strategy in [Strategy::BeforeCrf, Strategy::BeforeLstm] {
            let mut cfg = tiny_config(strategy);
            cfg.dropout = 0.3;
            let mut plain = plain.clone();
            plain.config.dropout = 0.3;
            let base = plain
                .forward(&prep, true, &mut ChaCha8Rng::seed_from_u64(5))
                .unwrap()
                .loss
                .unwrap();
            let mut m = NeuralModel::build(
                cfg,
                Category::P,
                &[sample()],
                None,
                Some(PatternLexicon::default()),
            )
            .unwrap();
            // copy the shared weights; indicator columns stay as initialized
            m.params.word_emb = plain.params.word_emb.clone();
            m.params.char_emb = plain.params.char_emb.clone();
            m.params.char_fw = plain.params.char_fw.clone();
            m.params.char_bw = plain.params.char_bw.clone();
            m.params.out_b = plain.params.out_b.clone();
            m.params.transition = plain.params.transition.clone();
            let base_in = plain.config.input_dim();
            for (dst, src) in [
                (&mut m.params.word_fw, &plain.params.word_fw),
                (&mut m.params.word_bw, &plain.params.word_bw),
            ] {
                let extra = dst.input() - src.input();
                dst.b = src.b.clone();
                for r in 0..src.w.rows {
                    let s = src.w.row(r);
                    let d = dst.w.row_mut(r);
                    d[..base_in].copy_from_slice(&s[..base_in]);
                    d[base_in + extra..].copy_from_slice(&s[base_in..]);
                }
            }
            for y in 0..NUM_LABELS {
                let h2 = 2 * plain.config.hidden;
                m.params.out_w.row_mut(y)[..h2].copy_from_slice(&plain.params.out_w.row(y)[..h2]);
            }
            let prep_m = m.prepare(&sample());
            assert!(prep_m.indicators.iter().flatten().all(|&x| x == 0.0));
            let loss = m
                .forward(&prep_m, true, &mut ChaCha8Rng::seed_from_u64(5))
                .unwrap()
                .loss
                .unwrap();
            assert!((loss - base).abs() < 1e-12, "{strategy}: {loss} vs {base}");
        }
        assert!(base.is_finite());
    }
}
