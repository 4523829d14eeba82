//! Skip-gram with negative sampling, word2phrase-style collocations, and
//! analysis of the resulting space: cosine neighborhoods, the
//! pattern/constituent overlap statistic, PCA and k-means.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no token reaches min_count {0}")]
    EmptyVocab(u64),
    #[error("`{token}` is not in the vocabulary{}", hint(.suggestions))]
    OutOfVocabulary {
        token: String,
        suggestions: Vec<String>,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn hint(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!(" (did you mean: {}?)", suggestions.join(", "))
    }
}

/// A token-to-vector table; the unit read from and written to word2vec
/// text files.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    words: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f64>,
}

impl WordVectors {
    pub fn new(words: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self, EmbeddingError> {
        if data.len() != words.len() * dim {
            return Err(EmbeddingError::Format {
                line: 0,
                message: format!(
                    "{} values for {} words of dimension {dim}",
                    data.len(),
                    words.len()
                ),
            });
        }
        let mut index = HashMap::with_capacity(words.len());
        for (k, w) in words.iter().enumerate() {
            if index.insert(w.clone(), k).is_some() {
                return Err(EmbeddingError::Format {
                    line: k + 2,
                    message: format!("duplicate token `{w}`"),
                });
            }
        }
        Ok(WordVectors {
            words,
            index,
            dim,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or an out-of-vocabulary error with up to three
    /// close spellings.
    pub fn lookup(&self, token: &str) -> Result<usize, EmbeddingError> {
        self.get(token).ok_or_else(|| {
            let mut scored: Vec<(usize, usize)> = self
                .words
                .iter()
                .enumerate()
                .map(|(k, w)| (strsim::levenshtein(token, w), k))
                .collect();
            scored.sort();
            EmbeddingError::OutOfVocabulary {
                token: token.to_string(),
                suggestions: scored
                    .iter()
                    .take(3)
                    .map(|&(_, k)| self.words[k].clone())
                    .collect(),
            }
        })
    }

    /// Keeps the first `n` rows (word2vec files are frequency-sorted, so
    /// this acts as a frequency filter on neighbor candidates).
    pub fn truncate(&mut self, n: usize) {
        if n >= self.words.len() {
            return;
        }
        for w in self.words.drain(n..) {
            self.index.remove(&w);
        }
        self.data.truncate(n * self.dim);
    }

    /// Applies `f` to every vector in place.
    pub fn map_vectors(&mut self, mut f: impl FnMut(&mut [f64])) {
        for row in self.data.chunks_mut(self.dim.max(1)) {
            f(row);
        }
    }
}

/// Reads the word2vec text format: a `vocab_size dim` header, then one
/// `token v1 .. vd` line per word.
pub fn read_word2vec<R: BufRead>(reader: R) -> Result<WordVectors, EmbeddingError> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or(EmbeddingError::Format {
        line: 1,
        message: "missing header".into(),
    })??;
    let bad_header = || EmbeddingError::Format {
        line: 1,
        message: format!("header must be `vocab_size dim`, got `{header}`"),
    };
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(bad_header)?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(bad_header)?;
    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap();
        let before = data.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| EmbeddingError::Format {
                line: lineno,
                message: format!("bad number `{f}`"),
            })?;
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(EmbeddingError::Format {
                line: lineno,
                message: format!("expected {dim} values, got {}", data.len() - before),
            });
        }
        words.push(word.to_string());
    }
    if words.len() != count {
        return Err(EmbeddingError::Format {
            line: 1,
            message: format!("header announces {count} words, file has {}", words.len()),
        });
    }
    WordVectors::new(words, dim, data)
}

pub fn write_word2vec<W: Write>(mut w: W, vectors: &WordVectors) -> std::io::Result<()> {
    writeln!(w, "{} {}", vectors.len(), vectors.dim())?;
    for (k, word) in vectors.words().iter().enumerate() {
        write!(w, "{word}")?;
        for v in vectors.vector(k) {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub subsample: f64,
    pub epochs: usize,
    pub min_count: u64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            subsample: 1e-3,
            epochs: 5,
            min_count: 5,
            lr: 0.025,
            seed: 1,
        }
    }
}

/// Trained skip-gram model. `input` holds the word vectors used for
/// analysis; `output` the context vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub input: WordVectors,
    pub output: Vec<f64>,
    pub counts: Vec<u64>,
    /// Mean per-pair loss for each epoch.
    pub epoch_loss: Vec<f64>,
}

impl EmbeddingModel {
    pub fn vectors(&self) -> &WordVectors {
        &self.input
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

/// `-ln σ(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub struct PairGradient {
    pub loss: f64,
    pub d_center: Vec<f64>,
    pub d_context: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss `-ln σ(u·v) - Σ ln σ(-u'·v)` for one (center, context) pair and
/// its negatives, with gradients for every vector involved.
pub fn sgns_pair_gradient(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let s = dot(context, center);
    let mut loss = neg_log_sigmoid(s);
    let gpos = sigmoid(s) - 1.0;
    let mut d_center: Vec<f64> = context.iter().map(|u| gpos * u).collect();
    let d_context = center.iter().map(|v| gpos * v).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for u in negatives {
        let s = dot(u, center);
        loss += neg_log_sigmoid(-s);
        let g = sigmoid(s);
        for (d, x) in d_center.iter_mut().zip(*u) {
            *d += g * x;
        }
        d_negatives.push(center.iter().map(|v| g * v).collect());
    }
    PairGradient {
        loss,
        d_center,
        d_context,
        d_negatives,
    }
}

/// Vocabulary of tokens with `count >= min_count`, most frequent first,
/// ties in lexicographic order.
fn build_vocab(corpus: &[Vec<String>], min_count: u64) -> (Vec<String>, Vec<u64>) {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in corpus {
        for t in s {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    (
        kept.iter().map(|(w, _)| w.to_string()).collect(),
        kept.iter().map(|&(_, c)| c).collect(),
    )
}

/// Sequential SGNS training; identical inputs and seed give identical
/// vectors.
pub fn train_skipgram(
    corpus: &[Vec<String>],
    config: &SkipGramConfig,
) -> Result<EmbeddingModel, EmbeddingError> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let (words, counts) = build_vocab(corpus, config.min_count);
    if words.is_empty() {
        return Err(EmbeddingError::EmptyVocab(config.min_count));
    }
    let d = config.dim;
    let v = words.len();
    let index: HashMap<&str, usize> = words
        .iter()
        .enumerate()
        .map(|(k, w)| (w.as_str(), k))
        .collect();
    let ids: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect()
        })
        .collect();
    let total: u64 = counts.iter().sum();
    let keep_prob: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if config.subsample <= 0.0 {
                1.0
            } else {
                let t = config.subsample * total as f64;
                ((c as f64 / t).sqrt() + 1.0) * t / c as f64
            }
        })
        .collect();
    let noise =
        WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75))).expect("positive counts");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..v * d)
        .map(|_| (rng.gen::<f64>() - 0.5) / d as f64)
        .collect();
    let mut output = vec![0.0; v * d];
    let planned = (config.epochs as u64 * total) as f64 + 1.0;
    let mut processed = 0u64;
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut d_center = vec![0.0; d];

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0u64;
        for sent in &ids {
            processed += sent.len() as u64;
            let kept: Vec<usize> = sent
                .iter()
                .copied()
                .filter(|&w| rng.gen::<f64>() < keep_prob[w])
                .collect();
            let lr = config.lr * (1.0 - processed as f64 / planned).max(1e-4);
            for (pos, &center) in kept.iter().enumerate() {
                let shrink = rng.gen_range(0..config.window.max(1));
                let reach = config.window - shrink;
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(kept.len() - 1);
                for cpos in lo..=hi {
                    if cpos == pos {
                        continue;
                    }
                    let context = kept[cpos];
                    d_center.iter_mut().for_each(|x| *x = 0.0);
                    let cv = center * d..(center + 1) * d;
                    let mut targets = vec![(context, 1.0)];
                    for _ in 0..config.negatives {
                        let n = noise.sample(&mut rng);
                        if n != context {
                            targets.push((n, 0.0));
                        }
                    }
                    for (target, label) in targets {
                        let tv = target * d..(target + 1) * d;
                        let s = dot(&input[cv.clone()], &output[tv.clone()]);
                        loss_sum += if label == 1.0 {
                            neg_log_sigmoid(s)
                        } else {
                            neg_log_sigmoid(-s)
                        };
                        let g = sigmoid(s) - label;
                        for k in 0..d {
                            d_center[k] += g * output[tv.start + k];
                            output[tv.start + k] -= lr * g * input[cv.start + k];
                        }
                    }
                    for k in 0..d {
                        input[cv.start + k] -= lr * d_center[k];
                    }
                    pairs += 1;
                }
            }
        }
        epoch_loss.push(if pairs == 0 {
            0.0
        } else {
            loss_sum / pairs as f64
        });
    }
    Ok(EmbeddingModel {
        input: WordVectors::new(words, d, input)?,
        output,
        counts,
        epoch_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationConfig {
    pub delta: f64,
    pub threshold: f64,
    pub passes: usize,
}

impl Default for CollocationConfig {
    fn default() -> Self {
        CollocationConfig {
            delta: 5.0,
            threshold: 10.0,
            passes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    pub first: String,
    pub second: String,
    pub score: f64,
}

impl Collocation {
    pub fn token(&self) -> String {
        format!("{}_{}", self.first, self.second)
    }
}

/// Phrase score `(count(ab) - delta) / (count(a) count(b)) * N`.
pub fn collocation_score(
    count_ab: u64,
    count_a: u64,
    count_b: u64,
    corpus_size: u64,
    delta: f64,
) -> f64 {
    (count_ab as f64 - delta) / (count_a as f64 * count_b as f64) * corpus_size as f64
}

fn score_bigrams(corpus: &[Vec<String>], config: &CollocationConfig) -> Vec<Collocation> {
    let mut uni: HashMap<&str, u64> = HashMap::new();
    let mut bi: HashMap<(&str, &str), u64> = HashMap::new();
    let mut n = 0u64;
    for s in corpus {
        for (k, t) in s.iter().enumerate() {
            *uni.entry(t).or_default() += 1;
            n += 1;
            if k + 1 < s.len() {
                *bi.entry((t, &s[k + 1])).or_default() += 1;
            }
        }
    }
    let mut out: Vec<Collocation> = bi
        .into_iter()
        .filter_map(|((a, b), c)| {
            let score = collocation_score(c, uni[a], uni[b], n, config.delta);
            (score > config.threshold).then(|| Collocation {
                first: a.to_string(),
                second: b.to_string(),
                score,
            })
        })
        .collect();
    out.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| (&x.first, &x.second).cmp(&(&y.first, &y.second)))
    });
    out
}

/// Greedy left-to-right merge of adjacent pairs listed in `pairs`.
pub fn apply_collocations(
    corpus: &[Vec<String>],
    pairs: &HashSet<(String, String)>,
) -> Vec<Vec<String>> {
    corpus
        .iter()
        .map(|s| {
            let mut out = Vec::with_capacity(s.len());
            let mut k = 0;
            while k < s.len() {
                if k + 1 < s.len() && pairs.contains(&(s[k].clone(), s[k + 1].clone())) {
                    out.push(format!("{}_{}", s[k], s[k + 1]));
                    k += 2;
                } else {
                    out.push(s[k].clone());
                    k += 1;
                }
            }
            out
        })
        .collect()
}

/// Collocations found over `passes` rounds of scoring and merging, plus
/// the merged corpus.
pub fn discover_collocations(
    corpus: &[Vec<String>],
    config: &CollocationConfig,
) -> (Vec<Collocation>, Vec<Vec<String>>) {
    let mut current = corpus.to_vec();
    let mut found = Vec::new();
    for _ in 0..config.passes {
        let round = score_bigrams(&current, config);
        if round.is_empty() {
            break;
        }
        let pairs: HashSet<(String, String)> = round
            .iter()
            .map(|c| (c.first.clone(), c.second.clone()))
            .collect();
        current = apply_collocations(&current, &pairs);
        found.extend(round);
    }
    (found, current)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Top-`k` rows by cosine to row `query`, skipping the rows in `exclude`
/// (the query itself is always skipped). Ties go to the lower index.
pub fn neighbors_of(
    vectors: &WordVectors,
    query: usize,
    k: usize,
    exclude: &[usize],
) -> Vec<(usize, f64)> {
    let q = vectors.vector(query);
    let mut scored: Vec<(usize, f64)> = (0..vectors.len())
        .filter(|&j| j != query && !exclude.contains(&j))
        .map(|j| (j, cosine(q, vectors.vector(j))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn cosine_neighbors(
    vectors: &WordVectors,
    token: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, EmbeddingError> {
    let q = vectors.lookup(token)?;
    Ok(neighbors_of(vectors, q, k, &[])
        .into_iter()
        .map(|(j, c)| (vectors.words()[j].clone(), c))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapEntry {
    pub pattern: String,
    /// `None` when neither the pattern nor any constituent is in the
    /// vocabulary.
    pub best_constituent: Option<String>,
    pub overlap: usize,
    /// Constituents (or the pattern itself) missing from the vocabulary.
    pub missing: Vec<String>,
    pub top_pattern: Vec<String>,
    pub top_constituent: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OverlapReport {
    pub entries: Vec<OverlapEntry>,
    pub mean_overlap: f64,
    pub zero_fraction: f64,
}

pub const OVERLAP_K: usize = 10;
pub const OVERLAP_HEADER: &str =
    "#pattern\tbest_constituent\toverlap\ttop10_pattern\ttop10_constituent";

/// For each merged pattern token, the largest intersection between its
/// top-10 neighbors and those of one of its constituents. Both lists leave
/// out the pattern and the constituent being compared.
pub fn overlap_statistic(vectors: &WordVectors, patterns: &[String]) -> OverlapReport {
    let names = |list: &[(usize, f64)]| {
        list.iter()
            .map(|&(j, _)| vectors.words()[j].clone())
            .collect::<Vec<_>>()
    };
    let mut entries = Vec::with_capacity(patterns.len());
    for pattern in patterns {
        let mut entry = OverlapEntry {
            pattern: pattern.clone(),
            best_constituent: None,
            overlap: 0,
            missing: Vec::new(),
            top_pattern: Vec::new(),
            top_constituent: Vec::new(),
        };
        let Some(p) = vectors.get(pattern) else {
            entry.missing.push(pattern.clone());
            entries.push(entry);
            continue;
        };
        let mut seen = HashSet::new();
        for part in pattern.split('_').filter(|s| !s.is_empty()) {
            if !seen.insert(part) {
                continue;
            }
            let Some(c) = vectors.get(part) else {
                entry.missing.push(part.to_string());
                continue;
            };
            let tp = neighbors_of(vectors, p, OVERLAP_K, &[c]);
            let tc = neighbors_of(vectors, c, OVERLAP_K, &[p]);
            let set: HashSet<usize> = tp.iter().map(|x| x.0).collect();
            let overlap = tc.iter().filter(|x| set.contains(&x.0)).count();
            if entry.best_constituent.is_none() || overlap > entry.overlap {
                entry.best_constituent = Some(part.to_string());
                entry.overlap = overlap;
                entry.top_pattern = names(&tp);
                entry.top_constituent = names(&tc);
            }
        }
        entries.push(entry);
    }
    let n = entries.len();
    let (mean_overlap, zero_fraction) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            entries.iter().map(|e| e.overlap as f64).sum::<f64>() / n as f64,
            entries.iter().filter(|e| e.overlap == 0).count() as f64 / n as f64,
        )
    };
    OverlapReport {
        entries,
        mean_overlap,
        zero_fraction,
    }
}

pub fn write_overlap_tsv<W: Write>(mut w: W, report: &OverlapReport) -> std::io::Result<()> {
    writeln!(w, "{OVERLAP_HEADER}")?;
    for e in &report.entries {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            e.pattern,
            e.best_constituent.as_deref().unwrap_or("-"),
            e.overlap,
            e.top_pattern.join("|"),
            e.top_constituent.join("|")
        )?;
    }
    writeln!(w, "#mean_overlap\t{:.4}", report.mean_overlap)?;
    writeln!(w, "#zero_overlap_fraction\t{:.4}", report.zero_fraction)
}

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Principal axes as rows, highest variance first.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub coords: Vec<Vec<f64>>,
}

/// Exact PCA of the rows of `data` (sample covariance, `n - 1`
/// denominator). Each axis is signed so its largest-magnitude loading is
/// positive.
pub fn pca(data: &[Vec<f64>], dims: usize) -> Result<Pca, EmbeddingError> {
    let n = data.len();
    if n < dims + 1 || n < 2 {
        return Err(EmbeddingError::TooFewPoints {
            needed: (dims + 1).max(2),
            got: n,
        });
    }
    let d = data[0].len();
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let components: Vec<Vec<f64>> = order
        .iter()
        .take(dims)
        .map(|&k| {
            let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead =
                axis.iter().copied().fold(
                    0.0f64,
                    |best, x| if x.abs() > best.abs() { x } else { best },
                );
            if lead < 0.0 {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
            axis
        })
        .collect();
    let coords = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|axis| (0..d).map(|j| centered[(i, j)] * axis[j]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        coords,
    })
}

/// PCA coordinates for the given tokens.
pub fn pca_project(
    vectors: &WordVectors,
    tokens: &[String],
    dims: usize,
) -> Result<Pca, EmbeddingError> {
    let rows = tokens
        .iter()
        .map(|t| vectors.lookup(t).map(|k| vectors.vector(k).to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    pca(&rows, dims)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each Lloyd iteration.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub const KMEANS_MAX_ITER: usize = 300;

/// k-means++ seeding followed by Lloyd iterations until the assignment no
/// longer changes (or the iteration cap).
pub fn kmeans_cluster(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans, EmbeddingError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(EmbeddingError::TooFewPoints {
            needed: k.max(1),
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut centroids = vec![points[chosen[0]].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(&mut rng),
            // every point already coincides with a centroid
            Err(_) => (0..n).find(|i| !chosen.contains(i)).unwrap(),
        };
        chosen.push(next);
        centroids.push(points[next].clone());
    }

    let mut assignments = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            total += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            sizes[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        let after: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum();
        inertia.push(after.min(total));
    }
    Ok(KMeans {
        assignments,
        centroids,
        inertia,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `token,x,y,cluster` rows.
pub fn write_projection_csv<W: Write>(
    mut w: W,
    tokens: &[String],
    coords: &[Vec<f64>],
    clusters: &[usize],
) -> std::io::Result<()> {
    writeln!(w, "token,x,y,cluster")?;
    for ((t, c), k) in tokens.iter().zip(coords).zip(clusters) {
        let x = c.first().copied().unwrap_or(0.0);
        let y = c.get(1).copied().unwrap_or(0.0);
        writeln!(w, "{},{:.6},{:.6},{}", csv_field(t), x, y, k)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(words: &[&str], rows: &[&[f64]]) -> WordVectors {
        let dim = rows[0].len();
        WordVectors::new(
            words.iter().map(|s| s.to_string()).collect(),
            dim,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    fn alternating(n: usize) -> Vec<Vec<String>> {
        vec![(0..n)
            .map(|k| if k % 2 == 0 { "a" } else { "b" }.to_string())
            .collect()]
    }

    #[test]
    fn pair_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vecs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let loss = |v: &Vec<Vec<f64>>| {
            let negs: Vec<&[f64]> = v[2..].iter().map(|x| x.as_slice()).collect();
            sgns_pair_gradient(&v[0], &v[1], &negs).loss
        };
        let negs: Vec<&[f64]> = vecs[2..].iter().map(|x| x.as_slice()).collect();
        let g = sgns_pair_gradient(&vecs[0], &vecs[1], &negs);
        let mut analytic = vec![g.d_center, g.d_context];
        analytic.extend(g.d_negatives);
        let h = 1e-5;
        for r in 0..5 {
            for c in 0..6 {
                let orig = vecs[r][c];
                vecs[r][c] = orig + h;
                let up = loss(&vecs);
                vecs[r][c] = orig - h;
                let down = loss(&vecs);
                vecs[r][c] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[r][c];
                assert!(
                    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-6,
                    "{a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn alternating_tokens_are_each_others_neighbors() {
        // a window of one keeps same-token positions out of the context
        let cfg = SkipGramConfig {
            dim: 20,
            window: 1,
            ..SkipGramConfig::default()
        };
        let model = train_skipgram(&alternating(10_000), &cfg).unwrap();
        assert_eq!(cosine_neighbors(model.vectors(), "a", 1).unwrap()[0].0, "b");
        assert_eq!(cosine_neighbors(model.vectors(), "b", 1).unwrap()[0].0, "a");
        let l = &model.epoch_loss;
        assert!(l[0] > l[1] && l[1] > l[2], "{l:?}");
    }

    #[test]
    fn skipgram_is_deterministic_and_rejects_empty_input() {
        let corpus: Vec<Vec<String>> = (0..50)
            .map(|k| {
                ["x", "y", "z", "w"]
                    .iter()
                    .cycle()
                    .skip(k % 4)
                    .take(6)
                    .map(|s| s.to_string())
                    .collect()
            })
            .collect();
        let cfg = SkipGramConfig {
            dim: 8,
            ..SkipGramConfig::default()
        };
        let a = train_skipgram(&corpus, &cfg).unwrap();
        let b = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(a.input, b.input);
        assert!(matches!(
            train_skipgram(&[vec![]], &cfg),
            Err(EmbeddingError::EmptyCorpus)
        ));
        let high = SkipGramConfig {
            min_count: 1000,
            ..cfg
        };
        assert!(matches!(
            train_skipgram(&corpus, &high),
            Err(EmbeddingError::EmptyVocab(1000))
        ));
    }

    #[test]
    fn collocation_scores() {
        assert_eq!(collocation_score(5, 10, 10, 1000, 5.0), 0.0);
        assert_relative_eq!(
            collocation_score(100, 120, 110, 100_000, 5.0),
            95.0 * 1e5 / 13_200.0
        );
        assert!(collocation_score(100, 120, 110, 100_000, 5.0) > 719.0);
    }

    #[test]
    fn collocations_merge_frequent_pairs_only() {
        // new: 120, york: 110, adjacent 100 times, 100k tokens in all
        let mut corpus: Vec<Vec<String>> = Vec::new();
        corpus.extend((0..100).map(|_| vec!["new".to_string(), "york".into()]));
        corpus.extend((0..20).map(|_| vec!["new".to_string()]));
        corpus.extend((0..10).map(|_| vec!["york".to_string()]));
        corpus.push((0..100_000 - 230).map(|k| format!("f{k}")).collect());
        let (found, merged) = discover_collocations(&corpus, &CollocationConfig::default());
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].token(), "new_york");
        assert_relative_eq!(found[0].score, 95.0 * 1e5 / 13_200.0, epsilon = 1e-9);
        assert_eq!(merged[0], vec!["new_york".to_string()]);
        assert_eq!(merged[100], vec!["new".to_string()]);
    }

    #[test]
    fn hand_ranked_neighbors() {
        let v = toy(
            &["q", "near", "mid", "far"],
            &[&[1.0, 0.0], &[0.9, 0.1], &[0.5, 0.5], &[-1.0, 0.2]],
        );
        let n = cosine_neighbors(&v, "q", 3).unwrap();
        let names: Vec<&str> = n.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(names, ["near", "mid", "far"]);
        assert_relative_eq!(n[1].1, 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn oov_lists_spelling_hints() {
        let v = toy(&["asthma", "aspirin", "zebra"], &[&[1.0], &[2.0], &[3.0]]);
        match cosine_neighbors(&v, "asthmaa", 2) {
            Err(EmbeddingError::OutOfVocabulary { suggestions, .. }) => {
                assert_eq!(suggestions[0], "asthma")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_vectors_overlap_fully() {
        let mut words = vec!["p_q".to_string(), "p".into()];
        let mut data = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        for k in 0..15 {
            words.push(format!("w{k}"));
            let a = k as f64 * 0.2;
            data.extend([a.cos(), a.sin(), 0.1 * k as f64]);
        }
        let v = WordVectors::new(words, 3, data).unwrap();
        let r = overlap_statistic(&v, &["p_q".to_string()]);
        let e = &r.entries[0];
        assert_eq!(e.overlap, 10);
        assert_eq!(e.best_constituent.as_deref(), Some("p"));
        assert_eq!(e.missing, vec!["q".to_string()]);
    }

    #[test]
    fn disjoint_neighborhoods_overlap_zero() {
        let mut words = vec!["a_b".to_string(), "a".into()];
        let mut data = vec![1.0, 0.0, -1.0, 0.0];
        for k in 0..10 {
            words.push(format!("r{k}"));
            data.extend([1.0, 0.01 * (k + 1) as f64]);
            words.push(format!("l{k}"));
            data.extend([-1.0, 0.01 * (k + 1) as f64]);
        }
        let v = WordVectors::new(words, 2, data).unwrap();
        let r = overlap_statistic(&v, &["a_b".to_string(), "zz_yy".to_string()]);
        assert_eq!(r.entries[0].overlap, 0);
        assert_eq!(r.entries[1].best_constituent, None);
        assert_eq!(r.zero_fraction, 1.0);
        let mut buf = Vec::new();
        write_overlap_tsv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(OVERLAP_HEADER));
        assert!(text.contains("zz_yy\t-\t0\t\t\n"));
    }

    #[test]
    fn collinear_points_have_flat_second_component() {
        let data: Vec<Vec<f64>> = (0..6)
            .map(|k| vec![k as f64, 2.0 * k as f64, -(k as f64)])
            .collect();
        let p = pca(&data, 2).unwrap();
        for c in &p.coords {
            assert!(c[1].abs() < 1e-10);
        }
        assert!(p.components[0].iter().copied().fold(f64::MIN, f64::max) > 0.0);
        assert!(matches!(
            pca(&data[..2], 2),
            Err(EmbeddingError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn planar_data_keeps_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e1 = [0.6, 0.8, 0.0, 0.0];
        let e2 = [0.0, 0.0, 0.6, -0.8];
        let data: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0));
                (0..4).map(|j| 1.0 + a * e1[j] + b * e2[j]).collect()
            })
            .collect();
        let p = pca(&data, 2).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let orig = sq_dist(&data[i], &data[j]).sqrt();
                let proj = sq_dist(&p.coords[i], &p.coords[j]).sqrt();
                assert!((orig - proj).abs() < 1e-8);
            }
        }
        let var = |c: usize| p.coords.iter().map(|x| x[c] * x[c]).sum::<f64>();
        assert!(var(0) >= var(1));
    }

    #[test]
    fn kmeans_basics() {
        let pts: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![5.0, 5.0],
            vec![5.0, 6.0],
        ];
        let r = kmeans_cluster(&pts, 4, 1).unwrap();
        let mut ids = r.assignments.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 4);
        assert_eq!(*r.inertia.last().unwrap(), 0.0);
        let r = kmeans_cluster(&pts, 2, 1).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        assert!(kmeans_cluster(&pts, 5, 1).is_err());
        assert_eq!(
            kmeans_cluster(&pts, 2, 7).unwrap(),
            kmeans_cluster(&pts, 2, 7).unwrap()
        );
    }

    #[test]
    fn word2vec_round_trip_and_errors() {
        let v = toy(&["a", "b_c"], &[&[0.1, -2.5], &[1e-17, 3.0]]);
        let mut buf = Vec::new();
        write_word2vec(&mut buf, &v).unwrap();
        assert_eq!(read_word2vec(buf.as_slice()).unwrap(), v);
        let bad = "2 2\na 1 2\nb 1\n";
        assert!(matches!(
            read_word2vec(bad.as_bytes()),
            Err(EmbeddingError::Format { line: 3, .. })
        ));
        assert!(read_word2vec("x\n".as_bytes()).is_err());
        assert!(read_word2vec("2 1\na 1\na 2\n".as_bytes()).is_err());
    }

    #[test]
    fn projection_csv_format() {
        let mut buf = Vec::new();
        write_projection_csv(&mut buf, &["a,b".to_string()], &[vec![1.0, -0.5]], &[3]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "token,x,y,cluster\n\"a,b\",1.000000,-0.500000,3\n"
        );
    }

    fn random_points(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cosine_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4)) {
            prop_assert_eq!(cosine(&a, &b), cosine(&b, &a));
        }

        #[test]
        fn reconstruction_error_is_discarded_variance(seed in 0u64..1000, dims in 1usize..4) {
            let data = random_points(seed, 12, 5);
            let p = pca(&data, dims).unwrap();
            let mut err = 0.0;
            for (row, c) in data.iter().zip(&p.coords) {
                for j in 0..5 {
                    let recon = p.mean[j] + (0..dims).map(|k| c[k] * p.components[k][j]).sum::<f64>();
                    err += (row[j] - recon).powi(2);
                }
            }
            err /= 11.0;
            let discarded: f64 = p.eigenvalues[dims..].iter().sum();
            prop_assert!((err - discarded).abs() < 1e-8);
        }

        #[test]
        fn overlap_invariant_under_rotation(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU) {
            let data = random_points(seed, 30, 3);
            let mut words: Vec<String> = (0..28).map(|k| format!("t{k}")).collect();
            words.push("t0_t1".into());
            words.push("t2_t3_t4".into());
            let v = WordVectors::new(words, 3, data.iter().flatten().copied().collect()).unwrap();
            let (c, s) = (angle.cos(), angle.sin());
            let mut rotated = v.clone();
            rotated.map_vectors(|x| {
                let (a, b) = (x[0], x[1]);
                x[0] = c * a - s * b;
                x[1] = s * a + c * b;
                x[2] = -x[2];
            });
            let pats = vec!["t0_t1".to_string(), "t2_t3_t4".to_string()];
            let a = overlap_statistic(&v, &pats);
            let b = overlap_statistic(&rotated, &pats);
            for (x, y) in a.entries.iter().zip(&b.entries) {
                prop_assert_eq!(x.overlap, y.overlap);
            }
        }

        #[test]
        fn lloyd_inertia_never_increases(seed in 0u64..1000) {
            let pts = random_points(seed, 40, 2);
            let r = kmeans_cluster(&pts, 5, seed).unwrap();
            for w in r.inertia.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
