//! Browser bindings. Each exported function has a plain Rust twin that the
//! native tests exercise; the wasm wrappers only convert errors.
//!
//! Text formats: one segment or sentence per line, tokens written `word/TAG`.

use picopat::embeddings::{kmeans_cluster, pca_project, read_word2vec};
use picopat::patterns::{mine_patterns, pattern_indicators, MiningConfig};
use picopat::{Category, PatternLexicon, SegmentCorpus, Sentence};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub fn parse_tagged_line(line: &str) -> Result<Sentence, String> {
    let mut words = Vec::new();
    let mut tags = Vec::new();
    for item in line.split_whitespace() {
        let (w, t) = item
            .rsplit_once('/')
            .ok_or_else(|| format!("`{item}` is not word/TAG"))?;
        if w.is_empty() || t.is_empty() {
            return Err(format!("`{item}` is not word/TAG"));
        }
        words.push(w);
        tags.push(t);
    }
    Ok(Sentence::from_pairs(&words, &tags))
}

fn parse_pool(text: &str, category: Category) -> Result<SegmentCorpus, String> {
    let mut pool = SegmentCorpus::default();
    for (k, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let s = parse_tagged_line(line).map_err(|e| format!("line {}: {e}", k + 1))?;
        pool.segments.push((category, s));
    }
    Ok(pool)
}

/// Mines patterns and returns them as a lexicon TSV.
pub fn mine_text(
    relevant: &str,
    irrelevant: &str,
    category: &str,
    min_freq: u64,
    min_prob: f64,
) -> Result<String, String> {
    let category: Category = category.parse()?;
    if !(0.0..=1.0).contains(&min_prob) {
        return Err(format!("min_prob {min_prob} is outside [0, 1]"));
    }
    let rel = parse_pool(relevant, category)?;
    let irrel = parse_pool(irrelevant, category)?;
    let lexicon = mine_patterns(&rel, &irrel, category, &MiningConfig { min_freq, min_prob });
    let mut out = Vec::new();
    lexicon.write_tsv(&mut out).map_err(|e| e.to_string())?;
    String::from_utf8(out).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TokenIndicators {
    pub token: String,
    pub bits: [u8; 9],
}

pub fn indicators_text(sentence: &str, lexicon_tsv: &str) -> Result<Vec<TokenIndicators>, String> {
    let s = parse_tagged_line(sentence)?;
    let lex = PatternLexicon::read_tsv(lexicon_tsv.as_bytes()).map_err(|e| e.to_string())?;
    Ok((0..s.tokens().len())
        .map(|i| TokenIndicators {
            token: s.tokens()[i].surface().to_string(),
            bits: pattern_indicators(&s, &lex, i).map(u8::from),
        })
        .collect())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Point {
    pub token: String,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
}

/// Projects every vector in a word2vec text file to 2-D and clusters the points.
pub fn scatter_text(vectors: &str, k: usize, seed: u64) -> Result<Vec<Point>, String> {
    let vectors = read_word2vec(vectors.as_bytes()).map_err(|e| e.to_string())?;
    let tokens = vectors.words().to_vec();
    let pca = pca_project(&vectors, &tokens, 2).map_err(|e| e.to_string())?;
    let km = kmeans_cluster(&pca.coords, k, seed).map_err(|e| e.to_string())?;
    Ok(tokens
        .into_iter()
        .zip(&pca.coords)
        .zip(km.assignments)
        .map(|((token, c), cluster)| Point {
            token,
            x: c[0],
            y: c.get(1).copied().unwrap_or(0.0),
            cluster,
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn mine(
    relevant: &str,
    irrelevant: &str,
    category: &str,
    min_freq: u32,
    min_prob: f64,
) -> Result<String, JsError> {
    mine_text(
        relevant,
        irrelevant,
        category,
        u64::from(min_freq),
        min_prob,
    )
    .map_err(|e| JsError::new(&e))
}

/// JSON array of `{token, bits}`.
#[wasm_bindgen]
pub fn indicators(sentence: &str, lexicon_tsv: &str) -> Result<String, JsError> {
    to_js(indicators_text(sentence, lexicon_tsv))
}

/// JSON array of `{token, x, y, cluster}`.
#[wasm_bindgen]
pub fn scatter(vectors: &str, k: u32, seed: u32) -> Result<String, JsError> {
    to_js(scatter_text(vectors, k as usize, u64::from(seed)))
}
