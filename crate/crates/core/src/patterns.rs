//! Pattern generation around noun phrases, relevance scoring and filtering,
//! lexicon storage and lookup, plus the plain adjacent-bigram baseline.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::chunker::{is_noun, is_preposition, is_verb, parse_nps, NpSpan, Role};
use crate::corpus::{Category, SegmentCorpus, Sentence};
use crate::stopwords::is_stopword;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("pattern has no occurrences in either pool")]
    NoOccurrences,
    #[error("lexicon line {line}: {message}")]
    Tsv { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub const TSV_HEADER: &str = "#category\tpattern\tfreq_rel\tfreq_total\tprob\tscore";

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub grams: Vec<String>,
    pub category: Category,
    pub freq_rel: u64,
    pub freq_total: u64,
    pub prob: f64,
    pub score: f64,
}

impl Pattern {
    pub fn new(grams: Vec<String>, category: Category, freq_rel: u64, freq_total: u64) -> Self {
        assert!(freq_rel <= freq_total && freq_total > 0);
        let (prob, score) = score_pattern(freq_rel, freq_total - freq_rel).expect("freq_total > 0");
        Pattern {
            grams,
            category,
            freq_rel,
            freq_total,
            prob,
            score,
        }
    }

    pub fn arity(&self) -> usize {
        self.grams.len()
    }

    pub fn joined(&self) -> String {
        self.grams.join("_")
    }
}

/// Relevance probability and RlogF score. The score is `-inf` when the
/// pattern never occurs in the relevant pool.
pub fn score_pattern(freq_rel: u64, freq_irrel: u64) -> Result<(f64, f64), PatternError> {
    let total = freq_rel + freq_irrel;
    if total == 0 {
        return Err(PatternError::NoOccurrences);
    }
    let prob = freq_rel as f64 / total as f64;
    let score = if freq_rel == 0 {
        f64::NEG_INFINITY
    } else {
        prob * (freq_rel as f64).log2()
    };
    Ok((prob, score))
}

fn has_digit(s: &str) -> bool {
    s.chars().any(|c| c.is_ascii_digit())
}

/// Candidate patterns around the NPs of a role-annotated sentence.
pub fn generate_candidates_with(sentence: &Sentence, spans: &[NpSpan]) -> Vec<Vec<String>> {
    let n = sentence.len();
    let lower = |i: usize| sentence.lower(i).to_string();
    let mut out: Vec<Vec<String>> = Vec::new();
    for span in spans {
        // Bare-number heads never anchor a pattern.
        let head_usable = sentence.pos(span.head) != "CD";
        match (span.role, span.governor) {
            (Role::PrepObject, Some(p)) if p >= 1 => {
                let before = sentence.pos(p - 1);
                if is_noun(before) || is_verb(before) {
                    out.push(vec![lower(p - 1), lower(p)]);
                } else if is_preposition(before) || before == "RP" {
                    // verb + two-word preposition chain, e.g. "carried out in"
                    if p >= 2 && is_verb(sentence.pos(p - 2)) {
                        out.push(vec![lower(p - 2), lower(p - 1), lower(p)]);
                    }
                }
            }
            (Role::Subject, Some(v)) if head_usable => out.push(vec![lower(span.head), lower(v)]),
            (Role::DirectObject | Role::IndirectObject, Some(v)) if head_usable => {
                out.push(vec![lower(v), lower(span.head)])
            }
            _ => {}
        }
        if head_usable {
            if span.head + 1 < n && matches!(sentence.pos(span.head + 1), "WDT" | "WP") {
                out.push(vec![lower(span.head), lower(span.head + 1)]);
            }
            let head = sentence.lower(span.head);
            if !is_stopword(head) {
                out.push(vec![head.to_string()]);
            }
        }
    }
    out.retain(|grams| !grams.iter().any(|g| has_digit(g)));
    out
}

pub fn generate_candidates(sentence: &Sentence) -> Vec<Vec<String>> {
    generate_candidates_with(sentence, &parse_nps(sentence))
}

/// Occurrence counts per gram sequence in the relevant and irrelevant
/// pools. Counts from disjoint shards combine by pointwise addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternCounts {
    counts: HashMap<Vec<String>, (u64, u64)>,
}

impl PatternCounts {
    pub fn get(&self, grams: &[String]) -> Option<(u64, u64)> {
        self.counts.get(grams).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn add(&mut self, grams: Vec<String>, rel: u64, irrel: u64) {
        let e = self.counts.entry(grams).or_insert((0, 0));
        e.0 += rel;
        e.1 += irrel;
    }

    pub fn merge(mut self, other: PatternCounts) -> PatternCounts {
        let (mut big, small) = if self.counts.len() >= other.counts.len() {
            (std::mem::take(&mut self.counts), other.counts)
        } else {
            (other.counts, std::mem::take(&mut self.counts))
        };
        for (k, (r, i)) in small {
            let e = big.entry(k).or_insert((0, 0));
            e.0 += r;
            e.1 += i;
        }
        PatternCounts { counts: big }
    }

    /// Entries sorted by gram sequence.
    pub fn sorted(&self) -> Vec<(&Vec<String>, u64, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, &(r, i))| (k, r, i)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

const SHARD: usize = 256;

fn count_pool<F>(corpus: &SegmentCorpus, relevant: bool, extract: &F) -> PatternCounts
where
    F: Fn(&Sentence) -> Vec<Vec<String>> + Sync,
{
    corpus
        .segments
        .par_chunks(SHARD)
        .map(|shard| {
            let mut counts = PatternCounts::default();
            for (_, s) in shard {
                for grams in extract(s) {
                    if relevant {
                        counts.add(grams, 1, 0);
                    } else {
                        counts.add(grams, 0, 1);
                    }
                }
            }
            counts
        })
        .reduce(PatternCounts::default, PatternCounts::merge)
}

/// Counts syntactic candidates in both pools.
pub fn count_patterns(rel: &SegmentCorpus, irrel: &SegmentCorpus) -> PatternCounts {
    count_pool(rel, true, &generate_candidates).merge(count_pool(
        irrel,
        false,
        &generate_candidates,
    ))
}

fn adjacent_bigrams(sentence: &Sentence) -> Vec<Vec<String>> {
    (1..sentence.len())
        .map(|i| {
            vec![
                sentence.lower(i - 1).to_string(),
                sentence.lower(i).to_string(),
            ]
        })
        .filter(|g| !g.iter().any(|w| has_digit(w)))
        .collect()
}

/// Counts every adjacent token pair in both pools.
pub fn count_bigrams(rel: &SegmentCorpus, irrel: &SegmentCorpus) -> PatternCounts {
    count_pool(rel, true, &adjacent_bigrams).merge(count_pool(irrel, false, &adjacent_bigrams))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    /// Minimum occurrences over both pools combined.
    pub min_freq: u64,
    pub min_prob: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            min_freq: 10,
            min_prob: 0.8,
        }
    }
}

/// Applies the frequency, probability and digit filters.
pub fn select_patterns(
    counts: &PatternCounts,
    category: Category,
    config: &MiningConfig,
) -> PatternLexicon {
    let mut lexicon = PatternLexicon::default();
    for (grams, rel, irrel) in counts.sorted() {
        let total = rel + irrel;
        if total == 0 || total < config.min_freq {
            continue;
        }
        if grams.is_empty() || grams.len() > 3 || grams.iter().any(|g| has_digit(g)) {
            continue;
        }
        let pattern = Pattern::new(grams.clone(), category, rel, total);
        if pattern.prob >= config.min_prob {
            lexicon.insert(pattern);
        }
    }
    lexicon
}

pub fn mine_patterns(
    rel: &SegmentCorpus,
    irrel: &SegmentCorpus,
    category: Category,
    config: &MiningConfig,
) -> PatternLexicon {
    select_patterns(&count_patterns(rel, irrel), category, config)
}

pub fn mine_bigrams_baseline(
    rel: &SegmentCorpus,
    irrel: &SegmentCorpus,
    category: Category,
    config: &MiningConfig,
) -> PatternLexicon {
    select_patterns(&count_bigrams(rel, irrel), category, config)
}

#[derive(Debug, Clone, Default)]
struct CategoryPatterns {
    patterns: Vec<Pattern>,
    // keys are grams joined by a single space
    unigrams: HashSet<String>,
    bigrams: HashSet<String>,
    trigrams: HashSet<String>,
}

impl CategoryPatterns {
    fn index_for(&mut self, arity: usize) -> &mut HashSet<String> {
        match arity {
            1 => &mut self.unigrams,
            2 => &mut self.bigrams,
            _ => &mut self.trigrams,
        }
    }
}

/// Patterns per category, indexed by arity for constant-time lookup.
#[derive(Debug, Clone, Default)]
pub struct PatternLexicon {
    by_category: [CategoryPatterns; 3],
}

/// Lexicon hits around one token: preceding bigram, the token itself,
/// following bigram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchHits {
    pub prev_bigram: bool,
    pub cur_unigram: bool,
    pub next_bigram: bool,
}

impl PatternLexicon {
    /// Adds a pattern; returns false when its gram sequence is already
    /// present for that category.
    pub fn insert(&mut self, pattern: Pattern) -> bool {
        assert!(
            (1..=3).contains(&pattern.arity()),
            "pattern arity must be 1..=3"
        );
        let entry = &mut self.by_category[pattern.category.index()];
        let key = pattern.grams.join(" ");
        if !entry.index_for(pattern.arity()).insert(key) {
            return false;
        }
        entry.patterns.push(pattern);
        true
    }

    /// Union with another lexicon; duplicates keep the existing entry.
    pub fn extend(&mut self, other: PatternLexicon) {
        for cat in other.by_category {
            for p in cat.patterns {
                self.insert(p);
            }
        }
    }

    pub fn patterns(&self, category: Category) -> &[Pattern] {
        &self.by_category[category.index()].patterns
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pattern> {
        self.by_category.iter().flat_map(|c| c.patterns.iter())
    }

    pub fn len(&self) -> usize {
        self.by_category.iter().map(|c| c.patterns.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_unigram(&self, category: Category, word: &str) -> bool {
        self.by_category[category.index()].unigrams.contains(word)
    }

    pub fn has_bigram(&self, category: Category, first: &str, second: &str) -> bool {
        let set = &self.by_category[category.index()].bigrams;
        !set.is_empty() && set.contains(&format!("{first} {second}"))
    }

    /// True when `grams` (two or three lowercased tokens) is a pattern of any category.
    pub fn contains_phrase(&self, grams: &[&str]) -> bool {
        if !(2..=3).contains(&grams.len()) {
            return false;
        }
        let key = grams.join(" ");
        self.by_category.iter().any(|c| {
            let set = if grams.len() == 2 {
                &c.bigrams
            } else {
                &c.trigrams
            };
            set.contains(&key)
        })
    }

    /// Merged-token surfaces ("a_b") of every multi-gram pattern, sorted.
    pub fn phrase_tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .iter()
            .filter(|p| p.arity() > 1)
            .map(Pattern::joined)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Patterns sorted by score descending, then category and gram sequence.
    pub fn ranked(&self) -> Vec<&Pattern> {
        let mut all: Vec<&Pattern> = self.iter().collect();
        all.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.category.cmp(&b.category))
                .then_with(|| a.grams.cmp(&b.grams))
        });
        all
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TSV_HEADER}")?;
        for p in self.ranked() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                p.category,
                p.joined(),
                p.freq_rel,
                p.freq_total,
                p.prob,
                p.score
            )?;
        }
        Ok(())
    }

    /// Reads the TSV written by [`PatternLexicon::write_tsv`]; lines starting
    /// with `#` are skipped. Probability and score are recomputed from counts.
    pub fn read_tsv<R: BufRead>(r: R) -> Result<PatternLexicon, PatternError> {
        let mut lexicon = PatternLexicon::default();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let err = |message: String| PatternError::Tsv {
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", fields.len())));
            }
            let category: Category = fields[0].parse().map_err(err)?;
            let grams: Vec<String> = fields[1].split('_').map(str::to_string).collect();
            if grams.len() > 3 || grams.iter().any(String::is_empty) {
                return Err(err(format!("bad pattern `{}`", fields[1])));
            }
            let freq_rel: u64 = fields[2]
                .parse()
                .map_err(|e| err(format!("freq_rel: {e}")))?;
            let freq_total: u64 = fields[3]
                .parse()
                .map_err(|e| err(format!("freq_total: {e}")))?;
            if freq_total == 0 || freq_rel > freq_total {
                return Err(err(
                    "need 0 <= freq_rel <= freq_total, freq_total > 0".into()
                ));
            }
            lexicon.insert(Pattern::new(grams, category, freq_rel, freq_total));
        }
        Ok(lexicon)
    }
}

/// Checks the bigram ending just before `i`, the unigram at `i`, and the
/// bigram starting just after `i` against one category's patterns.
/// Trigram patterns are not consulted. Panics if `i` is out of range.
pub fn match_lexicon(
    sentence: &Sentence,
    lexicon: &PatternLexicon,
    category: Category,
    i: usize,
) -> MatchHits {
    let n = sentence.len();
    assert!(
        i < n,
        "token index {i} out of range for sentence of length {n}"
    );
    MatchHits {
        prev_bigram: i >= 2
            && lexicon.has_bigram(category, sentence.lower(i - 2), sentence.lower(i - 1)),
        cur_unigram: lexicon.has_unigram(category, sentence.lower(i)),
        next_bigram: i + 2 < n
            && lexicon.has_bigram(category, sentence.lower(i + 1), sentence.lower(i + 2)),
    }
}

/// The nine pattern indicators for token `i`, ordered
/// `[prev-bigram P,I,O | unigram P,I,O | next-bigram P,I,O]`.
pub fn pattern_indicators(sentence: &Sentence, lexicon: &PatternLexicon, i: usize) -> [bool; 9] {
    let mut out = [false; 9];
    for c in Category::ALL {
        let hits = match_lexicon(sentence, lexicon, c, i);
        out[c.index()] = hits.prev_bigram;
        out[3 + c.index()] = hits.cur_unigram;
        out[6 + c.index()] = hits.next_bigram;
    }
    out
}
