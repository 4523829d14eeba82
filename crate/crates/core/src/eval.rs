//! Token-level precision, recall and F1 with IN as the positive class.

use std::io::Write;

use thiserror::Error;

use crate::corpus::{Category, Tag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("sentence {sentence}: gold has {gold} tags, prediction has {pred}")]
    LengthMismatch {
        sentence: usize,
        gold: usize,
        pred: usize,
    },
    #[error("gold has {gold} sentences, prediction has {pred}")]
    SentenceCount { gold: usize, pred: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrfScore {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfScore {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn merge(&self, other: &PrfScore) -> PrfScore {
        PrfScore::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

pub fn token_prf<G, P>(gold: &[G], pred: &[P]) -> Result<PrfScore, EvalError>
where
    G: AsRef<[Tag]>,
    P: AsRef<[Tag]>,
{
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch {
                sentence: k,
                gold: g.len(),
                pred: p.len(),
            });
        }
        for (a, b) in g.iter().zip(p) {
            match (a, b) {
                (Tag::In, Tag::In) => tp += 1,
                (Tag::Out, Tag::In) => fp += 1,
                (Tag::In, Tag::Out) => fn_ += 1,
                (Tag::Out, Tag::Out) => {}
            }
        }
    }
    Ok(PrfScore::from_counts(tp, fp, fn_))
}

/// Fraction of tokens whose predicted tag equals the gold tag.
pub fn token_accuracy<G, P>(gold: &[G], pred: &[P]) -> f64
where
    G: AsRef<[Tag]>,
    P: AsRef<[Tag]>,
{
    let mut total = 0usize;
    let mut correct = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        for (a, b) in g.as_ref().iter().zip(p.as_ref()) {
            total += 1;
            correct += usize::from(a == b);
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

pub const REPORT_HEADER: &str = "#category\tprecision\trecall\tf1\ttp\tfp\tfn";

/// One TSV row; P/R/F1 as percentages with two decimals.
pub fn write_report_row<W: Write>(
    mut w: W,
    category: Category,
    s: &PrfScore,
) -> std::io::Result<()> {
    writeln!(
        w,
        "{}\t{:.2}\t{:.2}\t{:.2}\t{}\t{}\t{}",
        category,
        100.0 * s.precision,
        100.0 * s.recall,
        100.0 * s.f1,
        s.tp,
        s.fp,
        s.fn_
    )
}
