//! Syntactic extraction patterns for PICO span tagging.
//!
//! The pipeline mines lexical-syntactic n-gram patterns from weakly labeled
//! abstract segments ([`patterns`]), feeds them as indicator features into a
//! linear-chain CRF ([`crf`]) or a BiLSTM-CRF ([`neural`]), and inspects how
//! merged pattern tokens sit in a skip-gram embedding space ([`embeddings`]).

#![allow(clippy::needless_range_loop)]

pub mod chunker;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod eval;
pub mod neural;
pub mod patterns;
mod stopwords;

pub use corpus::{Category, Document, SegmentCorpus, Sentence, Tag, Token};
pub use patterns::{Pattern, PatternLexicon};
