//! Tokens, sentences, documents, JSONL ingestion and pattern-token merging.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::PatternLexicon;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: schema error in field `{field}`: {message}")]
    Schema {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn schema(line: usize, field: &'static str, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        line,
        field,
        message: message.into(),
    }
}

/// Extraction category: participants, interventions, outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    P,
    I,
    O,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::P, Category::I, Category::O];

    pub fn index(self) -> usize {
        match self {
            Category::P => 0,
            Category::I => 1,
            Category::O => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::P => "P",
            Category::I => "I",
            Category::O => "O",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P" | "p" => Ok(Category::P),
            "I" | "i" => Ok(Category::I),
            "O" | "o" => Ok(Category::O),
            other => Err(format!("unknown category `{other}` (expected P, I or O)")),
        }
    }
}

/// IO tag. `Out` sorts before `In`; decoders break ties toward the lower index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    Out = 0,
    In = 1,
}

impl Tag {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        match i {
            0 => Tag::Out,
            1 => Tag::In,
            _ => panic!("tag index {i} out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    surface: String,
    pos: String,
    lower: String,
}

impl Token {
    /// Panics on an empty surface; ingestion paths validate before calling.
    pub fn new(surface: impl Into<String>, pos: impl Into<String>) -> Self {
        let surface = surface.into();
        assert!(!surface.is_empty(), "token surface must be non-empty");
        let lower = surface.to_lowercase();
        Token {
            surface,
            pos: pos.into(),
            lower,
        }
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn pos(&self) -> &str {
        &self.pos
    }

    pub fn lower(&self) -> &str {
        &self.lower
    }

    /// Merged pattern tokens carry an underscore and are never re-merged.
    pub fn is_merged(&self) -> bool {
        self.surface.contains('_')
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    tokens: Vec<Token>,
    labels: [Option<Vec<Tag>>; 3],
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence {
            tokens,
            labels: [None, None, None],
        }
    }

    /// Convenience constructor from parallel surface / POS slices.
    pub fn from_pairs(words: &[&str], pos: &[&str]) -> Self {
        assert_eq!(words.len(), pos.len(), "words and POS tags must align");
        Sentence::new(
            words
                .iter()
                .zip(pos)
                .map(|(w, p)| Token::new(*w, *p))
                .collect(),
        )
    }

    pub fn with_labels(mut self, category: Category, tags: Vec<Tag>) -> Self {
        self.set_labels(category, tags);
        self
    }

    pub fn set_labels(&mut self, category: Category, tags: Vec<Tag>) {
        assert_eq!(
            tags.len(),
            self.tokens.len(),
            "label track length must equal token count"
        );
        self.labels[category.index()] = Some(tags);
    }

    pub fn clear_labels(&mut self, category: Category) {
        self.labels[category.index()] = None;
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self, category: Category) -> Option<&[Tag]> {
        self.labels[category.index()].as_deref()
    }

    pub fn lower(&self, i: usize) -> &str {
        self.tokens[i].lower()
    }

    pub fn pos(&self, i: usize) -> &str {
        self.tokens[i].pos()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
}

/// Weakly labeled segments: every segment carries exactly one category.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SegmentCorpus {
    pub segments: Vec<(Category, Sentence)>,
}

impl SegmentCorpus {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.segments.iter().map(|(_, s)| s)
    }

    pub fn extend(&mut self, other: SegmentCorpus) {
        self.segments.extend(other.segments);
    }
}

#[derive(Deserialize)]
struct LabeledLine {
    doc_id: Option<String>,
    tokens: Option<Vec<String>>,
    pos: Option<Vec<String>>,
    #[serde(default)]
    labels: BTreeMap<String, Vec<u8>>,
    sent_breaks: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct LabeledLineOut<'a> {
    doc_id: &'a str,
    tokens: Vec<&'a str>,
    pos: Vec<&'a str>,
    labels: BTreeMap<&'static str, Vec<u8>>,
    sent_breaks: Vec<usize>,
}

#[derive(Deserialize)]
struct SegmentLine {
    tokens: Option<Vec<String>>,
    pos: Option<Vec<String>>,
}

fn build_tokens(
    line: usize,
    tokens: Vec<String>,
    pos: Vec<String>,
) -> Result<Vec<Token>, CorpusError> {
    if pos.len() != tokens.len() {
        return Err(schema(
            line,
            "pos",
            format!("{} POS tags for {} tokens", pos.len(), tokens.len()),
        ));
    }
    if let Some(k) = tokens.iter().position(|t| t.is_empty()) {
        return Err(schema(line, "tokens", format!("token {k} is empty")));
    }
    Ok(tokens
        .into_iter()
        .zip(pos)
        .map(|(t, p)| Token::new(t, p))
        .collect())
}

/// Reads labeled documents, one JSON object per line.
pub fn parse_labeled_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: LabeledLine = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            line: line_no,
            source,
        })?;
        let doc_id = raw
            .doc_id
            .ok_or_else(|| schema(line_no, "doc_id", "missing"))?;
        if !seen.insert(doc_id.clone()) {
            return Err(schema(
                line_no,
                "doc_id",
                format!("duplicate document id `{doc_id}`"),
            ));
        }
        let tokens = raw
            .tokens
            .ok_or_else(|| schema(line_no, "tokens", "missing"))?;
        let pos = raw.pos.ok_or_else(|| schema(line_no, "pos", "missing"))?;
        let n = tokens.len();
        let tokens = build_tokens(line_no, tokens, pos)?;

        let mut tracks: [Option<Vec<Tag>>; 3] = [None, None, None];
        for (key, values) in raw.labels {
            let Ok(category) = key.parse::<Category>() else {
                continue;
            };
            let field = match category {
                Category::P => "labels.P",
                Category::I => "labels.I",
                Category::O => "labels.O",
            };
            if values.len() != n {
                return Err(schema(
                    line_no,
                    field,
                    format!("{} labels for {} tokens", values.len(), n),
                ));
            }
            let tags = values
                .iter()
                .map(|&v| match v {
                    0 => Ok(Tag::Out),
                    1 => Ok(Tag::In),
                    other => Err(schema(
                        line_no,
                        field,
                        format!("label value {other} not in {{0,1}}"),
                    )),
                })
                .collect::<Result<Vec<_>, _>>()?;
            tracks[category.index()] = Some(tags);
        }

        let breaks = raw
            .sent_breaks
            .unwrap_or_else(|| if n == 0 { Vec::new() } else { vec![n] });
        let mut start = 0;
        let mut bounds = Vec::with_capacity(breaks.len() + 1);
        for &end in &breaks {
            if end <= start || end > n {
                return Err(schema(
                    line_no,
                    "sent_breaks",
                    format!("offset {end} is not increasing within 1..={n}"),
                ));
            }
            bounds.push(start..end);
            start = end;
        }
        if start < n {
            bounds.push(start..n);
        }

        let sentences = bounds
            .into_iter()
            .map(|r| {
                let mut s = Sentence::new(tokens[r.clone()].to_vec());
                for c in Category::ALL {
                    if let Some(track) = &tracks[c.index()] {
                        s.set_labels(c, track[r.clone()].to_vec());
                    }
                }
                s
            })
            .collect();
        docs.push(Document { doc_id, sentences });
    }
    Ok(docs)
}

/// Writes documents in the format read by [`parse_labeled_jsonl`]. A label
/// track is written only when every sentence of the document carries it.
pub fn write_labeled_jsonl<W: Write>(mut writer: W, docs: &[Document]) -> Result<(), CorpusError> {
    for doc in docs {
        let tokens: Vec<&str> = doc
            .sentences
            .iter()
            .flat_map(|s| s.tokens().iter().map(Token::surface))
            .collect();
        let pos: Vec<&str> = doc
            .sentences
            .iter()
            .flat_map(|s| s.tokens().iter().map(Token::pos))
            .collect();
        let mut labels = BTreeMap::new();
        for c in Category::ALL {
            if !doc.sentences.is_empty() && doc.sentences.iter().all(|s| s.labels(c).is_some()) {
                let flat = doc
                    .sentences
                    .iter()
                    .flat_map(|s| s.labels(c).unwrap().iter().map(|t| t.index() as u8))
                    .collect();
                labels.insert(c.as_str(), flat);
            }
        }
        let mut sent_breaks = Vec::with_capacity(doc.sentences.len());
        let mut end = 0;
        for s in &doc.sentences {
            end += s.len();
            sent_breaks.push(end);
        }
        let out = LabeledLineOut {
            doc_id: &doc.doc_id,
            tokens,
            pos,
            labels,
            sent_breaks,
        };
        serde_json::to_writer(&mut writer, &out)
            .map_err(|source| CorpusError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads unlabeled segments and tags every one with `category`.
pub fn parse_segments<R: BufRead>(
    reader: R,
    category: Category,
) -> Result<SegmentCorpus, CorpusError> {
    let mut segments = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: SegmentLine = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            line: line_no,
            source,
        })?;
        let tokens = raw
            .tokens
            .ok_or_else(|| schema(line_no, "tokens", "missing"))?;
        let pos = raw.pos.ok_or_else(|| schema(line_no, "pos", "missing"))?;
        segments.push((category, Sentence::new(build_tokens(line_no, tokens, pos)?)));
    }
    Ok(SegmentCorpus { segments })
}

/// A sentence whose multi-token pattern occurrences were collapsed into
/// single tokens, with the map back to the original positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedSentence {
    pub sentence: Sentence,
    /// `alignment[j]` is the range of original tokens covered by merged token `j`.
    pub alignment: Vec<Range<usize>>,
}

impl MergedSentence {
    /// Copies each merged token's tag onto all of its constituents.
    pub fn project_tags(&self, merged: &[Tag]) -> Vec<Tag> {
        assert_eq!(merged.len(), self.alignment.len());
        let mut out = Vec::with_capacity(self.alignment.last().map_or(0, |r| r.end));
        for (tag, range) in merged.iter().zip(&self.alignment) {
            out.extend(std::iter::repeat_n(*tag, range.len()));
        }
        out
    }
}

/// Greedy left-to-right, longest-first replacement of bigram and trigram
/// pattern occurrences by single underscore-joined tokens.
pub fn merge_pattern_tokens(sentence: &Sentence, lexicon: &PatternLexicon) -> MergedSentence {
    let tokens = sentence.tokens();
    let n = tokens.len();
    let mut alignment = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut width = 1;
        for w in [3usize, 2] {
            if i + w > n {
                continue;
            }
            let window = &tokens[i..i + w];
            if window.iter().any(Token::is_merged) {
                continue;
            }
            let grams: Vec<&str> = window.iter().map(Token::lower).collect();
            if lexicon.contains_phrase(&grams) {
                width = w;
                break;
            }
        }
        alignment.push(i..i + width);
        i += width;
    }

    if alignment.len() == n {
        return MergedSentence {
            sentence: sentence.clone(),
            alignment,
        };
    }

    let merged_tokens = alignment
        .iter()
        .map(|r| {
            if r.len() == 1 {
                tokens[r.start].clone()
            } else {
                let surface = tokens[r.clone()]
                    .iter()
                    .map(Token::lower)
                    .collect::<Vec<_>>()
                    .join("_");
                Token::new(surface, tokens[r.end - 1].pos())
            }
        })
        .collect();
    let mut merged = Sentence::new(merged_tokens);
    for c in Category::ALL {
        if let Some(tags) = sentence.labels(c) {
            let collapsed = alignment
                .iter()
                .map(|r| majority_tag(&tags[r.clone()]))
                .collect();
            merged.set_labels(c, collapsed);
        }
    }
    MergedSentence {
        sentence: merged,
        alignment,
    }
}

/// Majority vote; a tie goes to the final constituent's tag.
fn majority_tag(tags: &[Tag]) -> Tag {
    let inside = tags.iter().filter(|&&t| t == Tag::In).count();
    let outside = tags.len() - inside;
    match inside.cmp(&outside) {
        std::cmp::Ordering::Greater => Tag::In,
        std::cmp::Ordering::Less => Tag::Out,
        std::cmp::Ordering::Equal => *tags.last().expect("non-empty constituent range"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::Pattern;
    use proptest::prelude::*;

    fn lexicon(phrases: &[&str]) -> PatternLexicon {
        let mut lex = PatternLexicon::default();
        for p in phrases {
            let grams = p.split('_').map(str::to_string).collect();
            lex.insert(Pattern::new(grams, Category::P, 10, 10));
        }
        lex
    }

    #[test]
    fn single_token_document() {
        let input = r#"{"doc_id":"d1","tokens":["a"],"pos":["DT"],"labels":{"P":[1]}}"#;
        let docs = parse_labeled_jsonl(input.as_bytes()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].sentences.len(), 1);
        assert_eq!(
            docs[0].sentences[0].labels(Category::P),
            Some(&[Tag::In][..])
        );
        assert_eq!(docs[0].sentences[0].labels(Category::I), None);
    }

    #[test]
    fn label_length_mismatch_names_field() {
        let input =
            r#"{"doc_id":"d1","tokens":["a","b"],"pos":["DT","NN"],"labels":{"P":[0,1,1]}}"#;
        let err = parse_labeled_jsonl(input.as_bytes()).unwrap_err();
        match err {
            CorpusError::Schema { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "labels.P");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = "{\"doc_id\":\"a\",\"tokens\":[],\"pos\":[]}\n{not json";
        match parse_labeled_jsonl(input.as_bytes()).unwrap_err() {
            CorpusError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn sentence_breaks_split_document() {
        let input = r#"{"doc_id":"d","tokens":["a","b","c"],"pos":["X","X","X"],"labels":{"O":[0,1,1]},"sent_breaks":[1,3],"extra":true}"#;
        let docs = parse_labeled_jsonl(input.as_bytes()).unwrap();
        let s = &docs[0].sentences;
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].len(), 1);
        assert_eq!(s[1].labels(Category::O), Some(&[Tag::In, Tag::In][..]));
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let input = "{\"doc_id\":\"a\",\"tokens\":[\"x\"],\"pos\":[\"X\"]}\n{\"doc_id\":\"a\",\"tokens\":[\"y\"],\"pos\":[\"X\"]}";
        assert!(matches!(
            parse_labeled_jsonl(input.as_bytes()),
            Err(CorpusError::Schema {
                field: "doc_id",
                ..
            })
        ));
    }

    #[test]
    fn segments_parse_and_tag() {
        let input = "{\"tokens\":[\"a\"],\"pos\":[\"DT\"]}\n{\"tokens\":[\"b\"],\"pos\":[\"NN\"]}\n{\"tokens\":[\"c\",\"d\"],\"pos\":[\"NN\",\"NN\"]}\n";
        let corpus = parse_segments(input.as_bytes(), Category::P).unwrap();
        assert_eq!(corpus.len(), 3);
        assert!(corpus.segments.iter().all(|(c, _)| *c == Category::P));
    }

    #[test]
    fn empty_segment_stream() {
        let corpus = parse_segments("".as_bytes(), Category::I).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn segment_missing_pos() {
        let input = "{\"tokens\":[\"a\"]}";
        assert!(matches!(
            parse_segments(input.as_bytes(), Category::O),
            Err(CorpusError::Schema { field: "pos", .. })
        ));
    }

    #[test]
    fn merges_patients_with() {
        let s = Sentence::from_pairs(&["patients", "with", "chronic"], &["NNS", "IN", "JJ"]);
        let merged = merge_pattern_tokens(&s, &lexicon(&["patients_with"]));
        let surfaces: Vec<_> = merged
            .sentence
            .tokens()
            .iter()
            .map(Token::surface)
            .collect();
        assert_eq!(surfaces, ["patients_with", "chronic"]);
        assert_eq!(merged.alignment, vec![0..2, 2..3]);
        assert_eq!(merged.sentence.pos(0), "IN");
    }

    #[test]
    fn empty_lexicon_is_identity() {
        let s = Sentence::from_pairs(&["Patients", "with"], &["NNS", "IN"])
            .with_labels(Category::P, vec![Tag::In, Tag::Out]);
        let merged = merge_pattern_tokens(&s, &PatternLexicon::default());
        assert_eq!(merged.sentence, s);
    }

    #[test]
    fn overlapping_candidates_take_leftmost() {
        let s = Sentence::from_pairs(&["a", "b", "c"], &["X", "X", "X"]);
        let merged = merge_pattern_tokens(&s, &lexicon(&["a_b", "b_c"]));
        let surfaces: Vec<_> = merged
            .sentence
            .tokens()
            .iter()
            .map(Token::surface)
            .collect();
        assert_eq!(surfaces, ["a_b", "c"]);
    }

    #[test]
    fn trigram_beats_bigram_and_case_is_ignored() {
        let s = Sentence::from_pairs(&["Carried", "out", "in", "x"], &["VBN", "RP", "IN", "NN"]);
        let merged = merge_pattern_tokens(&s, &lexicon(&["carried_out", "carried_out_in"]));
        assert_eq!(merged.sentence.tokens()[0].surface(), "carried_out_in");
        assert_eq!(merged.alignment, vec![0..3, 3..4]);
    }

    #[test]
    fn merged_labels_vote_with_final_tiebreak() {
        let s = Sentence::from_pairs(&["a", "b", "c", "d", "e"], &["X"; 5]).with_labels(
            Category::I,
            vec![Tag::In, Tag::Out, Tag::Out, Tag::In, Tag::In],
        );
        let merged = merge_pattern_tokens(&s, &lexicon(&["a_b", "c_d_e"]));
        // a_b ties 1:1 -> final (Out); c_d_e is 2 In vs 1 Out -> In
        assert_eq!(
            merged.sentence.labels(Category::I),
            Some(&[Tag::Out, Tag::In][..])
        );
        assert_eq!(
            merged.project_tags(&[Tag::In, Tag::Out]),
            vec![Tag::In, Tag::In, Tag::Out, Tag::Out, Tag::Out]
        );
    }

    fn arb_document() -> impl Strategy<Value = Document> {
        let word = "[a-zA-Z][a-z\\-]{0,6}";
        prop::collection::vec(
            prop::collection::vec(
                (word, "(NN|DT|VBD|IN|JJ)", any::<bool>(), any::<bool>()),
                1..6,
            ),
            0..4,
        )
        .prop_map(|sents| {
            let sentences = sents
                .into_iter()
                .map(|toks| {
                    let p: Vec<Tag> = toks
                        .iter()
                        .map(|t| if t.2 { Tag::In } else { Tag::Out })
                        .collect();
                    let o: Vec<Tag> = toks
                        .iter()
                        .map(|t| if t.3 { Tag::In } else { Tag::Out })
                        .collect();
                    Sentence::new(
                        toks.into_iter()
                            .map(|(w, pos, _, _)| Token::new(w, pos))
                            .collect(),
                    )
                    .with_labels(Category::P, p)
                    .with_labels(Category::O, o)
                })
                .collect();
            Document {
                doc_id: String::new(),
                sentences,
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn jsonl_round_trip(mut docs in prop::collection::vec(arb_document(), 1..5)) {
            for (i, d) in docs.iter_mut().enumerate() {
                d.doc_id = format!("doc{i}");
            }
            let mut buf = Vec::new();
            write_labeled_jsonl(&mut buf, &docs).unwrap();
            let back = parse_labeled_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(back, docs);
        }

        #[test]
        fn merge_preserves_tokens_and_is_idempotent(
            words in prop::collection::vec("[abc]", 0..12),
            phrases in prop::collection::vec("[abc]_[abc](_[abc])?", 0..4),
        ) {
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let pos = vec!["X"; refs.len()];
            let tags: Vec<Tag> = (0..refs.len()).map(|i| if i % 3 == 0 { Tag::In } else { Tag::Out }).collect();
            let s = Sentence::from_pairs(&refs, &pos).with_labels(Category::P, tags);
            let phrase_refs: Vec<&str> = phrases.iter().map(String::as_str).collect();
            let lex = lexicon(&phrase_refs);
            let merged = merge_pattern_tokens(&s, &lex);

            let rebuilt: Vec<String> = merged.sentence.tokens().iter()
                .flat_map(|t| t.surface().split('_').map(str::to_string).collect::<Vec<_>>())
                .collect();
            prop_assert_eq!(rebuilt, words.clone());
            let covered: Vec<usize> = merged.alignment.iter().flat_map(|r| r.clone()).collect();
            prop_assert_eq!(covered, (0..words.len()).collect::<Vec<_>>());

            let again = merge_pattern_tokens(&merged.sentence, &lex);
            prop_assert_eq!(&again.sentence, &merged.sentence);

            let projected = merged.project_tags(merged.sentence.labels(Category::P).unwrap());
            prop_assert_eq!(projected.len(), words.len());
        }
    }
}
