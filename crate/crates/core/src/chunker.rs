//! POS-pattern noun-phrase chunking and shallow syntactic roles.
//!
//! NPs match `(DT|PDT)? (JJ|JJR|JJS|VBN|VBG)* (NN|NNS|NNP|NNPS|CD)+`, taken
//! greedily left to right. Roles are assigned from the immediate context:
//! a preceding preposition, the nearest verb to the right (subject) or to
//! the left (object), with no other NP in between.

use serde::Serialize;

use crate::corpus::Sentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Role {
    Subject,
    DirectObject,
    IndirectObject,
    PrepObject,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpSpan {
    pub start: usize,
    pub end: usize,
    pub head: usize,
    pub role: Role,
    /// Verb for subjects and objects, preposition for PP objects.
    pub governor: Option<usize>,
    /// Set on subjects whose governing "be" verb is followed by a participle.
    pub passive: bool,
}

impl NpSpan {
    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

pub fn is_noun(pos: &str) -> bool {
    matches!(pos, "NN" | "NNS" | "NNP" | "NNPS" | "CD")
}

pub fn is_verb(pos: &str) -> bool {
    pos.starts_with("VB")
}

pub fn is_preposition(pos: &str) -> bool {
    matches!(pos, "IN" | "TO")
}

fn is_determiner(pos: &str) -> bool {
    matches!(pos, "DT" | "PDT")
}

fn is_modifier(pos: &str) -> bool {
    matches!(pos, "JJ" | "JJR" | "JJS" | "VBN" | "VBG")
}

const BE_FORMS: &[&str] = &[
    "be", "is", "are", "was", "were", "been", "being", "am", "'s", "'re",
];

/// Maximal non-overlapping NP spans, sorted by start. Roles are left as
/// [`Role::Other`] until [`assign_roles`] runs.
pub fn chunk_nps(sentence: &Sentence) -> Vec<NpSpan> {
    let n = sentence.len();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        if is_determiner(sentence.pos(j)) {
            j += 1;
        }
        while j < n && is_modifier(sentence.pos(j)) {
            j += 1;
        }
        let nouns_start = j;
        while j < n && is_noun(sentence.pos(j)) {
            j += 1;
        }
        if j > nouns_start {
            spans.push(NpSpan {
                start: i,
                end: j,
                head: j - 1,
                role: Role::Other,
                governor: None,
                passive: false,
            });
            i = j;
        } else {
            i += 1;
        }
    }
    spans
}

/// Assigns a role and governor to every span, in sentence order.
pub fn assign_roles(sentence: &Sentence, spans: &[NpSpan]) -> Vec<NpSpan> {
    let n = sentence.len();
    let mut owner = vec![None; n];
    for (k, s) in spans.iter().enumerate() {
        for slot in &mut owner[s.start..s.end] {
            *slot = Some(k);
        }
    }

    let mut out: Vec<NpSpan> = spans.to_vec();
    for k in 0..out.len() {
        let span = out[k].clone();
        let (role, governor) = if span.start > 0 && is_preposition(sentence.pos(span.start - 1)) {
            (Role::PrepObject, Some(span.start - 1))
        } else if let Some(v) = verb_after(sentence, &owner, span.end) {
            (Role::Subject, Some(v))
        } else if let Some((v, skipped_object)) = verb_before(sentence, &owner, &out, k) {
            let has_object = skipped_object
                || out[..k]
                    .iter()
                    .any(|o| o.role == Role::DirectObject && o.governor == Some(v));
            if has_object {
                (Role::IndirectObject, Some(v))
            } else {
                (Role::DirectObject, Some(v))
            }
        } else {
            (Role::Other, None)
        };
        let passive = role == Role::Subject
            && governor.is_some_and(|v| {
                BE_FORMS.contains(&sentence.lower(v)) && v + 1 < n && sentence.pos(v + 1) == "VBN"
            });
        out[k].role = role;
        out[k].governor = governor;
        out[k].passive = passive;
    }
    out
}

fn verb_after(sentence: &Sentence, owner: &[Option<usize>], from: usize) -> Option<usize> {
    (from..sentence.len())
        .take_while(|&t| owner[t].is_none())
        .find(|&t| is_verb(sentence.pos(t)))
}

/// Nearest verb to the left with no NP in between. A double-object
/// construction ("gave patients prednisone") may skip exactly one NP that is
/// already the direct object of that verb; the flag reports that skip.
fn verb_before(
    sentence: &Sentence,
    owner: &[Option<usize>],
    spans: &[NpSpan],
    k: usize,
) -> Option<(usize, bool)> {
    let mut t = spans[k].start;
    let mut skipped: Option<usize> = None;
    while t > 0 {
        t -= 1;
        match owner[t] {
            Some(other) if other != k => {
                if skipped.is_some() || spans[other].role != Role::DirectObject {
                    return None;
                }
                skipped = Some(other);
                t = spans[other].start;
            }
            _ => {
                if is_verb(sentence.pos(t)) {
                    return match skipped {
                        Some(o) if spans[o].governor != Some(t) => None,
                        Some(_) => Some((t, true)),
                        None => Some((t, false)),
                    };
                }
            }
        }
    }
    None
}

/// Chunks and assigns roles in one call.
pub fn parse_nps(sentence: &Sentence) -> Vec<NpSpan> {
    assign_roles(sentence, &chunk_nps(sentence))
}
