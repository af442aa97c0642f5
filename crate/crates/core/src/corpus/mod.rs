//! Documents, mentions, entities and event records, plus corpus ingestion
//! and generation.

mod bio;
mod chfinann;
mod io;
mod schema;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bio::{decode_bio, resolve_overlaps, to_bio, LabelIdx, LabelScheme, Tag};
pub use chfinann::{import_chfinann, write_chfinann};
pub use io::{
    load_corpus, parse_corpus, read_records_json, records_to_json, save_corpus, write_corpus, RawDocument, RawMention,
    RawRecord,
};
pub use schema::EventSchema;
pub use synth::{audit_corpus, synth_corpus, SynthAudit, SynthConfig};

/// A token span inside one sentence; `[start, end)` in token offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    /// Entity kind for typed BIO tagging; unused by the rest of the pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl EntityMention {
    /// Builds a mention over `tokens[start..end]`, deriving the surface.
    pub fn from_tokens(sentence_index: usize, start: usize, end: usize, tokens: &[String]) -> Self {
        Self {
            sentence_index,
            start,
            end,
            surface: tokens[start..end].concat(),
            kind: None,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// `(sentence, start, end)`, the key used for exact span matching.
    pub fn span_key(&self) -> (usize, usize, usize) {
        (self.sentence_index, self.start, self.end)
    }

    pub fn overlaps(&self, other: &EntityMention) -> bool {
        self.sentence_index == other.sentence_index && self.start < other.end && other.start < self.end
    }
}

/// Equivalence class of mentions sharing one surface string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub surface: String,
    pub mentions: Vec<EntityMention>,
}

/// One event instance: an argument (entity surface or NULL) per role, in the
/// schema's role order for `event_type`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventRecord {
    pub event_type: usize,
    pub args: Vec<Option<String>>,
}

impl EventRecord {
    pub fn non_null_count(&self) -> usize {
        self.args.iter().filter(|a| a.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub gold_mentions: Vec<EntityMention>,
    pub gold_types: BTreeSet<usize>,
    pub gold_records: Vec<EventRecord>,
}

impl Document {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Checks every data-model invariant against `schema`.
    pub fn validate(&self, schema: &EventSchema) -> Result<()> {
        let id = &self.doc_id;
        if self.sentences.is_empty() {
            return Err(Error::schema(id, "sentences", "document has no sentences"));
        }
        for (i, s) in self.sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::schema(id, format!("sentences[{i}]"), "empty sentence"));
            }
        }
        for (i, m) in self.gold_mentions.iter().enumerate() {
            let field = format!("mentions[{i}]");
            let Some(sent) = self.sentences.get(m.sentence_index) else {
                return Err(Error::schema(
                    id,
                    field,
                    format!("sentence index {} out of range", m.sentence_index),
                ));
            };
            if m.start >= m.end || m.end > sent.len() {
                return Err(Error::schema(
                    id,
                    field,
                    format!(
                        "span [{}, {}) invalid for sentence of length {}",
                        m.start,
                        m.end,
                        sent.len()
                    ),
                ));
            }
            if m.surface != sent[m.start..m.end].concat() {
                return Err(Error::schema(id, field, "surface does not match tokens"));
            }
        }
        let surfaces: BTreeSet<&str> = self.gold_mentions.iter().map(|m| m.surface.as_str()).collect();
        for &t in &self.gold_types {
            if t >= schema.num_types() {
                return Err(Error::schema(id, "event_types", format!("unknown type id {t}")));
            }
        }
        for (i, r) in self.gold_records.iter().enumerate() {
            let field = format!("records[{i}]");
            let roles = schema
                .roles(r.event_type)
                .ok_or_else(|| Error::schema(id, &field, format!("unknown type id {}", r.event_type)))?;
            if r.args.len() != roles.len() {
                return Err(Error::schema(
                    id,
                    field,
                    format!("expected {} roles, found {}", roles.len(), r.args.len()),
                ));
            }
            if r.non_null_count() == 0 {
                return Err(Error::schema(id, field, "record has no non-NULL argument"));
            }
            if !self.gold_types.contains(&r.event_type) {
                return Err(Error::schema(
                    id,
                    field,
                    format!("type {} missing from event_types", schema.type_name(r.event_type)),
                ));
            }
            for (role, arg) in roles.iter().zip(&r.args) {
                if let Some(a) = arg {
                    if !surfaces.contains(a.as_str()) {
                        return Err(Error::schema(
                            id,
                            format!("{field}.args.{role}"),
                            format!("argument {a:?} matches no mention"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Gold mentions grouped by sentence, each sorted by start.
    pub fn mentions_by_sentence(&self) -> Vec<Vec<&EntityMention>> {
        let mut out = vec![Vec::new(); self.sentences.len()];
        for m in &self.gold_mentions {
            out[m.sentence_index].push(m);
        }
        for v in &mut out {
            v.sort_by_key(|m| (m.start, m.end));
        }
        out
    }

    /// Sentences containing a mention of any argument of `record`.
    pub fn involved_sentences(&self, record: &EventRecord) -> BTreeSet<usize> {
        let args: BTreeSet<&str> = record.args.iter().flatten().map(String::as_str).collect();
        self.gold_mentions
            .iter()
            .filter(|m| args.contains(m.surface.as_str()))
            .map(|m| m.sentence_index)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn schema() -> EventSchema {
        EventSchema::new(vec![("EF".into(), vec!["Holder".into(), "Shares".into()])]).unwrap()
    }

    fn doc() -> Document {
        let sentences = vec![toks("a b c d"), toks("e f")];
        Document {
            doc_id: "d0".into(),
            gold_mentions: vec![
                EntityMention::from_tokens(0, 1, 3, &sentences[0]),
                EntityMention::from_tokens(1, 0, 1, &sentences[1]),
            ],
            sentences,
            gold_types: [0].into(),
            gold_records: vec![EventRecord {
                event_type: 0,
                args: vec![Some("bc".into()), None],
            }],
        }
    }

    #[test]
    fn valid_document_passes() {
        doc().validate(&schema()).unwrap();
    }

    #[test]
    fn out_of_bounds_span_is_rejected() {
        let mut d = doc();
        d.gold_mentions[1].end = 3;
        let err = d.validate(&schema()).unwrap_err().to_string();
        assert!(err.contains("d0") && err.contains("mentions[1]"), "{err}");
    }

    #[test]
    fn unresolvable_argument_is_rejected() {
        let mut d = doc();
        d.gold_records[0].args[1] = Some("zz".into());
        assert!(d.validate(&schema()).is_err());
    }

    #[test]
    fn all_null_record_is_rejected() {
        let mut d = doc();
        d.gold_records[0].args = vec![None, None];
        assert!(d.validate(&schema()).is_err());
    }

    #[test]
    fn involved_sentences_follow_argument_mentions() {
        let mut d = doc();
        d.gold_records[0].args[1] = Some("e".into());
        assert_eq!(d.involved_sentences(&d.gold_records[0]), [0, 1].into());
    }
}
