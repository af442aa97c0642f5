//! Canonical corpus file format.
//!
//! ```json
//! [{"doc_id": "d0",
//!   "sentences": [["tok", ...], ...],
//!   "mentions": [{"sent": 0, "start": 1, "end": 3}],
//!   "event_types": ["EquityFreeze"],
//!   "records": [{"type": "EquityFreeze", "args": {"EquityHolder": "...", "FrozeShares": null}}]}]
//! ```

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Document, EntityMention, EventRecord, EventSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDocument {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub mentions: Vec<RawMention>,
    pub event_types: Vec<String>,
    pub records: Vec<RawRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMention {
    pub sent: usize,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    #[serde(rename = "type")]
    pub event_type: String,
    pub args: IndexMap<String, Option<String>>,
}

/// Converts serialised records, rejecting unknown types or roles and
/// records that do not list every role of their type.
pub fn read_records_json(raw: &[RawRecord], schema: &EventSchema, doc_id: &str) -> Result<Vec<EventRecord>> {
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            let field = format!("records[{i}]");
            let t = schema
                .type_id(&r.event_type)
                .ok_or_else(|| Error::schema(doc_id, &field, format!("unknown event type {:?}", r.event_type)))?;
            let roles = schema.roles(t).expect("type id in range");
            for key in r.args.keys() {
                if !roles.contains(key) {
                    return Err(Error::schema(
                        doc_id,
                        format!("{field}.args"),
                        format!("role {key:?} not defined for {}", r.event_type),
                    ));
                }
            }
            let args = roles
                .iter()
                .map(|role| {
                    r.args
                        .get(role)
                        .cloned()
                        .ok_or_else(|| Error::schema(doc_id, format!("{field}.args"), format!("missing role {role:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EventRecord { event_type: t, args })
        })
        .collect()
}

pub fn records_to_json(records: &[EventRecord], schema: &EventSchema) -> Vec<RawRecord> {
    records
        .iter()
        .map(|r| RawRecord {
            event_type: schema.type_name(r.event_type).to_owned(),
            args: schema
                .roles(r.event_type)
                .expect("record type in schema")
                .iter()
                .cloned()
                .zip(r.args.iter().cloned())
                .collect(),
        })
        .collect()
}

impl RawDocument {
    pub fn into_document(self, schema: &EventSchema) -> Result<Document> {
        let doc_id = self.doc_id;
        let mut gold_mentions = Vec::with_capacity(self.mentions.len());
        for (i, m) in self.mentions.iter().enumerate() {
            let sent = self.sentences.get(m.sent).ok_or_else(|| {
                Error::schema(
                    &doc_id,
                    format!("mentions[{i}].sent"),
                    format!("no sentence {}", m.sent),
                )
            })?;
            if m.start >= m.end || m.end > sent.len() {
                return Err(Error::schema(
                    &doc_id,
                    format!("mentions[{i}]"),
                    format!(
                        "span [{}, {}) invalid for sentence of length {}",
                        m.start,
                        m.end,
                        sent.len()
                    ),
                ));
            }
            let mut mention = EntityMention::from_tokens(m.sent, m.start, m.end, sent);
            mention.kind = m.kind.clone();
            gold_mentions.push(mention);
        }
        let mut gold_types = std::collections::BTreeSet::new();
        for t in &self.event_types {
            let id = schema
                .type_id(t)
                .ok_or_else(|| Error::schema(&doc_id, "event_types", format!("unknown event type {t:?}")))?;
            gold_types.insert(id);
        }
        let gold_records = read_records_json(&self.records, schema, &doc_id)?;
        let doc = Document {
            doc_id,
            sentences: self.sentences,
            gold_mentions,
            gold_types,
            gold_records,
        };
        doc.validate(schema)?;
        Ok(doc)
    }

    pub fn from_document(doc: &Document, schema: &EventSchema) -> Self {
        Self {
            doc_id: doc.doc_id.clone(),
            sentences: doc.sentences.clone(),
            mentions: doc
                .gold_mentions
                .iter()
                .map(|m| RawMention {
                    sent: m.sentence_index,
                    start: m.start,
                    end: m.end,
                    kind: m.kind.clone(),
                })
                .collect(),
            event_types: doc.gold_types.iter().map(|&t| schema.type_name(t).to_owned()).collect(),
            records: records_to_json(&doc.gold_records, schema),
        }
    }
}

pub fn parse_corpus(text: &str, schema: &EventSchema) -> Result<Vec<Document>> {
    let raw: Vec<RawDocument> = serde_json::from_str(text).map_err(|e| Error::json("corpus", e))?;
    raw.into_iter().map(|d| d.into_document(schema)).collect()
}

pub fn load_corpus(path: &Path, schema: &EventSchema) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, schema)
}

pub fn write_corpus(docs: &[Document], schema: &EventSchema) -> String {
    let raw: Vec<RawDocument> = docs.iter().map(|d| RawDocument::from_document(d, schema)).collect();
    serde_json::to_string(&raw).expect("corpus serialises")
}

pub fn save_corpus(path: &Path, docs: &[Document], schema: &EventSchema) -> Result<()> {
    std::fs::write(path, write_corpus(docs, schema)).map_err(|e| Error::io(path, e))
}
