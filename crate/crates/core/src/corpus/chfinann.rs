//! Conversion from the released Chinese financial announcement layout:
//! a JSON array of `[doc_id, {sentences, ann_mspan2dranges,
//! ann_mspan2guess_field, recguid_eventname_eventdict_list, ...}]` pairs,
//! where sentences are raw strings tokenised per character.

use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Document, EntityMention, EventRecord, EventSchema};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ReleasedDoc {
    sentences: Vec<String>,
    #[serde(default)]
    ann_valid_mspans: Vec<String>,
    #[serde(default)]
    ann_valid_dranges: Vec<[usize; 3]>,
    ann_mspan2dranges: IndexMap<String, Vec<[usize; 3]>>,
    #[serde(default)]
    ann_mspan2guess_field: IndexMap<String, String>,
    recguid_eventname_eventdict_list: Vec<(serde_json::Value, String, IndexMap<String, Option<String>>)>,
}

fn char_tokens(s: &str) -> Vec<String> {
    s.chars().map(String::from).collect()
}

/// Imports the released layout. Mentions whose range falls outside their
/// sentence (or whose text disagrees with the annotation) are dropped with a
/// warning; record arguments left without a mention become NULL, and a
/// record with no argument left is an error.
pub fn import_chfinann(path: &Path, schema: &EventSchema) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    import_chfinann_str(&text, schema)
}

pub(crate) fn import_chfinann_str(text: &str, schema: &EventSchema) -> Result<Vec<Document>> {
    let raw: Vec<(String, ReleasedDoc)> = serde_json::from_str(text).map_err(|e| Error::json("released corpus", e))?;
    raw.into_iter().map(|(id, d)| convert(id, d, schema)).collect()
}

fn convert(doc_id: String, raw: ReleasedDoc, schema: &EventSchema) -> Result<Document> {
    let sentences: Vec<Vec<String>> = raw.sentences.iter().map(|s| char_tokens(s)).collect();
    let mut mentions = BTreeSet::new();
    for (span, ranges) in &raw.ann_mspan2dranges {
        for &[sent, start, end] in ranges {
            let Some(tokens) = sentences.get(sent).filter(|t| start < end && end <= t.len()) else {
                log::warn!("doc {doc_id}: dropping mention {span:?} at [{sent}, {start}, {end}): outside sentence");
                continue;
            };
            let mut m = EntityMention::from_tokens(sent, start, end, tokens);
            if m.surface != *span {
                log::warn!(
                    "doc {doc_id}: dropping mention {span:?} at [{sent}, {start}, {end}): text is {:?}",
                    m.surface
                );
                continue;
            }
            m.kind = raw.ann_mspan2guess_field.get(span).cloned();
            mentions.insert(m);
        }
    }
    let surfaces: BTreeSet<&str> = mentions.iter().map(|m| m.surface.as_str()).collect();

    let mut records = Vec::with_capacity(raw.recguid_eventname_eventdict_list.len());
    let mut types = BTreeSet::new();
    for (i, (_, name, args)) in raw.recguid_eventname_eventdict_list.iter().enumerate() {
        let field = format!("records[{i}]");
        let t = schema
            .type_id(name)
            .ok_or_else(|| Error::schema(&doc_id, &field, format!("unknown event type {name:?}")))?;
        let roles = schema.roles(t).expect("type id in range");
        if let Some(bad) = args.keys().find(|k| !roles.contains(k)) {
            return Err(Error::schema(
                &doc_id,
                &field,
                format!("role {bad:?} not defined for {name}"),
            ));
        }
        let resolved: Vec<Option<String>> = roles
            .iter()
            .map(|role| match args.get(role).cloned().flatten() {
                Some(a) if surfaces.contains(a.as_str()) => Some(a),
                Some(a) => {
                    log::warn!("doc {doc_id}: {field}.{role}: argument {a:?} has no mention, set to NULL");
                    None
                }
                None => None,
            })
            .collect();
        if resolved.iter().all(Option::is_none) {
            return Err(Error::schema(&doc_id, field, "record has zero resolvable arguments"));
        }
        types.insert(t);
        records.push(EventRecord {
            event_type: t,
            args: resolved,
        });
    }

    let doc = Document {
        doc_id,
        sentences,
        gold_mentions: mentions.into_iter().collect(),
        gold_types: types,
        gold_records: records,
    };
    doc.validate(schema)?;
    Ok(doc)
}

/// Writes documents in the released layout. Sentences are joined without
/// separators, so only character-tokenised documents round-trip exactly.
pub fn write_chfinann(docs: &[Document], schema: &EventSchema) -> String {
    let out: Vec<(String, ReleasedDoc)> = docs
        .iter()
        .map(|d| {
            let mut spans: IndexMap<String, Vec<[usize; 3]>> = IndexMap::new();
            let mut fields = IndexMap::new();
            for m in &d.gold_mentions {
                spans
                    .entry(m.surface.clone())
                    .or_default()
                    .push([m.sentence_index, m.start, m.end]);
                if let Some(k) = &m.kind {
                    fields.insert(m.surface.clone(), k.clone());
                }
            }
            let recs = d
                .gold_records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let roles = schema.roles(r.event_type).expect("record type in schema");
                    (
                        serde_json::Value::from(i),
                        schema.type_name(r.event_type).to_owned(),
                        roles.iter().cloned().zip(r.args.iter().cloned()).collect(),
                    )
                })
                .collect();
            (
                d.doc_id.clone(),
                ReleasedDoc {
                    sentences: d.sentences.iter().map(|s| s.concat()).collect(),
                    ann_valid_mspans: spans.keys().cloned().collect(),
                    ann_valid_dranges: spans.values().flatten().copied().collect(),
                    ann_mspan2dranges: spans,
                    ann_mspan2guess_field: fields,
                    recguid_eventname_eventdict_list: recs,
                },
            )
        })
        .collect();
    serde_json::to_string(&out).expect("released layout serialises")
}
