//! Seeded synthetic corpora with controllable multi-record and
//! argument-scattering structure.
//!
//! Every record gets a trigger token `t{type}` in its anchor sentence. Each
//! filled role places a mention of its entity, preceded by the cue token
//! `c{type}_{role}`, in a sentence inside the record's window of
//! `scatter_radius` consecutive sentences. Entities are runs of `E{n}`
//! tokens; filler words are `w{n}`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, EntityMention, EventRecord, EventSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_types: usize,
    pub roles_per_type: usize,
    pub max_records_per_doc: usize,
    /// Exactly `round(fraction * num_docs)` documents get 2..=max records.
    pub multi_record_fraction: f64,
    /// Number of consecutive sentences a record's arguments may occupy.
    pub scatter_radius: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Number of distinct entity tokens.
    pub entity_pool: usize,
    pub max_entity_tokens: usize,
    pub null_role_prob: f64,
    /// Probability that an argument gets a second, cue-less mention in its
    /// record window.
    pub repeat_mention_prob: f64,
    pub distractors_per_doc: usize,
    /// Probability that a later record in a multi-record document reuses the
    /// first role's entity of the previous record (and its window).
    pub shared_arg_prob: f64,
    pub max_sentence_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_docs: 50,
            num_types: 2,
            roles_per_type: 3,
            max_records_per_doc: 2,
            multi_record_fraction: 0.3,
            scatter_radius: 3,
            min_sentences: 4,
            max_sentences: 6,
            min_filler: 3,
            max_filler: 6,
            vocab_size: 50,
            entity_pool: 60,
            max_entity_tokens: 2,
            null_role_prob: 0.1,
            repeat_mention_prob: 0.3,
            distractors_per_doc: 1,
            shared_arg_prob: 0.5,
            max_sentence_len: 64,
        }
    }
}

impl SynthConfig {
    pub fn schema(&self) -> Result<EventSchema> {
        EventSchema::synthetic(self.num_types, self.roles_per_type)
    }

    pub fn num_multi_record_docs(&self) -> usize {
        (self.multi_record_fraction * self.num_docs as f64).round() as usize
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Infeasible(m.to_owned()));
        if self.num_types == 0 || self.roles_per_type == 0 {
            return bad("need at least one event type and one role");
        }
        if self.max_records_per_doc == 0 {
            return bad("max_records_per_doc must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.multi_record_fraction) {
            return bad("multi_record_fraction must lie in [0, 1]");
        }
        if self.num_multi_record_docs() > 0 && self.max_records_per_doc < 2 {
            return bad("multi-record documents requested but max_records_per_doc < 2");
        }
        if self.scatter_radius == 0 {
            return bad("scatter_radius must be at least 1");
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return bad("need 1 <= min_sentences <= max_sentences");
        }
        if self.min_filler > self.max_filler {
            return bad("need min_filler <= max_filler");
        }
        if self.vocab_size == 0 || self.entity_pool == 0 || self.max_entity_tokens == 0 {
            return bad("vocab_size, entity_pool and max_entity_tokens must be positive");
        }
        for p in [self.null_role_prob, self.repeat_mention_prob, self.shared_arg_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        let per_doc = self.max_records_per_doc * self.roles_per_type + self.distractors_per_doc;
        let distinct: f64 = (1..=self.max_entity_tokens)
            .map(|k| (self.entity_pool as f64).powi(k as i32))
            .sum();
        if per_doc as f64 > distinct {
            return Err(Error::Infeasible(format!(
                "{per_doc} distinct entities per document needed but only {distinct} surfaces exist"
            )));
        }
        Ok(())
    }
}

enum Unit {
    Word(String),
    Mention { cue: Option<String>, tokens: Vec<String> },
}

/// Generates `config.num_docs` documents; a pure function of `(config, seed)`.
pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<Vec<Document>> {
    config.check()?;
    let schema = config.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..config.num_docs).collect();
    order.shuffle(&mut rng);
    let multi: BTreeSet<usize> = order[..config.num_multi_record_docs()].iter().copied().collect();
    (0..config.num_docs)
        .map(|i| {
            let doc = generate_doc(config, &mut rng, i, multi.contains(&i))?;
            doc.validate(&schema)?;
            Ok(doc)
        })
        .collect()
}

fn generate_doc(cfg: &SynthConfig, rng: &mut ChaCha8Rng, index: usize, multi: bool) -> Result<Document> {
    let n_sent = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
    let span = cfg.scatter_radius.min(n_sent);
    let n_records = if multi {
        rng.random_range(2..=cfg.max_records_per_doc)
    } else {
        1
    };
    let mut units: Vec<Vec<Unit>> = (0..n_sent).map(|_| Vec::new()).collect();
    let mut used: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut fresh_entity = |rng: &mut ChaCha8Rng| -> Result<Vec<String>> {
        for _ in 0..1000 {
            let len = rng.random_range(1..=cfg.max_entity_tokens);
            let toks: Vec<String> = (0..len)
                .map(|_| format!("E{}", rng.random_range(0..cfg.entity_pool)))
                .collect();
            if used.insert(toks.clone()) {
                return Ok(toks);
            }
        }
        Err(Error::Infeasible("entity pool exhausted".into()))
    };

    let mut records: Vec<(usize, Vec<Option<Vec<String>>>)> = Vec::with_capacity(n_records);
    let mut prev: Option<(usize, Option<Vec<String>>)> = None;
    for _ in 0..n_records {
        let t = rng.random_range(0..cfg.num_types);
        let share = prev.as_ref().and_then(|(anchor, first)| {
            first
                .clone()
                .filter(|_| rng.random_bool(cfg.shared_arg_prob))
                .map(|e| (*anchor, e))
        });
        let anchor = match &share {
            Some((a, _)) => *a,
            None => rng.random_range(0..=n_sent - span),
        };
        let mut filled: Vec<bool> = (0..cfg.roles_per_type)
            .map(|_| !rng.random_bool(cfg.null_role_prob))
            .collect();
        if share.is_some() {
            filled[0] = true;
        }
        if !filled.iter().any(|&f| f) {
            filled[0] = true;
        }
        let mut args = Vec::with_capacity(cfg.roles_per_type);
        for (r, &f) in filled.iter().enumerate() {
            if !f {
                args.push(None);
                continue;
            }
            let entity = match (&share, r) {
                (Some((_, e)), 0) => e.clone(),
                _ => fresh_entity(rng)?,
            };
            let s = anchor + rng.random_range(0..span);
            units[s].push(Unit::Mention {
                cue: Some(format!("c{t}_{r}")),
                tokens: entity.clone(),
            });
            if rng.random_bool(cfg.repeat_mention_prob) {
                let s = anchor + rng.random_range(0..span);
                units[s].push(Unit::Mention {
                    cue: None,
                    tokens: entity.clone(),
                });
            }
            args.push(Some(entity));
        }
        units[anchor].push(Unit::Word(format!("t{t}")));
        prev = Some((anchor, args[0].clone()));
        records.push((t, args));
    }
    for _ in 0..cfg.distractors_per_doc {
        let tokens = fresh_entity(rng)?;
        let s = rng.random_range(0..n_sent);
        units[s].push(Unit::Mention { cue: None, tokens });
    }

    let mut sentences = Vec::with_capacity(n_sent);
    let mut mentions = Vec::new();
    for (si, mut su) in units.into_iter().enumerate() {
        let filler = rng.random_range(cfg.min_filler..=cfg.max_filler);
        for _ in 0..filler {
            su.push(Unit::Word(format!("w{}", rng.random_range(0..cfg.vocab_size))));
        }
        if su.is_empty() {
            su.push(Unit::Word(format!("w{}", rng.random_range(0..cfg.vocab_size))));
        }
        su.shuffle(rng);
        let mut tokens: Vec<String> = Vec::new();
        for u in su {
            match u {
                Unit::Word(w) => tokens.push(w),
                Unit::Mention { cue, tokens: ent } => {
                    tokens.extend(cue);
                    let start = tokens.len();
                    tokens.extend(ent);
                    mentions.push((si, start, tokens.len()));
                }
            }
        }
        if tokens.len() > cfg.max_sentence_len {
            return Err(Error::Infeasible(format!(
                "sentence of {} tokens exceeds max_sentence_len {}",
                tokens.len(),
                cfg.max_sentence_len
            )));
        }
        sentences.push(tokens);
    }
    let mut gold_mentions: Vec<EntityMention> = mentions
        .into_iter()
        .map(|(s, a, b)| EntityMention::from_tokens(s, a, b, &sentences[s]))
        .collect();
    gold_mentions.sort();

    let gold_records: Vec<EventRecord> = records
        .into_iter()
        .map(|(t, args)| EventRecord {
            event_type: t,
            args: args.into_iter().map(|a| a.map(|toks| toks.concat())).collect(),
        })
        .collect();
    Ok(Document {
        doc_id: format!("synth-{index:05}"),
        sentences,
        gold_mentions,
        gold_types: gold_records.iter().map(|r| r.event_type).collect(),
        gold_records,
    })
}

/// Counts recomputed from generated documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthAudit {
    pub num_docs: usize,
    pub num_records: usize,
    pub multi_record_docs: usize,
    pub max_records_in_doc: usize,
    /// Histogram: involved-sentence count -> number of records.
    pub records_by_involved_sentences: BTreeMap<usize, usize>,
    pub records_per_type: BTreeMap<usize, usize>,
    pub num_mentions: usize,
}

impl SynthAudit {
    pub fn max_involved_sentences(&self) -> usize {
        self.records_by_involved_sentences.keys().copied().max().unwrap_or(0)
    }

    pub fn cross_sentence_records(&self) -> usize {
        self.records_by_involved_sentences
            .iter()
            .filter(|(&k, _)| k > 1)
            .map(|(_, &v)| v)
            .sum()
    }
}

pub fn audit_corpus(docs: &[Document]) -> SynthAudit {
    let mut audit = SynthAudit {
        num_docs: docs.len(),
        num_records: 0,
        multi_record_docs: 0,
        max_records_in_doc: 0,
        records_by_involved_sentences: BTreeMap::new(),
        records_per_type: BTreeMap::new(),
        num_mentions: 0,
    };
    for d in docs {
        let n = d.gold_records.len();
        audit.num_records += n;
        audit.num_mentions += d.gold_mentions.len();
        audit.max_records_in_doc = audit.max_records_in_doc.max(n);
        if n > 1 {
            audit.multi_record_docs += 1;
        }
        for r in &d.gold_records {
            *audit
                .records_by_involved_sentences
                .entry(d.involved_sentences(r).len())
                .or_default() += 1;
            *audit.records_per_type.entry(r.event_type).or_default() += 1;
        }
    }
    audit
}
