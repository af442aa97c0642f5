//! The joint extraction model: encoder, CRF tagger, graph, type detector and
//! record decoder sharing one parameter store.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{to_bio, Document, EntityMention, EventRecord, EventSchema, LabelScheme};
use crate::detect::{detect_loss, detect_types, detected, DetectConfig, DetectParams};
use crate::encoder::{Encoder, EncoderConfig, Vocab};
use crate::error::{Error, Result};
use crate::evalkit::Prediction;
use crate::hetgraph::{
    build_graph, coref_by_string, init_node_states, pool_entities, rgcn_forward, EdgeType, GcnConfig, GcnParams,
    GraphAblation, HetGraph,
};
use crate::ner::{extract_mentions, viterbi_decode, NerParams};
use crate::nn::Dropout;
use crate::params::ParamStore;
use crate::recdec::{decode_records, record_loss, DecodeMode, DecoderConfig, DecoderParams, GoldTree};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gcn: GcnConfig,
    pub detect: DetectConfig,
    pub decoder: DecoderConfig,
    /// Tag mentions with their kind (`B-kind`/`I-kind`) instead of plain BIO.
    pub typed_tags: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gcn.validate()?;
        self.decoder.validate(self.encoder.hidden_dim)
    }
}

/// Graph and decoder variant of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub graph: GraphAblation,
    pub decode_mode: DecodeMode,
}

impl Ablation {
    pub const VARIANTS: [&'static str; 10] = [
        "full",
        "no-ss",
        "no-sm",
        "no-mm-intra",
        "no-mm-inter",
        "no-graph",
        "git-ot",
        "git-op",
        "git-nt",
        "greedy",
    ];

    pub fn variant(name: &str) -> Result<Self> {
        let mut a = Ablation::default();
        let edge = |k| {
            let mut g = GraphAblation::default();
            g.disable(k);
            g
        };
        match name {
            "full" => {}
            "no-ss" => a.graph = edge(EdgeType::Ss),
            "no-sm" => a.graph = edge(EdgeType::Sm),
            "no-mm-intra" => a.graph = edge(EdgeType::MmIntra),
            "no-mm-inter" => a.graph = edge(EdgeType::MmInter),
            "no-graph" => a.graph.graph = false,
            other => a.decode_mode = DecodeMode::from_name(other)?,
        }
        Ok(a)
    }
}

/// Loss weights of the three sub-tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub ner: f64,
    pub detect: f64,
    pub record: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ner: 0.05,
            detect: 1.0,
            record: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.ner, self.detect, self.record]
            .iter()
            .any(|&l| !(l >= 0.0 && l.is_finite()))
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `ner_w * ner + detect_w * detect + record_w * record`; any non-finite part
/// is an error.
pub fn total_loss(ner: f64, detect: f64, record: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("ner", ner), ("detect", detect), ("record", record)] {
        if !v.is_finite() {
            return Err(Error::Diverged(format!("{name} loss is {v}")));
        }
    }
    Ok(w.ner * ner + w.detect * detect + w.record * record)
}

/// Loss pieces of one document's forward pass.
pub struct DocLoss {
    pub total: Var,
    pub ner: f64,
    pub detect: f64,
    pub record: f64,
    /// Gold arguments with no matching entity among the mentions used.
    pub unmatched_args: usize,
}

/// Forward-pass intermediates shared by training and prediction.
struct Trunk {
    mentions: Vec<EntityMention>,
    graph: HetGraph,
    surfaces: Vec<String>,
    sentences: Var,
    entities: Option<Var>,
    ner_loss: Option<Var>,
}

pub struct DropoutSeeds {
    pub encoder: u64,
    pub gcn: u64,
    pub decoder: u64,
}

pub struct GitModel {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub schema: EventSchema,
    pub vocab: Vocab,
    pub scheme: LabelScheme,
    pub store: ParamStore,
    encoder: Encoder,
    ner: NerParams,
    gcn: GcnParams,
    detect: DetectParams,
    decoder: DecoderParams,
}

impl GitModel {
    pub fn new(
        config: ModelConfig,
        ablation: Ablation,
        schema: EventSchema,
        vocab: Vocab,
        scheme: LabelScheme,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.encoder.hidden_dim;
        let encoder = Encoder::register(&mut store, &config.encoder, vocab.len(), &mut rng);
        let ner = NerParams::register(&mut store, d, scheme.num_labels(), &mut rng);
        let gcn = GcnParams::register(&mut store, &config.gcn, d, &mut rng);
        let detect = DetectParams::register(&mut store, schema.num_types(), d, config.encoder.heads, &mut rng);
        let decoder = DecoderParams::register(&mut store, &schema, &config.decoder, d, &mut rng);
        Ok(Self {
            config,
            ablation,
            schema,
            vocab,
            scheme,
            store,
            encoder,
            ner,
            gcn,
            detect,
            decoder,
        })
    }

    /// Label scheme for `docs`: untyped BIO, or one kind per distinct
    /// mention kind when `typed`.
    pub fn label_scheme(docs: &[Document], typed: bool) -> LabelScheme {
        if !typed {
            return LabelScheme::untyped();
        }
        let kinds: std::collections::BTreeSet<String> = docs
            .iter()
            .flat_map(|d| d.gold_mentions.iter().filter_map(|m| m.kind.clone()))
            .collect();
        LabelScheme::typed(kinds.into_iter().collect())
    }

    fn trunk(
        &self,
        tape: &mut Tape<'_>,
        doc: &Document,
        predicted_mentions: bool,
        gold_labels: Option<&[Vec<usize>]>,
        seeds: Option<&DropoutSeeds>,
    ) -> Result<Trunk> {
        let rate = |r: f64, s: Option<u64>| s.map_or_else(Dropout::disabled, |s| Dropout::new(r, s));
        let mut enc_drop = rate(self.config.encoder.dropout, seeds.map(|s| s.encoder));
        let mut gcn_drop = rate(self.config.gcn.dropout, seeds.map(|s| s.gcn));
        let crf = self.ner.crf_values(&self.store);
        let mut reps = Vec::with_capacity(doc.sentences.len());
        let mut lens = Vec::with_capacity(doc.sentences.len());
        let mut ner_terms = Vec::new();
        let mut mentions = Vec::new();
        for (i, sent) in doc.sentences.iter().enumerate() {
            let ids = self.vocab.ids(sent);
            let (x, truncated) = self.encoder.encode_sentence(tape, &ids, &mut enc_drop);
            let len = tape.shape(x).0;
            if truncated {
                log::warn!("{}: sentence {i} truncated to {len} tokens", doc.doc_id);
            }
            let em = self.ner.emissions(tape, x);
            if let Some(gold) = gold_labels {
                ner_terms.push(self.ner.loss(tape, em, &gold[i][..len]));
            }
            if predicted_mentions {
                let labels = viterbi_decode(tape.value(em), &crf)?;
                mentions.extend(extract_mentions(&labels, i, &sent[..len], &self.scheme));
            }
            reps.push(x);
            lens.push(len);
        }
        if !predicted_mentions {
            mentions = doc
                .gold_mentions
                .iter()
                .filter(|m| m.end <= lens[m.sentence_index])
                .cloned()
                .collect();
        }
        let clusters = coref_by_string(&mentions);
        let surfaces = clusters.iter().map(|c| c.surface.clone()).collect();
        let graph = build_graph(doc.sentences.len(), &clusters);
        let states0 = init_node_states(tape, &reps, &graph, &self.gcn);
        let out = rgcn_forward(tape, &graph, states0, &self.gcn, &self.ablation.graph, &mut gcn_drop);
        let entities = pool_entities(tape, out.nodes, &graph);
        let ner_loss = (!ner_terms.is_empty()).then(|| tape.sum_scalars(&ner_terms));
        Ok(Trunk {
            mentions,
            graph,
            surfaces,
            sentences: out.sentences,
            entities,
            ner_loss,
        })
    }

    /// Weighted training loss of one document. Uses predicted mentions for
    /// the graph when `predicted_mentions`, gold mentions otherwise.
    pub fn doc_loss(
        &self,
        tape: &mut Tape<'_>,
        doc: &Document,
        predicted_mentions: bool,
        weights: &LossWeights,
        seeds: Option<&DropoutSeeds>,
    ) -> Result<DocLoss> {
        let gold_labels = to_bio(doc, &self.scheme);
        let trunk = self.trunk(tape, doc, predicted_mentions, Some(&gold_labels), seeds)?;
        let mut terms = Vec::new();
        let ner = trunk.ner_loss.expect("documents have sentences");
        let ner_value = tape.value(ner).scalar();
        if weights.ner > 0.0 {
            terms.push(tape.scale(ner, weights.ner));
        }
        let mut detect_value = 0.0;
        if weights.detect > 0.0 {
            let probs = detect_types(tape, trunk.sentences, &self.detect);
            let gold: Vec<bool> = (0..self.schema.num_types())
                .map(|t| doc.gold_types.contains(&t))
                .collect();
            let l = detect_loss(tape, probs, &gold);
            detect_value = tape.value(l).scalar();
            terms.push(tape.scale(l, weights.detect));
        }
        let mut record_value = 0.0;
        let mut unmatched_args = 0;
        if weights.record > 0.0 {
            let index: HashMap<&str, usize> = trunk
                .surfaces
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            let mut gold = Vec::new();
            for &t in &doc.gold_types {
                let paths: Vec<Vec<Option<usize>>> = doc
                    .gold_records
                    .iter()
                    .filter(|r| r.event_type == t)
                    .map(|r| {
                        r.args
                            .iter()
                            .map(|a| {
                                let a = a.as_deref()?;
                                let hit = index.get(a).copied();
                                unmatched_args += usize::from(hit.is_none());
                                hit
                            })
                            .collect()
                    })
                    .collect();
                gold.push((t, GoldTree::new(&paths)));
            }
            let mut dec_drop = seeds.map_or_else(Dropout::disabled, |s| {
                Dropout::new(self.config.decoder.dropout, s.decoder)
            });
            let mode = self.ablation.decode_mode;
            if let Some(l) = record_loss(
                tape,
                &self.decoder,
                trunk.entities,
                trunk.sentences,
                &gold,
                &self.schema,
                mode,
                &mut dec_drop,
            ) {
                record_value = tape.value(l).scalar();
                terms.push(tape.scale(l, weights.record));
            }
        }
        total_loss(ner_value, detect_value, record_value, weights)?;
        let total = tape.sum_scalars(&terms);
        Ok(DocLoss {
            total,
            ner: ner_value,
            detect: detect_value,
            record: record_value,
            unmatched_args,
        })
    }

    /// End-to-end prediction from predicted mentions.
    pub fn predict(&self, doc: &Document) -> Result<Prediction> {
        let mut tape = Tape::new(&self.store);
        let trunk = self.trunk(&mut tape, doc, true, None, None)?;
        let probs = detect_types(&mut tape, trunk.sentences, &self.detect);
        let types = detected(tape.value(probs).data(), self.config.detect.threshold);
        let out = decode_records(
            &mut tape,
            &self.decoder,
            trunk.entities,
            trunk.sentences,
            &types,
            &self.schema,
            &self.config.decoder,
            self.ablation.decode_mode,
        );
        let records = out
            .records
            .into_iter()
            .filter(|r| !r.is_all_na())
            .map(|r| EventRecord {
                event_type: r.event_type,
                args: r.args.iter().map(|a| a.map(|e| trunk.surfaces[e].clone())).collect(),
            })
            .collect();
        debug_assert_eq!(trunk.graph.mentions.len(), trunk.mentions.len());
        Ok(Prediction {
            doc_id: doc.doc_id.clone(),
            types: types.into_iter().collect(),
            records,
            mentions: Some(trunk.mentions),
        })
    }

    /// Heterogeneous graph of `doc` over predicted mentions.
    pub fn predicted_graph(&self, doc: &Document) -> Result<HetGraph> {
        let mut tape = Tape::new(&self.store);
        Ok(self.trunk(&mut tape, doc, true, None, None)?.graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_is_the_weighted_sum() {
        let w = LossWeights {
            ner: 0.0,
            detect: 0.0,
            record: 1.0,
        };
        assert_eq!(total_loss(3.0, 4.0, 5.0, &w).unwrap(), 5.0);
        let w = LossWeights::default();
        assert_eq!(total_loss(2.0, 3.0, 4.0, &w).unwrap(), 0.05 * 2.0 + 3.0 + 4.0);
        assert!(total_loss(f64::NAN, 0.0, 0.0, &w).is_err());
    }

    #[test]
    fn every_variant_name_parses() {
        for v in Ablation::VARIANTS {
            Ablation::variant(v).unwrap();
        }
        assert!(!Ablation::variant("no-graph").unwrap().graph.graph);
        assert!(!Ablation::variant("no-mm-inter").unwrap().graph.mm_inter);
        assert_eq!(Ablation::variant("git-op").unwrap().decode_mode, DecodeMode::GitOp);
        assert!(Ablation::variant("bogus").is_err());
    }
}
