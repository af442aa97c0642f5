//! Record decoding: each detected event type is expanded into a tree whose
//! depth-`n` nodes pick the argument of role `n`. Every expansion sees the
//! entity, sentence, current-path and tracker-memory matrices through a
//! transformer, and completed records are written back to the tracker.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::EventSchema;
use crate::error::{Error, Result};
use crate::nn::{Dropout, Linear, Lstm, TransformerLayer};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

/// Decoding/tracking variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Full tracker memory, every child above threshold expanded.
    #[default]
    Full,
    /// Full tracker memory, only the best child above threshold expanded.
    Greedy,
    /// Memory holds only records of the type being decoded.
    GitOt,
    /// Memory replaced by an encoding of the current partial path.
    GitOp,
    /// No memory block.
    GitNt,
}

impl DecodeMode {
    pub const ALL: [DecodeMode; 5] = [
        DecodeMode::Full,
        DecodeMode::Greedy,
        DecodeMode::GitOt,
        DecodeMode::GitOp,
        DecodeMode::GitNt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::Full => "full",
            DecodeMode::Greedy => "greedy",
            DecodeMode::GitOt => "git-ot",
            DecodeMode::GitOp => "git-op",
            DecodeMode::GitNt => "git-nt",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown decode mode `{name}`")))
    }

    fn keeps_memory(self) -> bool {
        matches!(self, DecodeMode::Full | DecodeMode::Greedy | DecodeMode::GitOt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub role_threshold: f64,
    /// Most children expanded under one node.
    pub max_children: usize,
    pub dropout: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            ff_dim: 64,
            heads: 2,
            role_threshold: 0.5,
            max_children: 6,
            dropout: 0.1,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "decoder needs layers > 0 and heads dividing {d}"
            )));
        }
        if self.max_children == 0 {
            return Err(Error::Config("max_children must be positive".into()));
        }
        Ok(())
    }
}

const SEG_ENTITY: usize = 0;
const SEG_SENTENCE: usize = 1;
const SEG_PATH: usize = 2;
const SEG_MEMORY: usize = 3;

#[derive(Debug, Clone)]
pub struct DecoderParams {
    /// One row per (type, role), types laid out consecutively.
    pub role_embedding: ParamId,
    pub role_offsets: Vec<usize>,
    pub type_embedding: ParamId,
    pub segment_embedding: ParamId,
    pub na_embedding: ParamId,
    pub record_lstm: Lstm,
    pub layers: Vec<TransformerLayer>,
    pub classifier: Linear,
}

impl DecoderParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        schema: &EventSchema,
        cfg: &DecoderConfig,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let mut role_offsets = Vec::with_capacity(schema.num_types());
        let mut total = 0;
        for t in 0..schema.num_types() {
            role_offsets.push(total);
            total += schema.num_roles(t);
        }
        Self {
            role_embedding: store.add("decoder.role_embedding", Mat::uniform(total, d, 0.1, rng)),
            role_offsets,
            type_embedding: store.add("decoder.type_embedding", Mat::uniform(schema.num_types(), d, 0.1, rng)),
            segment_embedding: store.add("decoder.segment_embedding", Mat::uniform(4, d, 0.1, rng)),
            na_embedding: store.add("decoder.na_embedding", Mat::uniform(1, d, 0.1, rng)),
            record_lstm: Lstm::register(store, "decoder.record_lstm", d, d, rng),
            layers: (0..cfg.layers)
                .map(|l| TransformerLayer::register(store, &format!("decoder.layer{l}"), d, cfg.ff_dim, cfg.heads, rng))
                .collect(),
            classifier: Linear::register(store, "decoder.classifier", d, 1, true, rng),
        }
    }
}

/// Record vector: last LSTM state over the path plus the type embedding.
pub fn encode_record(tape: &mut Tape<'_>, params: &DecoderParams, path: &[Var], event_type: usize) -> Var {
    let h = params.record_lstm.last_hidden(tape, path);
    let table = tape.param(params.type_embedding);
    let ty = tape.gather_rows(table, &[event_type]);
    tape.add(h, ty)
}

/// Inputs of one node expansion.
pub struct NodeQuery<'a> {
    pub event_type: usize,
    pub role: usize,
    /// States of the arguments chosen so far (entity rows or the NA vector).
    pub path: &'a [Var],
    /// Tracker rows visible to this expansion.
    pub memory: &'a [Var],
}

/// `N_e x 1` probabilities that each entity fills `query.role`.
pub fn expand_node(
    tape: &mut Tape<'_>,
    params: &DecoderParams,
    entities: Var,
    sentences: Var,
    query: &NodeQuery<'_>,
    dropout: &mut Dropout,
) -> Var {
    let n_e = tape.shape(entities).0;
    let roles = tape.param(params.role_embedding);
    let role = tape.gather_rows(roles, &[params.role_offsets[query.event_type] + query.role]);
    let segments = tape.param(params.segment_embedding);
    let segment = |tape: &mut Tape<'_>, block: Var, s: usize| {
        let row = tape.slice_rows(segments, s, s + 1);
        tape.add_row(block, row)
    };
    let e_bar = tape.add_row(entities, role);
    let mut blocks = vec![segment(tape, e_bar, SEG_ENTITY), segment(tape, sentences, SEG_SENTENCE)];
    if !query.path.is_empty() {
        let u = tape.concat_rows(query.path);
        blocks.push(segment(tape, u, SEG_PATH));
    }
    if !query.memory.is_empty() {
        let g = tape.concat_rows(query.memory);
        blocks.push(segment(tape, g, SEG_MEMORY));
    }
    let mut x = tape.concat_rows(&blocks);
    for layer in &params.layers {
        x = layer.forward(tape, x, dropout);
    }
    let e_tilde = tape.slice_rows(x, 0, n_e);
    let logits = params.classifier.forward(tape, e_tilde);
    tape.sigmoid(logits)
}

/// Completed records of one document, in completion order, each tagged with
/// its event type.
#[derive(Debug, Default)]
pub struct TrackerMemory {
    entries: Vec<(Var, usize)>,
}

impl TrackerMemory {
    pub fn push(&mut self, record: Var, event_type: usize) {
        self.entries.push((record, event_type));
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn types(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn vectors(&self) -> Vec<Var> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

fn memory_view(
    tape: &mut Tape<'_>,
    params: &DecoderParams,
    mode: DecodeMode,
    memory: &TrackerMemory,
    path: &[Var],
    event_type: usize,
) -> Vec<Var> {
    match mode {
        DecodeMode::Full | DecodeMode::Greedy | DecodeMode::GitOt => memory.vectors(),
        DecodeMode::GitOp if !path.is_empty() => vec![encode_record(tape, params, path, event_type)],
        DecodeMode::GitOp | DecodeMode::GitNt => Vec::new(),
    }
}

fn entity_state(tape: &mut Tape<'_>, params: &DecoderParams, entities: Option<Var>, arg: Option<usize>) -> Var {
    match (arg, entities) {
        (Some(e), Some(ents)) => tape.slice_rows(ents, e, e + 1),
        _ => tape.param(params.na_embedding),
    }
}

/// A decoded record; arguments are entity indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecodedRecord {
    pub event_type: usize,
    pub args: Vec<Option<usize>>,
}

impl DecodedRecord {
    pub fn is_all_na(&self) -> bool {
        self.args.iter().all(Option::is_none)
    }
}

/// What one expansion saw; used for inspection and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionTrace {
    pub event_type: usize,
    pub role: usize,
    pub path_len: usize,
    pub memory_len: usize,
    pub memory_types: Vec<usize>,
    pub children: usize,
}

#[derive(Debug, Default)]
pub struct DecodeOutput {
    pub records: Vec<DecodedRecord>,
    pub trace: Vec<ExpansionTrace>,
    /// Nodes whose children were cut to `max_children`.
    pub capped: usize,
}

/// Child order for a node: entities above `threshold` by descending
/// probability (ties by index), capped; `None` alone when nothing passes.
fn select_children(probs: &[f64], cfg: &DecoderConfig, mode: DecodeMode, capped: &mut usize) -> Vec<Option<usize>> {
    let mut cands: Vec<(usize, f64)> = probs
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, p)| p > cfg.role_threshold)
        .collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if mode == DecodeMode::Greedy {
        cands.truncate(1);
    }
    if cands.len() > cfg.max_children {
        log::debug!("{} children above threshold, keeping {}", cands.len(), cfg.max_children);
        *capped += 1;
        cands.truncate(cfg.max_children);
    }
    if cands.is_empty() {
        vec![None]
    } else {
        cands.into_iter().map(|(e, _)| Some(e)).collect()
    }
}

struct Search<'c, F> {
    params: &'c DecoderParams,
    schema: &'c EventSchema,
    cfg: &'c DecoderConfig,
    mode: DecodeMode,
    entities: Option<Var>,
    scorer: F,
    memory: TrackerMemory,
    out: DecodeOutput,
}

impl<'c, 'p, F> Search<'c, F>
where
    F: FnMut(&mut Tape<'p>, &NodeQuery<'_>) -> Vec<f64>,
{
    fn visit(&mut self, tape: &mut Tape<'p>, t: usize, args: &mut Vec<Option<usize>>, path: &mut Vec<Var>) {
        let role = args.len();
        if role == self.schema.num_roles(t) {
            if self.mode.keeps_memory() {
                let g = encode_record(tape, self.params, path, t);
                self.memory.push(g, t);
            }
            let rec = DecodedRecord {
                event_type: t,
                args: args.clone(),
            };
            if !self.out.records.contains(&rec) {
                self.out.records.push(rec);
            }
            return;
        }
        let memory = memory_view(tape, self.params, self.mode, &self.memory, path, t);
        let probs = if self.entities.is_some() {
            let query = NodeQuery {
                event_type: t,
                role,
                path,
                memory: &memory,
            };
            (self.scorer)(tape, &query)
        } else {
            Vec::new()
        };
        let children = select_children(&probs, self.cfg, self.mode, &mut self.out.capped);
        self.out.trace.push(ExpansionTrace {
            event_type: t,
            role,
            path_len: path.len(),
            memory_len: memory.len(),
            memory_types: if self.mode.keeps_memory() {
                self.memory.types()
            } else {
                Vec::new()
            },
            children: children.len(),
        });
        for child in children {
            let state = entity_state(tape, self.params, self.entities, child);
            args.push(child);
            path.push(state);
            self.visit(tape, t, args, path);
            args.pop();
            path.pop();
        }
    }
}

/// Expands every type in `types` (in the given order) with a custom node
/// scorer returning one probability per entity.
#[allow(clippy::too_many_arguments)]
pub fn decode_with<'p, F>(
    tape: &mut Tape<'p>,
    params: &DecoderParams,
    entities: Option<Var>,
    types: &[usize],
    schema: &EventSchema,
    cfg: &DecoderConfig,
    mode: DecodeMode,
    scorer: F,
) -> DecodeOutput
where
    F: FnMut(&mut Tape<'p>, &NodeQuery<'_>) -> Vec<f64>,
{
    let mut search = Search {
        params,
        schema,
        cfg,
        mode,
        entities,
        scorer,
        memory: TrackerMemory::default(),
        out: DecodeOutput::default(),
    };
    for &t in types {
        if mode == DecodeMode::GitOt {
            search.memory.clear();
        }
        search.visit(tape, t, &mut Vec::new(), &mut Vec::new());
    }
    search.out
}

/// Decodes records for the detected `types` with the trained expansion
/// network. Records whose arguments are all NA are kept here.
#[allow(clippy::too_many_arguments)]
pub fn decode_records<'p>(
    tape: &mut Tape<'p>,
    params: &DecoderParams,
    entities: Option<Var>,
    sentences: Var,
    types: &[usize],
    schema: &EventSchema,
    cfg: &DecoderConfig,
    mode: DecodeMode,
) -> DecodeOutput {
    let mut dropout = Dropout::disabled();
    decode_with(tape, params, entities, types, schema, cfg, mode, |tape, q| {
        let ents = entities.expect("scorer runs only with entities");
        let p = expand_node(tape, params, ents, sentences, q, &mut dropout);
        tape.value(p).data().to_vec()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ChildKey {
    Entity(usize),
    Na,
}

impl ChildKey {
    fn arg(self) -> Option<usize> {
        match self {
            ChildKey::Entity(e) => Some(e),
            ChildKey::Na => None,
        }
    }
}

/// Gold records of one type merged into a prefix tree.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldTree {
    children: BTreeMap<ChildKey, GoldTree>,
}

impl GoldTree {
    /// Builds the tree from argument paths (entity indices), each of length
    /// `num_roles`. Identical paths collapse.
    pub fn new(paths: &[Vec<Option<usize>>]) -> Self {
        let mut root = GoldTree::default();
        for p in paths {
            let mut node = &mut root;
            for &a in p {
                let key = a.map_or(ChildKey::Na, ChildKey::Entity);
                node = node.children.entry(key).or_default();
            }
        }
        root
    }

    pub fn nodes_at_depth(&self, depth: usize) -> usize {
        if depth == 0 {
            1
        } else {
            self.children.values().map(|c| c.nodes_at_depth(depth - 1)).sum()
        }
    }

    /// Root-to-leaf argument paths in key order.
    pub fn paths(&self) -> Vec<Vec<Option<usize>>> {
        if self.children.is_empty() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for (k, c) in &self.children {
            for mut p in c.paths() {
                p.insert(0, k.arg());
                out.push(p);
            }
        }
        out
    }

    fn entity_targets(&self, n_e: usize) -> Vec<f64> {
        let mut y = vec![0.0; n_e];
        for k in self.children.keys() {
            if let ChildKey::Entity(e) = k {
                y[*e] = 1.0;
            }
        }
        y
    }
}

struct Teacher<'c, 'd> {
    params: &'c DecoderParams,
    schema: &'c EventSchema,
    mode: DecodeMode,
    entities: Option<Var>,
    sentences: Var,
    dropout: &'d mut Dropout,
    memory: TrackerMemory,
    terms: Vec<Var>,
}

impl Teacher<'_, '_> {
    fn visit(&mut self, tape: &mut Tape<'_>, node: &GoldTree, t: usize, path: &mut Vec<Var>) {
        let role = path.len();
        if role == self.schema.num_roles(t) {
            if self.mode.keeps_memory() {
                let g = encode_record(tape, self.params, path, t);
                self.memory.push(g, t);
            }
            return;
        }
        let mut order: Vec<ChildKey> = node.children.keys().copied().collect();
        if let Some(ents) = self.entities {
            let n_e = tape.shape(ents).0;
            let memory = memory_view(tape, self.params, self.mode, &self.memory, path, t);
            let query = NodeQuery {
                event_type: t,
                role,
                path,
                memory: &memory,
            };
            let probs = expand_node(tape, self.params, ents, self.sentences, &query, self.dropout);
            self.terms.push(tape.bce(probs, &node.entity_targets(n_e)));
            let p = tape.value(probs).data().to_vec();
            order.sort_by(|a, b| match (a, b) {
                (ChildKey::Entity(x), ChildKey::Entity(y)) => p[*y].total_cmp(&p[*x]).then(x.cmp(y)),
                _ => a.cmp(b),
            });
        }
        for key in order {
            let state = entity_state(tape, self.params, self.entities, key.arg());
            path.push(state);
            self.visit(tape, &node.children[&key], t, path);
            path.pop();
        }
    }
}

/// Teacher-forced record loss: summed binary cross-entropy over every gold
/// tree node, with memory built from gold paths in inference order.
/// `gold` holds `(type, tree)` pairs in decoding order. Returns `None` when
/// no expansion happened.
#[allow(clippy::too_many_arguments)]
pub fn record_loss(
    tape: &mut Tape<'_>,
    params: &DecoderParams,
    entities: Option<Var>,
    sentences: Var,
    gold: &[(usize, GoldTree)],
    schema: &EventSchema,
    mode: DecodeMode,
    dropout: &mut Dropout,
) -> Option<Var> {
    let mut teacher = Teacher {
        params,
        schema,
        mode,
        entities,
        sentences,
        dropout,
        memory: TrackerMemory::default(),
        terms: Vec::new(),
    };
    for (t, tree) in gold {
        if mode == DecodeMode::GitOt {
            teacher.memory.clear();
        }
        teacher.visit(tape, tree, *t, &mut Vec::new());
    }
    let terms = teacher.terms;
    (!terms.is_empty()).then(|| tape.sum_scalars(&terms))
}
