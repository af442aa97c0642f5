//! Heterogeneous sentence/mention interaction graph and its relational
//! graph convolution.
//!
//! Node order: sentence nodes in document order, then mention nodes sorted
//! by `(sentence, start, end)`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{Entity, EntityMention};
use crate::error::{Error, Result};
use crate::nn::Dropout;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    /// Every pair of sentences.
    Ss,
    /// Mention to its containing sentence.
    Sm,
    /// Mentions sharing a sentence.
    MmIntra,
    /// Mentions of one entity.
    MmInter,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::Ss, EdgeType::Sm, EdgeType::MmIntra, EdgeType::MmInter];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            EdgeType::Ss => "ss",
            EdgeType::Sm => "sm",
            EdgeType::MmIntra => "mm_intra",
            EdgeType::MmInter => "mm_inter",
        }
    }
}

/// Partitions mentions by exact surface equality. Clusters are ordered by
/// first occurrence; duplicate spans are dropped.
pub fn coref_by_string(mentions: &[EntityMention]) -> Vec<Entity> {
    let mut by_surface: HashMap<&str, usize> = HashMap::new();
    let mut entities: Vec<Entity> = Vec::new();
    for m in mentions {
        let idx = *by_surface.entry(m.surface.as_str()).or_insert_with(|| {
            entities.push(Entity {
                surface: m.surface.clone(),
                mentions: Vec::new(),
            });
            entities.len() - 1
        });
        let e = &mut entities[idx];
        if !e.mentions.iter().any(|x| x.span_key() == m.span_key()) {
            e.mentions.push(m.clone());
        }
    }
    entities
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph {
    pub num_sentences: usize,
    /// Mention nodes in node order.
    pub mentions: Vec<EntityMention>,
    /// Entity (cluster) index of each mention node.
    pub mention_entity: Vec<usize>,
    pub num_entities: usize,
    /// Undirected edges `(i, j)`, `i < j`, per [`EdgeType::index`].
    pub edges: [Vec<(usize, usize)>; 4],
}

impl HetGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_sentences + self.mentions.len()
    }

    pub fn edge_count(&self, k: EdgeType) -> usize {
        self.edges[k.index()].len()
    }

    /// Mention node indices of each entity, in node order.
    pub fn entity_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_entities];
        for (i, &e) in self.mention_entity.iter().enumerate() {
            out[e].push(self.num_sentences + i);
        }
        out
    }

    /// Row-normalised adjacency with self loops for edge type `k`:
    /// `A[u][v] = 1 / (|N_k(u)| + 1)` for `v` in `N_k(u) ∪ {u}`.
    pub fn normalized_adjacency(&self, k: EdgeType) -> Mat {
        let n = self.num_nodes();
        let mut neighbours: Vec<Vec<usize>> = (0..n).map(|u| vec![u]).collect();
        for &(i, j) in &self.edges[k.index()] {
            neighbours[i].push(j);
            neighbours[j].push(i);
        }
        let mut a = Mat::zeros(n, n);
        for (u, ns) in neighbours.iter().enumerate() {
            let w = 1.0 / ns.len() as f64;
            for &v in ns {
                a[(u, v)] += w;
            }
        }
        a
    }

    /// Removes all edges of type `k`.
    pub fn without(&self, k: EdgeType) -> HetGraph {
        let mut g = self.clone();
        g.edges[k.index()].clear();
        g
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut nodes: Vec<serde_json::Value> = (0..self.num_sentences)
            .map(|i| serde_json::json!({"kind": "sentence", "index": i}))
            .collect();
        for (m, e) in self.mentions.iter().zip(&self.mention_entity) {
            nodes.push(serde_json::json!({
                "kind": "mention", "sent": m.sentence_index, "start": m.start,
                "end": m.end, "surface": m.surface, "entity": e,
            }));
        }
        let mut edges = serde_json::Map::new();
        for k in EdgeType::ALL {
            edges.insert(k.key().into(), serde_json::json!(self.edges[k.index()]));
        }
        serde_json::json!({"nodes": nodes, "edges": edges})
    }
}

/// Builds the four edge relations over `num_sentences` sentence nodes and
/// the mentions of `clusters`. A mention pair may carry both an intra and an
/// inter edge.
pub fn build_graph(num_sentences: usize, clusters: &[Entity]) -> HetGraph {
    let mut tagged: Vec<(EntityMention, usize)> = clusters
        .iter()
        .enumerate()
        .flat_map(|(e, c)| c.mentions.iter().map(move |m| (m.clone(), e)))
        .collect();
    tagged.sort_by(|a, b| a.0.span_key().cmp(&b.0.span_key()).then(a.1.cmp(&b.1)));
    let (mentions, mention_entity): (Vec<_>, Vec<_>) = tagged.into_iter().unzip();
    let ns = num_sentences;
    let mut edges: [Vec<(usize, usize)>; 4] = Default::default();
    for i in 0..ns {
        for j in i + 1..ns {
            edges[EdgeType::Ss.index()].push((i, j));
        }
    }
    for (k, m) in mentions.iter().enumerate() {
        debug_assert!(m.sentence_index < ns);
        edges[EdgeType::Sm.index()].push((m.sentence_index, ns + k));
    }
    for a in 0..mentions.len() {
        for b in a + 1..mentions.len() {
            if mentions[a].sentence_index == mentions[b].sentence_index {
                edges[EdgeType::MmIntra.index()].push((ns + a, ns + b));
            }
            if mention_entity[a] == mention_entity[b] {
                edges[EdgeType::MmInter.index()].push((ns + a, ns + b));
            }
        }
    }
    HetGraph {
        num_sentences,
        mentions,
        mention_entity,
        num_entities: clusters.len(),
        edges,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub layers: usize,
    /// Size of the sentence-position table; later sentences share the last row.
    pub max_sentences: usize,
    /// Dropout after each convolution's ReLU.
    pub dropout: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            max_sentences: 64,
            dropout: 0.1,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("GCN needs at least one layer".into()));
        }
        if self.max_sentences == 0 {
            return Err(Error::Config("max_sentences must be positive".into()));
        }
        Ok(())
    }
}

/// Which relations take part in the convolution. A disabled relation is
/// removed entirely, self term included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphAblation {
    pub ss: bool,
    pub sm: bool,
    pub mm_intra: bool,
    pub mm_inter: bool,
    /// `false` skips the convolution: final states are the initial states.
    pub graph: bool,
}

impl Default for GraphAblation {
    fn default() -> Self {
        Self {
            ss: true,
            sm: true,
            mm_intra: true,
            mm_inter: true,
            graph: true,
        }
    }
}

impl GraphAblation {
    pub fn enabled(&self, k: EdgeType) -> bool {
        match k {
            EdgeType::Ss => self.ss,
            EdgeType::Sm => self.sm,
            EdgeType::MmIntra => self.mm_intra,
            EdgeType::MmInter => self.mm_inter,
        }
    }

    pub fn disable(&mut self, k: EdgeType) {
        match k {
            EdgeType::Ss => self.ss = false,
            EdgeType::Sm => self.sm = false,
            EdgeType::MmIntra => self.mm_intra = false,
            EdgeType::MmInter => self.mm_inter = false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcnParams {
    /// `weights[layer][edge type]`, each `d_m x d_m`, applied as `h W`.
    pub weights: Vec<[ParamId; 4]>,
    /// `(L + 1) d_m x d_m` projection of the concatenated layer states.
    pub output: ParamId,
    pub sentence_position: ParamId,
    pub max_sentences: usize,
}

impl GcnParams {
    pub fn register<R: Rng>(store: &mut ParamStore, cfg: &GcnConfig, d: usize, rng: &mut R) -> Self {
        let weights = (0..cfg.layers)
            .map(|l| EdgeType::ALL.map(|k| store.add(format!("gcn.layer{l}.{}", k.key()), Mat::xavier(d, d, rng))))
            .collect();
        Self {
            weights,
            output: store.add("gcn.output", Mat::xavier((cfg.layers + 1) * d, d, rng)),
            sentence_position: store.add("gcn.sentence_position", Mat::uniform(cfg.max_sentences, d, 0.1, rng)),
            max_sentences: cfg.max_sentences,
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }
}

/// Initial node states: sentence rows are the max over their token rows plus
/// the sentence-position embedding; mention rows are the mean over their
/// span's token rows.
pub fn init_node_states(tape: &mut Tape<'_>, token_reps: &[Var], graph: &HetGraph, params: &GcnParams) -> Var {
    assert_eq!(
        token_reps.len(),
        graph.num_sentences,
        "token reps must cover all sentences"
    );
    let table = tape.param(params.sentence_position);
    let mut rows = Vec::with_capacity(graph.num_nodes());
    let positions: Vec<usize> = (0..graph.num_sentences)
        .map(|i| {
            if i >= params.max_sentences {
                log::warn!(
                    "sentence {i} beyond position table of {}, clamped",
                    params.max_sentences
                );
            }
            i.min(params.max_sentences - 1)
        })
        .collect();
    let pos = tape.gather_rows(table, &positions);
    for (i, &reps) in token_reps.iter().enumerate() {
        let m = tape.max_rows(reps);
        let p = tape.slice_rows(pos, i, i + 1);
        rows.push(tape.add(m, p));
    }
    for m in &graph.mentions {
        let span = tape.slice_rows(token_reps[m.sentence_index], m.start, m.end);
        rows.push(tape.mean_rows(span));
    }
    tape.concat_rows(&rows)
}

pub struct GcnOutput {
    /// Final state of every node.
    pub nodes: Var,
    /// Sentence rows of `nodes` (the matrix S).
    pub sentences: Var,
    /// Mention rows of `nodes`, or `None` without mentions.
    pub mentions: Option<Var>,
    /// Layer states `h^(0) ..= h^(L)`.
    pub layers: Vec<Var>,
}

/// `h^(l+1) = ReLU(sum_k A_k h^(l) W_k^(l))`, final `h = [h^(0); ..; h^(L)] W_a`.
pub fn rgcn_forward(
    tape: &mut Tape<'_>,
    graph: &HetGraph,
    states0: Var,
    params: &GcnParams,
    ablation: &GraphAblation,
    dropout: &mut Dropout,
) -> GcnOutput {
    let ns = graph.num_sentences;
    let n = graph.num_nodes();
    let mut layers = vec![states0];
    let nodes = if ablation.graph {
        let adjacency: Vec<Option<Var>> = EdgeType::ALL
            .iter()
            .map(|&k| {
                ablation
                    .enabled(k)
                    .then(|| tape.constant(graph.normalized_adjacency(k)))
            })
            .collect();
        let mut h = states0;
        for weights in &params.weights {
            let mut total: Option<Var> = None;
            for k in EdgeType::ALL {
                let Some(a) = adjacency[k.index()] else { continue };
                let w = tape.param(weights[k.index()]);
                let msg = tape.matmul(h, w);
                let agg = tape.matmul(a, msg);
                total = Some(match total {
                    Some(t) => tape.add(t, agg),
                    None => agg,
                });
            }
            let pre = total.unwrap_or_else(|| tape.constant(Mat::zeros(n, tape.shape(h).1)));
            h = tape.relu(pre);
            h = dropout.apply(tape, h);
            layers.push(h);
        }
        let cat = tape.concat_cols(&layers);
        let w_a = tape.param(params.output);
        tape.matmul(cat, w_a)
    } else {
        states0
    };
    let sentences = tape.slice_rows(nodes, 0, ns);
    let mentions = (n > ns).then(|| tape.slice_rows(nodes, ns, n));
    GcnOutput {
        nodes,
        sentences,
        mentions,
        layers,
    }
}

/// Entity matrix: row `i` is the mean of entity `i`'s final mention states.
pub fn pool_entities(tape: &mut Tape<'_>, nodes: Var, graph: &HetGraph) -> Option<Var> {
    if graph.num_entities == 0 {
        return None;
    }
    let rows: Vec<Var> = graph
        .entity_members()
        .iter()
        .map(|members| {
            let g = tape.gather_rows(nodes, members);
            tape.mean_rows(g)
        })
        .collect();
    Some(tape.concat_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: usize, a: usize, b: usize, surface: &str) -> EntityMention {
        EntityMention {
            sentence_index: s,
            start: a,
            end: b,
            surface: surface.into(),
            kind: None,
        }
    }

    #[test]
    fn coref_groups_exact_surfaces_in_first_occurrence_order() {
        let ms = [m(0, 0, 1, "A"), m(0, 2, 3, "B"), m(1, 0, 1, "A")];
        let c = coref_by_string(&ms);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].surface, "A");
        assert_eq!(c[0].mentions.len(), 2);
        assert_eq!(c[1].surface, "B");
        let c = coref_by_string(&[m(0, 0, 1, "a"), m(0, 1, 2, "A")]);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn sentences_only_graph() {
        let g = build_graph(3, &[]);
        assert_eq!(g.edge_count(EdgeType::Ss), 3);
        for k in [EdgeType::Sm, EdgeType::MmIntra, EdgeType::MmInter] {
            assert_eq!(g.edge_count(k), 0);
        }
    }

    #[test]
    fn shared_entity_across_two_sentences() {
        let c = coref_by_string(&[m(0, 0, 1, "X"), m(1, 0, 1, "X")]);
        let g = build_graph(2, &c);
        assert_eq!(EdgeType::ALL.map(|k| g.edge_count(k)), [1, 2, 0, 1]);
    }

    #[test]
    fn adjacency_rows_sum_to_one() {
        let c = coref_by_string(&[m(0, 0, 1, "X"), m(0, 1, 2, "Y"), m(1, 0, 1, "X")]);
        let g = build_graph(2, &c);
        for k in EdgeType::ALL {
            let a = g.normalized_adjacency(k);
            for r in 0..a.rows() {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let json = g.to_json();
        assert_eq!(json["edges"]["mm_intra"].as_array().unwrap().len(), 1);
        assert_eq!(json["nodes"].as_array().unwrap().len(), 5);
    }
}
