//! Operation examples checked against hand computations and loop oracles.

mod common;

use docee::autograd::{bce_value, sigmoid, Tape};
use docee::detect::{detect_loss, detect_types, DetectParams};
use docee::evalkit::{bucket_report, bucket_sizes, single_multi_report, Counts};
use docee::hetgraph::{
    build_graph, coref_by_string, init_node_states, pool_entities, rgcn_forward, EdgeType, GcnConfig, GcnParams,
    GraphAblation,
};
use docee::ner::{viterbi_decode, CrfParams};
use docee::nn::Dropout;
use docee::params::ParamStore;
use docee::recdec::{
    encode_record, expand_node, record_loss, DecodeMode, DecoderConfig, DecoderParams, GoldTree, NodeQuery,
};
use docee::{EntityMention, EventSchema, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mention(s: usize, a: usize, b: usize, surface: &str) -> EntityMention {
    EntityMention {
        sentence_index: s,
        start: a,
        end: b,
        surface: surface.into(),
        kind: None,
    }
}

fn assert_close(a: &Mat, b: &Mat, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn viterbi_tie_prefers_lexicographically_smaller_path() {
    // Two labels, all scores zero except a symmetric bonus for 0->1 and 1->0.
    let mut p = CrfParams::zeros(2);
    p.transitions = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
    let path = viterbi_decode(&Mat::zeros(3, 2), &p).unwrap();
    assert_eq!(path, vec![0, 1, 0]);
}

#[test]
fn isolated_node_update_uses_self_term_only() {
    let d = 3;
    let graph = build_graph(1, &[]);
    let mut store = ParamStore::new();
    let h0 = Mat::uniform(1, d, 1.0, &mut rng(1));
    let gcn = GcnParams::register(
        &mut store,
        &GcnConfig {
            layers: 1,
            ..GcnConfig::default()
        },
        d,
        &mut rng(2),
    );
    let mut tape = Tape::new(&store);
    let s0 = tape.constant(h0.clone());
    let out = rgcn_forward(
        &mut tape,
        &graph,
        s0,
        &gcn,
        &GraphAblation::default(),
        &mut Dropout::disabled(),
    );
    let mut expected = Mat::zeros(1, d);
    for k in EdgeType::ALL {
        expected.add_assign(&h0.matmul(store.get(gcn.weights[0][k.index()])));
    }
    let expected = Mat::from_vec(1, d, expected.data().iter().map(|x| x.max(0.0)).collect());
    assert_close(tape.value(out.layers[1]), &expected, 1e-12);
}

#[test]
fn two_node_graph_matches_hand_computation() {
    // One sentence containing one mention: a single S-M edge. d = 2, L = 1.
    let graph = build_graph(1, &coref_by_string(&[mention(0, 0, 1, "a")]));
    let mut store = ParamStore::new();
    let gcn = GcnParams::register(
        &mut store,
        &GcnConfig {
            layers: 1,
            ..GcnConfig::default()
        },
        2,
        &mut rng(0),
    );
    let id = Mat::identity(2);
    let set = |store: &mut ParamStore, k: EdgeType, m: Mat| *store.get_mut(gcn.weights[0][k.index()]) = m;
    set(&mut store, EdgeType::Ss, Mat::zeros(2, 2));
    set(
        &mut store,
        EdgeType::Sm,
        Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]),
    );
    set(&mut store, EdgeType::MmIntra, id.clone());
    set(&mut store, EdgeType::MmInter, Mat::zeros(2, 2));
    *store.get_mut(gcn.output) = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    // h0: sentence (1, -1), mention (3, 1).
    // S-M: both rows average (2, 0) -> W = diag(1, 2) -> (2, 0).
    // MM intra: self only -> (1, -1) and (3, 1).
    // ReLU: sentence (3, 0), mention (5, 1); output = h0 + h1.
    let mut tape = Tape::new(&store);
    let s0 = tape.constant(Mat::from_rows(&[vec![1.0, -1.0], vec![3.0, 1.0]]));
    let out = rgcn_forward(
        &mut tape,
        &graph,
        s0,
        &gcn,
        &GraphAblation::default(),
        &mut Dropout::disabled(),
    );
    assert_close(
        tape.value(out.nodes),
        &Mat::from_rows(&[vec![4.0, -1.0], vec![8.0, 2.0]]),
        1e-12,
    );
}

#[test]
fn initial_states_pool_by_max_and_mean() {
    let d = 5;
    let mut r = rng(3);
    let reps = [Mat::uniform(4, d, 1.0, &mut r), Mat::uniform(1, d, 1.0, &mut r)];
    let graph = build_graph(2, &coref_by_string(&[mention(0, 1, 3, "ab"), mention(1, 0, 1, "c")]));
    let mut store = ParamStore::new();
    let gcn = GcnParams::register(&mut store, &GcnConfig::default(), d, &mut r);
    let pos = store.get(gcn.sentence_position).clone();
    let mut tape = Tape::new(&store);
    let vars: Vec<_> = reps.iter().map(|m| tape.constant(m.clone())).collect();
    let h0 = init_node_states(&mut tape, &vars, &graph, &gcn);
    let h0 = tape.value(h0).clone();
    for (s, rep) in reps.iter().enumerate() {
        for c in 0..d {
            let mut best = f64::NEG_INFINITY;
            for t in 0..rep.rows() {
                best = best.max(rep.row(t)[c]);
            }
            assert!((h0.row(s)[c] - (best + pos.row(s)[c])).abs() < 1e-12);
        }
    }
    for c in 0..d {
        assert!((h0.row(2)[c] - (reps[0].row(1)[c] + reps[0].row(2)[c]) / 2.0).abs() < 1e-12);
        assert_eq!(h0.row(3)[c], reps[1].row(0)[c]);
    }
}

#[test]
fn entity_rows_average_their_mentions() {
    let mentions = [
        mention(0, 0, 1, "a"),
        mention(1, 0, 1, "b"),
        mention(1, 2, 3, "a"),
        mention(2, 0, 1, "a"),
    ];
    let graph = build_graph(3, &coref_by_string(&mentions));
    let nodes = Mat::uniform(graph.num_nodes(), 4, 1.0, &mut rng(4));
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let v = tape.constant(nodes.clone());
    let e = pool_entities(&mut tape, v, &graph).unwrap();
    let e = tape.value(e);
    for (i, members) in graph.entity_members().iter().enumerate() {
        for c in 0..4 {
            let mut sum = 0.0;
            for &m in members {
                sum += nodes.row(m)[c];
            }
            assert!((e.row(i)[c] - sum / members.len() as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn detect_loss_matches_scalar_formula() {
    let mut store = ParamStore::new();
    let params = DetectParams::register(&mut store, 4, 4, 2, &mut rng(5));
    let gold = [true, false, false, true];
    let mut tape = Tape::new(&store);
    let s = tape.constant(Mat::uniform(3, 4, 1.0, &mut rng(6)));
    let probs = detect_types(&mut tape, s, &params);
    let l = detect_loss(&mut tape, probs, &gold);
    let mut expected = 0.0;
    for (p, g) in tape.value(probs).data().iter().zip(gold) {
        assert!(*p > 0.0 && *p < 1.0);
        expected -= if g { p.ln() } else { (1.0 - p).ln() };
    }
    assert!((tape.value(l).scalar() - expected).abs() < 1e-12);
    assert!((bce_value(&[0.5; 5], &[1.0, 0.0, 1.0, 0.0, 0.0]) - 5.0 * 2f64.ln()).abs() < 1e-12);
}

fn decoder(schema: &EventSchema, d: usize) -> (ParamStore, DecoderParams) {
    let mut store = ParamStore::new();
    let cfg = DecoderConfig {
        layers: 1,
        ff_dim: 8,
        ..DecoderConfig::default()
    };
    let p = DecoderParams::register(&mut store, schema, &cfg, d, &mut rng(7));
    (store, p)
}

#[test]
fn single_step_record_matches_hand_recurrence() {
    let schema = EventSchema::synthetic(2, 1).unwrap();
    let (store, p) = decoder(&schema, 2);
    let x = [0.3, -0.7];
    let mut tape = Tape::new(&store);
    let xv = tape.constant(Mat::from_vec(1, 2, x.to_vec()));
    let g = encode_record(&mut tape, &p, &[xv], 1);
    let (w, b) = (store.get(p.record_lstm.w_ih), store.get(p.record_lstm.bias));
    let gate = |j: usize| x[0] * w.row(0)[j] + x[1] * w.row(1)[j] + b.data()[j];
    let ty = store.get(p.type_embedding).row(1);
    for (u, &t) in ty.iter().enumerate() {
        let (i, cand, o) = (sigmoid(gate(u)), gate(4 + u).tanh(), sigmoid(gate(6 + u)));
        let h = o * (i * cand).tanh();
        assert!((tape.value(g).data()[u] - (h + t)).abs() < 1e-12);
    }
}

#[test]
fn record_vectors_differ_by_type_embedding_only() {
    let schema = EventSchema::synthetic(2, 2).unwrap();
    let (store, p) = decoder(&schema, 4);
    let mut tape = Tape::new(&store);
    let steps: Vec<_> = (0..2)
        .map(|i| tape.constant(Mat::uniform(1, 4, 1.0, &mut rng(i))))
        .collect();
    let a = encode_record(&mut tape, &p, &steps, 0);
    let b = encode_record(&mut tape, &p, &steps, 1);
    let table = store.get(p.type_embedding);
    for c in 0..4 {
        let diff = tape.value(a).data()[c] - tape.value(b).data()[c];
        assert!((diff - (table.row(0)[c] - table.row(1)[c])).abs() < 1e-12);
    }
}

#[test]
fn zeroed_classifier_gives_one_half_everywhere() {
    let schema = EventSchema::synthetic(1, 2).unwrap();
    let (mut store, p) = decoder(&schema, 4);
    *store.get_mut(p.classifier.w) = Mat::zeros(4, 1);
    let mut tape = Tape::new(&store);
    let ents = tape.constant(Mat::uniform(3, 4, 1.0, &mut rng(8)));
    let sents = tape.constant(Mat::uniform(2, 4, 1.0, &mut rng(9)));
    let mem = [tape.constant(Mat::uniform(1, 4, 1.0, &mut rng(10)))];
    let q = NodeQuery {
        event_type: 0,
        role: 1,
        path: &mem,
        memory: &mem,
    };
    let probs = expand_node(&mut tape, &p, ents, sents, &q, &mut Dropout::disabled());
    assert_eq!(tape.value(probs).data(), &[0.5; 3]);

    // Uniform probabilities: loss is the label count times ln 2. Tree:
    // root has 3 labels, two children each have 3 more.
    let gold = [(0, GoldTree::new(&[vec![Some(0), Some(1)], vec![Some(2), None]]))];
    let l = record_loss(
        &mut tape,
        &p,
        Some(ents),
        sents,
        &gold,
        &schema,
        DecodeMode::Full,
        &mut Dropout::disabled(),
    );
    assert!((tape.value(l.unwrap()).scalar() - 9.0 * 2f64.ln()).abs() < 1e-9);
}

#[test]
fn expansion_matches_straight_line_recomputation() {
    // |E| = 2, one sentence, d = 4, empty path and memory.
    let schema = EventSchema::synthetic(1, 2).unwrap();
    let (store, p) = decoder(&schema, 4);
    let e = Mat::uniform(2, 4, 1.0, &mut rng(11));
    let s = Mat::uniform(1, 4, 1.0, &mut rng(12));
    let mut tape = Tape::new(&store);
    let (ev, sv) = (tape.constant(e.clone()), tape.constant(s.clone()));
    let q = NodeQuery {
        event_type: 0,
        role: 1,
        path: &[],
        memory: &[],
    };
    let probs = expand_node(&mut tape, &p, ev, sv, &q, &mut Dropout::disabled());
    let got = tape.value(probs).clone();

    let role = store.get(p.role_embedding).row(p.role_offsets[0] + 1).to_vec();
    let seg = store.get(p.segment_embedding);
    let mut rows = Vec::new();
    for i in 0..2 {
        rows.push(
            (0..4)
                .map(|c| e.row(i)[c] + role[c] + seg.row(0)[c])
                .collect::<Vec<_>>(),
        );
    }
    rows.push((0..4).map(|c| s.row(0)[c] + seg.row(1)[c]).collect());
    let mut t2 = Tape::new(&store);
    let x = t2.constant(Mat::from_rows(&rows));
    let y = p.layers[0].forward(&mut t2, x, &mut Dropout::disabled());
    let y = t2.value(y).clone();
    let w = store.get(p.classifier.w);
    let b = store.get(p.classifier.b.unwrap()).scalar();
    for i in 0..2 {
        let logit: f64 = (0..4).map(|c| y.row(i)[c] * w.row(c)[0]).sum::<f64>() + b;
        assert!((got.data()[i] - sigmoid(logit)).abs() < 1e-12);
    }
}

#[test]
fn buckets_follow_remainder_rule() {
    assert_eq!(bucket_sizes(4), [1, 1, 1, 1]);
    assert_eq!(bucket_sizes(5), [1, 1, 1, 2]);
    assert_eq!(bucket_sizes(7), [1, 2, 2, 2]);
    let docs = common::toy_corpus(9, 3);
    let report = bucket_report(&docs, &vec![Counts::default(); docs.len()]);
    let sizes: Vec<usize> = report.buckets.iter().map(|b| b.docs).collect();
    assert_eq!(sizes, [2, 2, 2, 3]);
    let bounds: Vec<f64> = report
        .buckets
        .iter()
        .flat_map(|b| [b.min_avg_sentences.unwrap(), b.max_avg_sentences.unwrap()])
        .collect();
    assert!(bounds.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn single_multi_partition_matches_generator() {
    let cfg = docee::corpus::SynthConfig::default();
    let docs = docee::corpus::synth_corpus(&cfg, 7).unwrap();
    let report = single_multi_report(&docs, &vec![Counts::default(); docs.len()]);
    assert_eq!(report.multi_docs, cfg.num_multi_record_docs());
    assert_eq!(
        report.single_docs + report.multi_docs + report.excluded_docs,
        cfg.num_docs
    );

    let single: Vec<_> = docs.into_iter().filter(|d| d.gold_records.len() == 1).collect();
    let report = single_multi_report(&single, &vec![Counts::default(); single.len()]);
    assert!(report.multi.is_none());
}

#[test]
fn string_coref_matches_generator_entities() {
    for doc in common::toy_corpus(20, 8) {
        let clusters = coref_by_string(&doc.gold_mentions);
        for r in &doc.gold_records {
            for a in r.args.iter().flatten() {
                assert!(clusters.iter().any(|c| &c.surface == a), "{}: {a}", doc.doc_id);
            }
        }
        let total: usize = clusters.iter().map(|c| c.mentions.len()).sum();
        assert_eq!(total, doc.gold_mentions.len());
    }
}
