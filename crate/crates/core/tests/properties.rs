use std::collections::BTreeSet;

use docee::evalkit::{entity_f1, record_micro_f1, type_f1};
use docee::hetgraph::{build_graph, coref_by_string, EdgeType};
use docee::ner::{crf_nll, path_score, viterbi_decode, CrfParams};
use docee::{EntityMention, EventRecord, Mat};
use proptest::prelude::*;

type DocSlice = (Vec<EntityMention>, Vec<EntityMention>, BTreeSet<usize>, BTreeSet<usize>);

fn record_strategy(types: usize) -> impl Strategy<Value = EventRecord> {
    (0..types, prop::collection::vec(prop::option::of(0u8..4), 3)).prop_map(|(t, args)| EventRecord {
        event_type: t,
        args: args.into_iter().map(|a| a.map(|x| format!("e{x}"))).collect(),
    })
}

fn doc_records() -> impl Strategy<Value = Vec<EventRecord>> {
    prop::collection::vec(record_strategy(2), 0..5)
}

fn mention_strategy() -> impl Strategy<Value = EntityMention> {
    (0usize..4, 0usize..6, 1usize..3, 0u8..3).prop_map(|(s, a, len, x)| EntityMention {
        sentence_index: s,
        start: a,
        end: a + len,
        surface: format!("m{x}"),
        kind: None,
    })
}

proptest! {
    #[test]
    fn record_metrics_ignore_record_and_document_order(
        docs in prop::collection::vec((doc_records(), doc_records()), 1..5),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (pred, gold): (Vec<_>, Vec<_>) = docs.iter().cloned().unzip();
        let reference = record_micro_f1(&pred, &gold, 2);
        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut rng);
        for (p, g) in &mut shuffled {
            p.shuffle(&mut rng);
            g.shuffle(&mut rng);
        }
        let (pred, gold): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(record_micro_f1(&pred, &gold, 2), reference);
    }

    #[test]
    fn record_metrics_are_symmetric(docs in prop::collection::vec((doc_records(), doc_records()), 1..5)) {
        let (pred, gold): (Vec<_>, Vec<_>) = docs.into_iter().unzip();
        let ab = record_micro_f1(&pred, &gold, 2).micro;
        let ba = record_micro_f1(&gold, &pred, 2).micro;
        prop_assert_eq!(ab.counts.tp, ba.counts.tp);
        prop_assert_eq!(ab.counts.fp, ba.counts.fn_);
        prop_assert_eq!(ab.counts.fn_, ba.counts.fp);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.f1, ba.f1);
    }

    #[test]
    fn a_record_set_scores_perfectly_against_itself(recs in doc_records()) {
        let r = record_micro_f1(std::slice::from_ref(&recs), std::slice::from_ref(&recs), 2).micro;
        prop_assert_eq!(r.counts.fp + r.counts.fn_, 0);
        let filled: usize = recs.iter().map(EventRecord::non_null_count).sum();
        prop_assert_eq!(r.counts.tp, filled);
    }

    #[test]
    fn entity_and_type_scores_ignore_document_order(
        docs in prop::collection::vec(
            (
                prop::collection::vec(mention_strategy(), 0..5),
                prop::collection::vec(mention_strategy(), 0..5),
                prop::collection::btree_set(0usize..5, 0..3),
                prop::collection::btree_set(0usize..5, 0..3),
            ),
            1..5,
        )
    ) {
        let split = |d: &[DocSlice]| {
            let pm: Vec<_> = d.iter().map(|x| x.0.clone()).collect();
            let gm: Vec<_> = d.iter().map(|x| x.1.clone()).collect();
            let pt: Vec<_> = d.iter().map(|x| x.2.clone()).collect();
            let gt: Vec<_> = d.iter().map(|x| x.3.clone()).collect();
            (entity_f1(&pm, &gm), type_f1(&pt, &gt, 5))
        };
        let mut rev = docs.clone();
        rev.reverse();
        prop_assert_eq!(split(&docs), split(&rev));
    }

    #[test]
    fn viterbi_path_outscores_any_other(
        len in 1usize..8,
        values in prop::collection::vec(-3.0f64..3.0, 8 * 3 + 15),
        other in prop::collection::vec(0usize..3, 8),
    ) {
        let e = Mat::from_vec(len, 3, values[..len * 3].to_vec());
        let rest = &values[24..];
        let p = CrfParams {
            transitions: Mat::from_vec(3, 3, rest[..9].to_vec()),
            start: Mat::from_vec(1, 3, rest[9..12].to_vec()),
            end: Mat::from_vec(1, 3, rest[12..15].to_vec()),
        };
        let best = viterbi_decode(&e, &p).unwrap();
        prop_assert!(path_score(&e, &p, &best) >= path_score(&e, &p, &other[..len]) - 1e-12);
        prop_assert!(crf_nll(&e, &best, &p).unwrap() >= -1e-12);
        prop_assert!(crf_nll(&e, &best, &p).unwrap() <= crf_nll(&e, &other[..len], &p).unwrap() + 1e-12);
    }

    #[test]
    fn adjacency_is_row_stochastic_and_symmetric_in_support(
        sentences in 1usize..5,
        mentions in prop::collection::vec(mention_strategy(), 0..8),
    ) {
        let mentions: Vec<_> = mentions.into_iter().filter(|m| m.sentence_index < sentences).collect();
        let graph = build_graph(sentences, &coref_by_string(&mentions));
        for k in EdgeType::ALL {
            let a = graph.normalized_adjacency(k);
            for u in 0..graph.num_nodes() {
                prop_assert!((a.row(u).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for v in 0..graph.num_nodes() {
                    prop_assert_eq!(a.row(u)[v] > 0.0, a.row(v)[u] > 0.0);
                }
            }
        }
    }
}
