use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use docee::autograd::Tape;
use docee::corpus::{synth_corpus, SynthConfig};
use docee::hetgraph::{build_graph, coref_by_string, rgcn_forward, GcnConfig, GcnParams, GraphAblation};
use docee::ner::{crf_nll, viterbi_decode, CrfParams};
use docee::nn::Dropout;
use docee::params::ParamStore;
use docee::trainer::{train, TrainConfig};
use docee::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn crf(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels = 5;
    let e = Mat::uniform(64, labels, 2.0, &mut rng);
    let p = CrfParams {
        transitions: Mat::uniform(labels, labels, 1.0, &mut rng),
        start: Mat::uniform(1, labels, 1.0, &mut rng),
        end: Mat::uniform(1, labels, 1.0, &mut rng),
    };
    let gold = vec![0; 64];
    c.bench_function("crf/viterbi_64x5", |b| {
        b.iter(|| viterbi_decode(black_box(&e), &p).unwrap())
    });
    c.bench_function("crf/nll_64x5", |b| {
        b.iter(|| crf_nll(black_box(&e), &gold, &p).unwrap())
    });
}

fn rgcn(c: &mut Criterion) {
    let docs = synth_corpus(&SynthConfig::default(), 7).unwrap();
    let doc = &docs[0];
    let graph = build_graph(doc.sentences.len(), &coref_by_string(&doc.gold_mentions));
    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let gcn = GcnParams::register(&mut store, &GcnConfig::default(), d, &mut rng);
    let h0 = Mat::uniform(graph.num_nodes(), d, 1.0, &mut rng);
    c.bench_function("rgcn/forward_backward", |b| {
        b.iter(|| {
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
            let l = tape.sum_all(out.nodes);
            tape.backward(l)
        })
    });
}

fn end_to_end(c: &mut Criterion) {
    let synth = SynthConfig {
        num_docs: 8,
        ..SynthConfig::default()
    };
    let docs = synth_corpus(&synth, 7).unwrap();
    let schema = synth.schema().unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let model = train(&docs, None, &schema, &cfg, |_| {}).unwrap().last.model().unwrap();
    c.bench_function("model/predict_doc", |b| {
        b.iter(|| model.predict(black_box(&docs[0])).unwrap())
    });
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("epoch_8_docs", |b| {
        b.iter_batched(
            || cfg.clone(),
            |cfg| train(&docs, None, &schema, &cfg, |_| {}).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, crf, rgcn, end_to_end);
criterion_main!(benches);
