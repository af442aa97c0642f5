#![allow(dead_code)]

use docee::autograd::{Tape, Var};
use docee::corpus::{synth_corpus, Document, SynthConfig};
use docee::params::ParamStore;
use docee::Mat;

/// Largest entrywise `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
/// over every parameter entry, with central differences of step `h`.
pub fn max_grad_error(store: &mut ParamStore, h: f64, floor: f64, loss: impl Fn(&mut Tape<'_>) -> Var) -> f64 {
    let analytic = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape);
        tape.backward(l)
    };
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape);
        tape.value(l).scalar()
    };
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let n = store.get(id).len();
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// `sum(x ∘ r)` for a fixed random `r`, so that every entry of `x` matters.
pub fn probe_loss(tape: &mut Tape<'_>, x: Var, seed: u64) -> Var {
    use rand::SeedableRng;
    let (r, c) = tape.shape(x);
    let w = Mat::uniform(r, c, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let y = tape.mul_const(x, w);
    tape.sum_all(y)
}

pub fn toy_corpus(num_docs: usize, seed: u64) -> Vec<Document> {
    let cfg = SynthConfig {
        num_docs,
        ..SynthConfig::default()
    };
    synth_corpus(&cfg, seed).unwrap()
}
