//! Event-type detection: one learned query per type attends over the
//! sentence states, and a shared projection scores each attended vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::nn::MultiHeadAttention;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct DetectParams {
    /// `T x d_m`, one query row per event type.
    pub queries: ParamId,
    pub attention: MultiHeadAttention,
    /// `d_m x 1` scoring vector, no bias.
    pub scorer: ParamId,
}

impl DetectParams {
    pub fn register<R: Rng>(store: &mut ParamStore, num_types: usize, d: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            queries: store.add("detect.queries", Mat::uniform(num_types, d, 0.1, rng)),
            attention: MultiHeadAttention::register(store, "detect.attn", d, heads, rng),
            scorer: store.add("detect.scorer", Mat::xavier(d, 1, rng)),
        }
    }
}

/// `T x 1` type probabilities from the `N_s x d_m` sentence matrix.
pub fn detect_types(tape: &mut Tape<'_>, sentences: Var, params: &DetectParams) -> Var {
    let q = tape.param(params.queries);
    let (attended, _) = params.attention.forward(tape, q, sentences);
    let w = tape.param(params.scorer);
    let logits = tape.matmul(attended, w);
    tape.sigmoid(logits)
}

/// Summed binary cross-entropy against the gold type indicators.
pub fn detect_loss(tape: &mut Tape<'_>, probs: Var, gold: &[bool]) -> Var {
    let targets: Vec<f64> = gold.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    tape.bce(probs, &targets)
}

/// Indices of types whose probability exceeds `threshold`.
pub fn detected(probs: &[f64], threshold: f64) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(t, _)| t)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::bce_value;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = DetectParams::register(&mut store, 5, 8, 2, &mut rng);
        let mut tape = Tape::new(&store);
        let s = tape.constant(Mat::uniform(4, 8, 1.0, &mut rng));
        let r = detect_types(&mut tape, s, &p);
        assert_eq!(tape.shape(r), (5, 1));
        assert!(tape.value(r).data().iter().all(|&x| x > 0.0 && x < 1.0));
        let gold = [true, false, false, true, false];
        let l = detect_loss(&mut tape, r, &gold);
        let t: Vec<f64> = gold.iter().map(|&g| g as u8 as f64).collect();
        assert!((tape.value(l).scalar() - bce_value(tape.value(r).data(), &t)).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(detected(&[0.5, 0.51, 0.2, 0.9], 0.5), vec![1, 3]);
    }
}
