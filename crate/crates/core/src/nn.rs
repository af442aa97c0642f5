//! Layers shared by the encoder, detector and decoder: affine maps, layer
//! normalisation, multi-head attention, post-norm transformer blocks, an
//! LSTM and dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

/// Inverted dropout; a disabled instance is the identity.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, seed: u64) -> Self {
        if rate <= 0.0 {
            return Self::disabled();
        }
        Self {
            rate,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        let (r, c) = tape.shape(x);
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, Mat::from_vec(r, c, mask))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), Mat::xavier(input, output, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Mat::zeros(1, output)));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Mat::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let n = tape.layer_norm(x);
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim {dim} not divisible by {heads} heads"
        );
        Self {
            query: Linear::register(store, &format!("{name}.q"), dim, dim, true, rng),
            key: Linear::register(store, &format!("{name}.k"), dim, dim, true, rng),
            value: Linear::register(store, &format!("{name}.v"), dim, dim, true, rng),
            output: Linear::register(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        }
    }

    /// Scaled dot-product attention of `queries` (rows) over `memory` rows.
    /// Returns the output and each head's `queries x memory` weights.
    pub fn forward(&self, tape: &mut Tape<'_>, queries: Var, memory: Var) -> (Var, Vec<Var>) {
        let q = self.query.forward(tape, queries);
        let k = self.key.forward(tape, memory);
        let v = self.value.forward(tape, memory);
        let dim = tape.shape(q).1;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, a, b),
                    tape.slice_cols(k, a, b),
                    tape.slice_cols(v, a, b),
                )
            };
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, scale);
            let w = tape.softmax_rows(scores);
            outs.push(tape.matmul(w, vh));
            weights.push(w);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        (self.output.forward(tape, joined), weights)
    }
}

/// Post-norm transformer block: self-attention and a ReLU feed-forward
/// sublayer, each wrapped in residual + layer norm.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

impl TransformerLayer {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        ff_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            attention: MultiHeadAttention::register(store, &format!("{name}.attn"), dim, heads, rng),
            norm1: LayerNorm::register(store, &format!("{name}.norm1"), dim),
            ff1: Linear::register(store, &format!("{name}.ff1"), dim, ff_dim, true, rng),
            ff2: Linear::register(store, &format!("{name}.ff2"), ff_dim, dim, true, rng),
            norm2: LayerNorm::register(store, &format!("{name}.norm2"), dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, dropout: &mut Dropout) -> Var {
        let (a, _) = self.attention.forward(tape, x, x);
        let a = dropout.apply(tape, a);
        let x = tape.add(x, a);
        let x = self.norm1.forward(tape, x);
        let h = self.ff1.forward(tape, x);
        let h = tape.relu(h);
        let h = self.ff2.forward(tape, h);
        let h = dropout.apply(tape, h);
        let x2 = tape.add(x, h);
        self.norm2.forward(tape, x2)
    }
}

/// Single-layer LSTM with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: store.add(format!("{name}.w_ih"), Mat::xavier(input, 4 * hidden, rng)),
            w_hh: store.add(format!("{name}.w_hh"), Mat::xavier(hidden, 4 * hidden, rng)),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, 4 * hidden)),
            hidden,
        }
    }

    /// Runs over `1 x input` steps from zero state; returns the last hidden
    /// state (`1 x hidden`).
    pub fn last_hidden(&self, tape: &mut Tape<'_>, steps: &[Var]) -> Var {
        let h_dim = self.hidden;
        let w_ih = tape.param(self.w_ih);
        let w_hh = tape.param(self.w_hh);
        let bias = tape.param(self.bias);
        let mut h = tape.constant(Mat::zeros(1, h_dim));
        let mut c = tape.constant(Mat::zeros(1, h_dim));
        for &x in steps {
            let gx = tape.matmul(x, w_ih);
            let gh = tape.matmul(h, w_hh);
            let g = tape.add(gx, gh);
            let g = tape.add_row(g, bias);
            let i = tape.slice_cols(g, 0, h_dim);
            let f = tape.slice_cols(g, h_dim, 2 * h_dim);
            let cand = tape.slice_cols(g, 2 * h_dim, 3 * h_dim);
            let o = tape.slice_cols(g, 3 * h_dim, 4 * h_dim);
            let i = tape.sigmoid(i);
            let f = tape.sigmoid(f);
            let cand = tape.tanh(cand);
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, c);
            let write = tape.mul(i, cand);
            c = tape.add(keep, write);
            let ct = tape.tanh(c);
            h = tape.mul(o, ct);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_key_attention_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::register(&mut store, "a", 4, 2, &mut rng);
        let mut tape = Tape::new(&store);
        let q = tape.constant(Mat::uniform(3, 4, 1.0, &mut rng));
        let m = tape.constant(Mat::uniform(1, 4, 1.0, &mut rng));
        let (_, w) = mha.forward(&mut tape, q, m);
        for h in w {
            assert!(tape.value(h).data().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn dropout_disabled_is_identity() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Mat::filled(2, 2, 3.0));
        assert_eq!(Dropout::disabled().apply(&mut tape, x), x);
        assert_eq!(Dropout::new(0.0, 1).apply(&mut tape, x), x);
    }
}
