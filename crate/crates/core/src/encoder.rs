//! Sentence encoder: token plus learned position embeddings followed by a
//! stack of self-attention blocks. Sentences are encoded independently;
//! cross-sentence interaction happens in the heterogeneous graph.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::nn::{Dropout, TransformerLayer};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Upper bound on the vocabulary, `<unk>` included.
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_sentence_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 5000,
            hidden_dim: 32,
            ff_dim: 64,
            heads: 2,
            layers: 2,
            max_sentence_len: 128,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Dimensions used for the full-size corpus.
    pub fn paper_scale() -> Self {
        Self {
            vocab_size: 21_128,
            hidden_dim: 768,
            ff_dim: 1024,
            heads: 8,
            layers: 8,
            max_sentence_len: 128,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.max_sentence_len == 0 || self.vocab_size < 2 {
            return Err(Error::Config("max_sentence_len and vocab_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub const UNK: &str = "<unk>";

/// Token vocabulary; id 0 is `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Most frequent tokens first (ties lexicographic), capped at
    /// `max_size` entries including `<unk>`.
    pub fn build(docs: &[Document], max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for d in docs {
            for t in d.sentences.iter().flatten() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec![UNK.to_owned()];
        tokens.extend(
            ranked
                .into_iter()
                .filter(|(t, _)| *t != UNK)
                .take(max_size.saturating_sub(1))
                .map(|(t, _)| t.to_owned()),
        );
        Self::from_tokens(tokens)
    }

    pub(crate) fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub max_sentence_len: usize,
}

impl Encoder {
    pub fn register<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, vocab_len: usize, rng: &mut R) -> Self {
        let d = cfg.hidden_dim;
        let token_embedding = store.add("encoder.token_embedding", Mat::uniform(vocab_len, d, 0.1, rng));
        let position_embedding = store.add(
            "encoder.position_embedding",
            Mat::uniform(cfg.max_sentence_len, d, 0.1, rng),
        );
        let layers = (0..cfg.layers)
            .map(|l| TransformerLayer::register(store, &format!("encoder.layer{l}"), d, cfg.ff_dim, cfg.heads, rng))
            .collect();
        Self {
            token_embedding,
            position_embedding,
            layers,
            max_sentence_len: cfg.max_sentence_len,
        }
    }

    /// Encodes one sentence of token ids into a `len x d_m` matrix.
    ///
    /// Sentences longer than `max_sentence_len` are truncated; the second
    /// return value reports whether that happened.
    pub fn encode_sentence(&self, tape: &mut Tape<'_>, ids: &[usize], dropout: &mut Dropout) -> (Var, bool) {
        assert!(!ids.is_empty(), "empty sentence");
        let truncated = ids.len() > self.max_sentence_len;
        let ids = &ids[..ids.len().min(self.max_sentence_len)];
        let positions: Vec<usize> = (0..ids.len()).collect();
        let table = tape.param(self.token_embedding);
        let pos_table = tape.param(self.position_embedding);
        let tok = tape.gather_rows(table, ids);
        let pos = tape.gather_rows(pos_table, &positions);
        let mut x = tape.add(tok, pos);
        x = dropout.apply(tape, x);
        for layer in &self.layers {
            x = layer.forward(tape, x, dropout);
        }
        (x, truncated)
    }
}
