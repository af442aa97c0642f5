//! Joint training loop, scheduled sampling of the entity source,
//! checkpoints and batch prediction.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::corpus::{Document, EventSchema, LabelScheme};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, Prediction};
use crate::model::{Ablation, DropoutSeeds, GitModel, LossWeights, ModelConfig};
use crate::params::{Adam, Grads, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_weights: LossWeights,
    pub learning_rate: f64,
    /// Documents per gradient step.
    pub batch_size: usize,
    /// Batches whose gradients are summed before one update.
    pub grad_accumulation: usize,
    pub epochs: usize,
    /// Epoch window `[start, end]` over which the share of documents using
    /// predicted mentions rises linearly from 0 to 1.
    pub scheduled_sampling: [usize; 2],
    pub seed: u64,
    /// Evaluate on the dev set every this many epochs (and after the last).
    pub eval_every: usize,
    pub model: ModelConfig,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_weights: LossWeights::default(),
            learning_rate: 1e-3,
            batch_size: 4,
            grad_accumulation: 1,
            epochs: 30,
            scheduled_sampling: [10, 20],
            seed: 42,
            eval_every: 1,
            model: ModelConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        self.model.validate()?;
        let [s, e] = self.scheduled_sampling;
        if s >= e {
            return Err(Error::Config(format!(
                "scheduled_sampling window [{s}, {e}] must have start < end"
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accumulation == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size, grad_accumulation and eval_every must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Probability that a document trains on predicted rather than gold
/// mentions at `epoch`.
pub fn scheduled_sampling_fraction(epoch: usize, window: [usize; 2]) -> f64 {
    let [s, e] = window;
    if epoch <= s {
        0.0
    } else if epoch >= e {
        1.0
    } else {
        (epoch - s) as f64 / (e - s) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub ner_loss: f64,
    pub detect_loss: f64,
    pub record_loss: f64,
    pub sampling_fraction: f64,
    pub predicted_mention_docs: usize,
    pub unmatched_args: usize,
    pub updates: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_record_f1: Option<f64>,
}

/// Trained parameters with everything needed to rebuild the model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub schema: EventSchema,
    pub vocab: Vocab,
    pub scheme: LabelScheme,
    pub params: ParamStore,
    /// Trainer RNG position after `epoch`.
    pub rng_word_pos: u128,
}

const MAGIC: &[u8; 8] = b"DOCEECKP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: TrainConfig,
    epoch: usize,
    schema: serde_json::Value,
    vocab: Vocab,
    scheme: LabelScheme,
    rng: RngHeader,
    params: Vec<ParamHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngHeader {
    seed: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamHeader {
    name: String,
    rows: usize,
    cols: usize,
}

impl Checkpoint {
    fn of(model: &GitModel, config: &TrainConfig, epoch: usize, rng: &ChaCha8Rng) -> Self {
        Self {
            config: config.clone(),
            epoch,
            schema: model.schema.clone(),
            vocab: model.vocab.clone(),
            scheme: model.scheme.clone(),
            params: model.store.clone(),
            rng_word_pos: rng.get_word_pos(),
        }
    }

    /// Layout: magic, `u32` LE header length, JSON header, then every
    /// parameter's values as `f64` LE in header order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            schema: serde_json::from_str(&self.schema.to_json()).expect("schema JSON"),
            vocab: self.vocab.clone(),
            scheme: self.scheme.clone(),
            rng: RngHeader {
                seed: self.config.seed,
                word_pos: self.rng_word_pos.to_string(),
            },
            params: self
                .params
                .iter()
                .map(|(_, name, m)| ParamHeader {
                    name: name.to_owned(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, m) in self.params.iter() {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::json("checkpoint header", e))?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
        }
        let mut rest = &bytes[12 + len..];
        let mut params = ParamStore::new();
        for p in &header.params {
            let n = p.rows * p.cols;
            if rest.len() < 8 * n {
                return Err(bad("truncated parameter data"));
            }
            let data = rest[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[8 * n..];
            params.add(p.name.clone(), Mat::from_vec(p.rows, p.cols, data));
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after parameters"));
        }
        let mut vocab = header.vocab;
        vocab.reindex();
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            schema: EventSchema::from_json(&header.schema.to_string())?,
            vocab,
            scheme: header.scheme,
            params,
            rng_word_pos: header.rng.word_pos.parse().map_err(|_| bad("invalid RNG position"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model and loads the stored parameters.
    pub fn model(&self) -> Result<GitModel> {
        let mut model = GitModel::new(
            self.config.model.clone(),
            self.config.ablation,
            self.schema.clone(),
            self.vocab.clone(),
            self.scheme.clone(),
            self.config.seed,
        )?;
        if model.store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (_, name, m) in self.params.iter() {
            model.store.assign(name, m.clone())?;
        }
        Ok(model)
    }
}

pub struct TrainOutcome {
    /// Parameters with the best dev record micro-F1 (earliest on ties).
    pub best: Checkpoint,
    /// Parameters after the last completed epoch.
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Deterministic given `cfg.seed`: document order, entity-source coin flips
/// and dropout masks all derive from one seeded generator. `dev` defaults to
/// the training documents. `on_epoch` sees each log entry as it is made.
pub fn train(
    docs: &[Document],
    dev: Option<&[Document]>,
    schema: &EventSchema,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    for d in docs {
        d.validate(schema)?;
    }
    let dev = dev.unwrap_or(docs);
    let vocab = Vocab::build(docs, cfg.model.encoder.vocab_size);
    let scheme = GitModel::label_scheme(docs, cfg.model.typed_tags);
    let mut model = GitModel::new(cfg.model.clone(), cfg.ablation, schema.clone(), vocab, scheme, cfg.seed)?;
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut last = Checkpoint::of(&model, cfg, 0, &rng);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut diverged = None;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        let fraction = scheduled_sampling_fraction(epoch, cfg.scheduled_sampling);
        order.shuffle(&mut rng);
        let mut entry = EpochLog {
            epoch,
            loss: 0.0,
            ner_loss: 0.0,
            detect_loss: 0.0,
            record_loss: 0.0,
            sampling_fraction: fraction,
            predicted_mention_docs: 0,
            unmatched_args: 0,
            updates: 0,
            dev_record_f1: None,
        };
        let mut pending = Grads::new(model.store.len());
        let mut pending_batches = 0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let mut batch_grads = Grads::new(model.store.len());
            for &i in *batch {
                let predicted = rng.random::<f64>() < fraction;
                let seeds = DropoutSeeds {
                    encoder: rng.random(),
                    gcn: rng.random(),
                    decoder: rng.random(),
                };
                let mut tape = Tape::new(&model.store);
                let step = model.doc_loss(&mut tape, &docs[i], predicted, &cfg.loss_weights, Some(&seeds));
                let step = match step {
                    Ok(s) => s,
                    Err(Error::Diverged(detail)) => {
                        diverged = Some(format!("epoch {epoch}, document {}: {detail}", docs[i].doc_id));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                entry.loss += tape.value(step.total).scalar();
                entry.ner_loss += step.ner;
                entry.detect_loss += step.detect;
                entry.record_loss += step.record;
                entry.unmatched_args += step.unmatched_args;
                entry.predicted_mention_docs += usize::from(predicted);
                batch_grads.merge(&tape.backward(step.total));
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            pending.merge(&batch_grads);
            pending_batches += 1;
            if pending_batches == cfg.grad_accumulation || b + 1 == batches.len() {
                if !pending.is_finite() {
                    diverged = Some(format!("epoch {epoch}: non-finite gradient"));
                    break 'epochs;
                }
                pending.scale(1.0 / pending_batches as f64);
                adam.update(&mut model.store, &pending);
                pending = Grads::new(model.store.len());
                pending_batches = 0;
            }
        }
        entry.updates = adam.steps();
        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let preds = predict(&model, dev)?;
            let f1 = evaluate(dev, &preds, schema).records.micro.f1;
            entry.dev_record_f1 = Some(f1);
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, Checkpoint::of(&model, cfg, epoch, &rng)));
            }
        }
        last = Checkpoint::of(&model, cfg, epoch, &rng);
        log::info!(
            "epoch {epoch}: loss {:.4} (ner {:.4}, detect {:.4}, record {:.4}){}",
            entry.loss,
            entry.ner_loss,
            entry.detect_loss,
            entry.record_loss,
            entry
                .dev_record_f1
                .map(|f| format!(", dev record F1 {f:.4}"))
                .unwrap_or_default()
        );
        on_epoch(&entry);
        log.push(entry);
    }
    if let Some(d) = &diverged {
        log::warn!("training stopped: {d}");
    }
    Ok(TrainOutcome {
        best: best.map_or_else(|| last.clone(), |(_, c)| c),
        last,
        log,
        diverged,
    })
}

/// End-to-end predictions, one per document, in input order.
pub fn predict(model: &GitModel, docs: &[Document]) -> Result<Vec<Prediction>> {
    docs.iter().map(|d| model.predict(d)).collect()
}

/// Loads predictions with a checkpoint, refusing corpora built on another
/// event schema.
pub fn predict_with_checkpoint(ckpt: &Checkpoint, docs: &[Document], schema: &EventSchema) -> Result<Vec<Prediction>> {
    if &ckpt.schema != schema {
        return Err(Error::Checkpoint(
            "corpus schema differs from the checkpoint's schema".into(),
        ));
    }
    predict(&ckpt.model()?, docs)
}
