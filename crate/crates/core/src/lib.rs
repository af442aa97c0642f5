//! Document-level event extraction with a heterogeneous sentence/mention
//! graph and a tracker-conditioned record decoder.
//!
//! Pipeline: [`encoder`] turns sentences into token states, [`ner`] tags
//! entity mentions with a CRF, [`hetgraph`] builds and convolves the
//! document graph, [`detect`] predicts event types, and [`recdec`] expands
//! each type into argument records role by role. [`trainer`] runs the joint
//! objective and [`evalkit`] scores predictions.

pub mod ablation;
pub mod autograd;
pub mod config;
pub mod corpus;
pub mod detect;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod hetgraph;
pub mod model;
pub mod ner;
pub mod nn;
pub mod params;
pub mod recdec;
pub mod tensor;
pub mod trainer;

pub use corpus::{Document, Entity, EntityMention, EventRecord, EventSchema};
pub use error::{Error, Result};
pub use evalkit::{evaluate, MetricReport, Prediction};
pub use model::{Ablation, GitModel, LossWeights, ModelConfig};
pub use tensor::Mat;
pub use trainer::{train, Checkpoint, TrainConfig};
