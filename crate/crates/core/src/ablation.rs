//! Trains the full model and named variants under one configuration and
//! tabulates their scores against the full model.

use serde::Serialize;

use crate::corpus::{Document, EventSchema};
use crate::error::Result;
use crate::evalkit::evaluate;
use crate::model::Ablation;
use crate::trainer::{predict, train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantScore {
    pub variant: String,
    pub record_f1: f64,
    pub type_f1: f64,
    pub multi_record_f1: Option<f64>,
    /// `record_f1 - full record_f1`.
    pub delta: f64,
    pub best_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<VariantScore>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&VariantScore> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>7} {:>8} {:>8}\n",
            "variant", "record F1", "delta", "type F1", "M. F1"
        );
        for r in &self.rows {
            let m = r
                .multi_record_f1
                .map_or_else(|| "-".to_owned(), |f| format!("{:.1}", 100.0 * f));
            out.push_str(&format!(
                "{:<12} {:>9.1} {:>+7.1} {:>8.1} {:>8}\n",
                r.variant,
                100.0 * r.record_f1,
                100.0 * r.delta,
                100.0 * r.type_f1,
                m
            ));
        }
        out
    }
}

/// Trains `full` plus each of `variants` with `cfg` (its own ablation field
/// ignored) and scores each on `eval` (the training set when `None`).
pub fn run_ablation(
    docs: &[Document],
    eval: Option<&[Document]>,
    schema: &EventSchema,
    cfg: &TrainConfig,
    variants: &[String],
) -> Result<AblationReport> {
    let mut names = vec!["full".to_owned()];
    for v in variants {
        Ablation::variant(v)?;
        if !names.contains(v) {
            names.push(v.clone());
        }
    }
    let eval = eval.unwrap_or(docs);
    let mut rows: Vec<VariantScore> = Vec::with_capacity(names.len());
    for name in names {
        let cfg = TrainConfig {
            ablation: Ablation::variant(&name)?,
            ..cfg.clone()
        };
        log::info!("training variant {name}");
        let outcome = train(docs, Some(eval), schema, &cfg, |_| {})?;
        let model = outcome.best.model()?;
        let report = evaluate(eval, &predict(&model, eval)?, schema);
        let full = rows.first().map_or(report.records.micro.f1, |r| r.record_f1);
        rows.push(VariantScore {
            variant: name,
            record_f1: report.records.micro.f1,
            type_f1: report.types.micro.f1,
            multi_record_f1: report.single_multi.multi.map(|p| p.f1),
            delta: report.records.micro.f1 - full,
            best_epoch: outcome.best.epoch,
            diverged: outcome.diverged,
        });
    }
    Ok(AblationReport { rows })
}
