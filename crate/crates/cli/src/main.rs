//! `docee`: synthesize, import, train, predict, evaluate and ablate.
//!
//! Exit codes:
//!
//! | code | name       | cause                                        |
//! |------|------------|----------------------------------------------|
//! | 0    |            | success                                      |
//! | 1    | internal   | anything not listed below                    |
//! | 2    | usage      | bad arguments or subcommand                  |
//! | 3    | io         | missing or unwritable file                   |
//! | 4    | data       | malformed JSON, schema or document violation |
//! | 5    | config     | invalid configuration or override            |
//! | 6    | checkpoint | unreadable or mismatched checkpoint          |
//! | 7    | diverged   | training hit a non-finite loss               |
//!
//! Failures print one line to stderr: `error: code=<name> msg=<message>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use docee::ablation::run_ablation;
use docee::config::layered;
use docee::corpus::{audit_corpus, import_chfinann, load_corpus, save_corpus, synth_corpus, Document, SynthConfig};
use docee::evalkit::{evaluate, parse_predictions, predictions_to_json};
use docee::trainer::{predict_with_checkpoint, train, Checkpoint, TrainConfig};
use docee::{Error, EventSchema};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "docee", version, about = "Document-level event extraction")]
struct Cli {
    /// JSON configuration with optional `synth` and `train` sections.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `train.epochs=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for generation and training (overrides `train.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (corpus.json, schema.json).
    Synth,
    /// Convert a ChFinAnn-format file (corpus.json, schema.json).
    Import {
        input: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Train a model (model.ckpt, last.ckpt, metrics.jsonl, config.json).
    Train {
        corpus: PathBuf,
        /// Model selection corpus; defaults to the training corpus.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Predict with a checkpoint (predictions.json).
    Predict {
        checkpoint: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Score a prediction dump against gold (report.json, report.txt).
    Eval {
        gold: PathBuf,
        predictions: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Train and compare variants against the full model (ablation.json,
    /// ablation.txt). Without variants, runs all of them.
    Ablate {
        variants: Vec<String>,
        /// Training corpus; a synthetic corpus from the configuration when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Evaluation corpus; defaults to the training corpus.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    synth: SynthConfig,
    train: TrainConfig,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> (u8, &'static str) {
        match self {
            Failure::Usage(_) => (2, "usage"),
            Failure::Core(e) => match e {
                Error::Io { .. } => (3, "io"),
                Error::Json { .. } | Error::Schema { .. } | Error::EventSchema(_) => (4, "data"),
                Error::Config(_) | Error::Infeasible(_) => (5, "config"),
                Error::Checkpoint(_) | Error::Shape(_) => (6, "checkpoint"),
                Error::Diverged(_) => (7, "diverged"),
            },
        }
    }

    fn message(&self) -> String {
        let m = match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        };
        m.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

type Run<T = ()> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Run<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}

fn write(path: &Path, text: &str) -> Run {
    std::fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}

fn settings(cli: &Cli) -> Run<Settings> {
    let text = cli.config.as_deref().map(read).transpose()?;
    let mut s: Settings = layered(text.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        s.train.seed = seed;
    }
    s.train.validate()?;
    Ok(s)
}

/// `--schema`, else `schema.json` beside `corpus`, else the built-in
/// ChFinAnn schema.
fn schema_for(explicit: Option<&Path>, corpus: Option<&Path>) -> Run<EventSchema> {
    if let Some(p) = explicit {
        return Ok(EventSchema::load(p)?);
    }
    if let Some(beside) = corpus.and_then(Path::parent).map(|d| d.join("schema.json")) {
        if beside.is_file() {
            return Ok(EventSchema::load(&beside)?);
        }
    }
    Ok(EventSchema::chfinann())
}

fn json_line(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("serialisable")
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn save_docs(out: &Path, docs: &[Document], schema: &EventSchema) -> Run {
    save_corpus(&out.join("corpus.json"), docs, schema)?;
    write(&out.join("schema.json"), &schema.to_json())
}

fn run(cli: Cli) -> Run {
    let s = settings(&cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    match &cli.command {
        Command::Synth => {
            let docs = synth_corpus(&s.synth, s.train.seed)?;
            let schema = s.synth.schema()?;
            save_docs(out, &docs, &schema)?;
            println!("{}", json_line(&audit_corpus(&docs)));
        }
        Command::Import { input, schema } => {
            let schema = schema_for(schema.as_deref(), None)?;
            let docs = import_chfinann(input, &schema)?;
            save_docs(out, &docs, &schema)?;
            println!("{}", json_line(&audit_corpus(&docs)));
        }
        Command::Train { corpus, dev, schema } => {
            let schema = schema_for(schema.as_deref(), Some(corpus))?;
            let docs = load_corpus(corpus, &schema)?;
            let dev_docs = dev.as_deref().map(|p| load_corpus(p, &schema)).transpose()?;
            write(&out.join("config.json"), &pretty(&s))?;
            let mut log_lines = String::new();
            let outcome = train(&docs, dev_docs.as_deref(), &schema, &s.train, |e| {
                log_lines.push_str(&json_line(e));
                log_lines.push('\n');
            })?;
            write(&out.join("metrics.jsonl"), &log_lines)?;
            outcome.best.save(&out.join("model.ckpt"))?;
            outcome.last.save(&out.join("last.ckpt"))?;
            if let Some(d) = outcome.diverged {
                return Err(Error::Diverged(d).into());
            }
            println!(
                "{}",
                json_line(&serde_json::json!({
                    "best_epoch": outcome.best.epoch,
                    "dev_record_f1": outcome.log.iter().filter_map(|e| e.dev_record_f1).fold(0.0, f64::max),
                }))
            );
        }
        Command::Predict {
            checkpoint,
            corpus,
            schema,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let schema = match schema {
                Some(p) => EventSchema::load(p)?,
                None => ckpt.schema.clone(),
            };
            let docs = load_corpus(corpus, &schema)?;
            let preds = predict_with_checkpoint(&ckpt, &docs, &schema)?;
            write(
                &out.join("predictions.json"),
                &pretty(&predictions_to_json(&preds, &schema)),
            )?;
        }
        Command::Eval {
            gold,
            predictions,
            schema,
        } => {
            let schema = schema_for(schema.as_deref(), Some(gold))?;
            let docs = load_corpus(gold, &schema)?;
            let preds = parse_predictions(&read(predictions)?, &schema)?;
            let report = evaluate(&docs, &preds, &schema);
            let text = report.to_text();
            write(&out.join("report.json"), &pretty(&report.to_json()))?;
            write(&out.join("report.txt"), &text)?;
            print!("{text}");
        }
        Command::Ablate {
            variants,
            corpus,
            eval,
            schema,
        } => {
            let (docs, schema) = match corpus {
                Some(c) => {
                    let schema = schema_for(schema.as_deref(), Some(c))?;
                    (load_corpus(c, &schema)?, schema)
                }
                None => (synth_corpus(&s.synth, s.train.seed)?, s.synth.schema()?),
            };
            let eval_docs = eval.as_deref().map(|p| load_corpus(p, &schema)).transpose()?;
            let variants: Vec<String> = if variants.is_empty() {
                docee::Ablation::VARIANTS[1..].iter().map(|v| v.to_string()).collect()
            } else {
                variants.clone()
            };
            let report = run_ablation(&docs, eval_docs.as_deref(), &schema, &s.train, &variants)?;
            let text = report.to_text();
            write(&out.join("ablation.json"), &pretty(&report))?;
            write(&out.join("ablation.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .parse_filters(&std::env::var("DOCEE_LOG").unwrap_or_else(|_| "warn".into()))
        .format_timestamp(None)
        .init();
    let result = match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => Err(Failure::Usage(
            e.to_string()
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_owned(),
        )),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, name) = f.code();
            eprintln!("error: code={name} msg={}", f.message());
            ExitCode::from(code)
        }
    }
}
