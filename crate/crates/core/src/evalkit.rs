//! Entity, event-type and record metrics, plus the cross-sentence bucket
//! and single/multi-record slices.
//!
//! Every score is micro-averaged from summed counts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_records_json, records_to_json, Document, EntityMention, EventRecord, EventSchema, RawRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn prf(self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            counts: self,
            precision,
            recall,
            f1,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Self {
        let mut c = Counts::default();
        for x in iter {
            c.add(x);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn set_counts<T: Eq + std::hash::Hash>(pred: &HashSet<T>, gold: &HashSet<T>) -> Counts {
    let tp = pred.intersection(gold).count();
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// Exact `(sentence, start, end)` span matching, micro over documents.
pub fn entity_f1(pred: &[Vec<EntityMention>], gold: &[Vec<EntityMention>]) -> Prf {
    assert_eq!(pred.len(), gold.len(), "one mention list per document on each side");
    pred.iter()
        .zip(gold)
        .map(|(p, g)| {
            let p: HashSet<_> = p.iter().map(EntityMention::span_key).collect();
            let g: HashSet<_> = g.iter().map(EntityMention::span_key).collect();
            set_counts(&p, &g)
        })
        .sum::<Counts>()
        .prf()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub per_type: Vec<Prf>,
    pub micro: Prf,
}

pub fn type_f1(pred: &[BTreeSet<usize>], gold: &[BTreeSet<usize>], num_types: usize) -> TypeReport {
    assert_eq!(pred.len(), gold.len(), "one type set per document on each side");
    let mut per = vec![Counts::default(); num_types];
    for (p, g) in pred.iter().zip(gold) {
        for (t, c) in per.iter_mut().enumerate() {
            match (p.contains(&t), g.contains(&t)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    TypeReport {
        micro: per.iter().copied().sum::<Counts>().prf(),
        per_type: per.into_iter().map(Counts::prf).collect(),
    }
}

fn pair_counts(p: &EventRecord, g: &EventRecord) -> Counts {
    let mut c = Counts::default();
    for (a, b) in p.args.iter().zip(&g.args) {
        match (a, b) {
            (Some(x), Some(y)) if x == y => c.tp += 1,
            _ => {
                c.fp += usize::from(a.is_some());
                c.fn_ += usize::from(b.is_some());
            }
        }
    }
    c
}

/// One-to-one greedy matching of records of a single type. Pairs are taken
/// in order of most equal non-NULL roles, then fewest non-NULL arguments,
/// then the unordered pair of argument lists, then input position. Both
/// sides are put in canonical order first, so the result depends only on
/// the record contents.
pub fn match_records(pred: &[&EventRecord], gold: &[&EventRecord]) -> Vec<(usize, usize)> {
    let mut po: Vec<usize> = (0..pred.len()).collect();
    po.sort_by(|&a, &b| pred[a].args.cmp(&pred[b].args).then(a.cmp(&b)));
    let mut go: Vec<usize> = (0..gold.len()).collect();
    go.sort_by(|&a, &b| gold[a].args.cmp(&gold[b].args).then(a.cmp(&b)));
    let mut pairs = Vec::with_capacity(pred.len() * gold.len());
    for (pr, &pi) in po.iter().enumerate() {
        for (gr, &gi) in go.iter().enumerate() {
            let (p, g) = (pred[pi], gold[gi]);
            let equal = pair_counts(p, g).tp;
            let total = p.non_null_count() + g.non_null_count();
            let (lo, hi) = if p.args <= g.args {
                (&p.args, &g.args)
            } else {
                (&g.args, &p.args)
            };
            pairs.push((std::cmp::Reverse(equal), total, lo, hi, pr, gr, pi, gi));
        }
    }
    pairs.sort();
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gold.len()];
    let mut out = Vec::new();
    for &(.., pi, gi) in &pairs {
        if !used_p[pi] && !used_g[gi] {
            used_p[pi] = true;
            used_g[gi] = true;
            out.push((pi, gi));
        }
    }
    out.sort();
    out
}

/// Role-level counts of one document, per event type.
pub fn record_counts(pred: &[EventRecord], gold: &[EventRecord], num_types: usize) -> Vec<Counts> {
    let mut out = vec![Counts::default(); num_types];
    for (t, c) in out.iter_mut().enumerate() {
        let p: Vec<&EventRecord> = pred.iter().filter(|r| r.event_type == t).collect();
        let g: Vec<&EventRecord> = gold.iter().filter(|r| r.event_type == t).collect();
        let matched = match_records(&p, &g);
        let mut used_p = vec![false; p.len()];
        let mut used_g = vec![false; g.len()];
        for &(pi, gi) in &matched {
            used_p[pi] = true;
            used_g[gi] = true;
            c.add(pair_counts(p[pi], g[gi]));
        }
        for (i, r) in p.iter().enumerate() {
            if !used_p[i] {
                c.fp += r.non_null_count();
            }
        }
        for (i, r) in g.iter().enumerate() {
            if !used_g[i] {
                c.fn_ += r.non_null_count();
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub per_type: Vec<Prf>,
    pub micro: Prf,
}

pub fn record_micro_f1(pred: &[Vec<EventRecord>], gold: &[Vec<EventRecord>], num_types: usize) -> RecordReport {
    assert_eq!(pred.len(), gold.len(), "one record list per document on each side");
    let mut per = vec![Counts::default(); num_types];
    for (p, g) in pred.iter().zip(gold) {
        for (acc, c) in per.iter_mut().zip(record_counts(p, g, num_types)) {
            acc.add(c);
        }
    }
    RecordReport {
        micro: per.iter().copied().sum::<Counts>().prf(),
        per_type: per.into_iter().map(Counts::prf).collect(),
    }
}

/// Average number of sentences involved per gold record; `None` without
/// records.
pub fn avg_involved_sentences(doc: &Document) -> Option<f64> {
    if doc.gold_records.is_empty() {
        return None;
    }
    let total: usize = doc.gold_records.iter().map(|r| doc.involved_sentences(r).len()).sum();
    Some(total as f64 / doc.gold_records.len() as f64)
}

/// Sizes of `n` items split into four ordered buckets; the remainder goes to
/// the last buckets.
pub fn bucket_sizes(n: usize) -> [usize; 4] {
    let (base, r) = (n / 4, n % 4);
    std::array::from_fn(|i| base + usize::from(i >= 4 - r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub docs: usize,
    pub min_avg_sentences: Option<f64>,
    pub max_avg_sentences: Option<f64>,
    pub scores: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub buckets: Vec<Bucket>,
    pub excluded_docs: usize,
}

/// Four equal-size document sets by ascending average involved-sentence
/// count (ties by document id), scored from per-document record counts.
pub fn bucket_report(docs: &[Document], doc_counts: &[Counts]) -> BucketReport {
    assert_eq!(docs.len(), doc_counts.len());
    let mut ranked: Vec<(f64, &str, Counts)> = docs
        .iter()
        .zip(doc_counts)
        .filter_map(|(d, &c)| avg_involved_sentences(d).map(|a| (a, d.doc_id.as_str(), c)))
        .collect();
    let excluded_docs = docs.len() - ranked.len();
    if excluded_docs > 0 {
        log::info!("{excluded_docs} documents without records excluded from buckets");
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let mut buckets = Vec::with_capacity(4);
    let mut start = 0;
    for size in bucket_sizes(ranked.len()) {
        let slice = &ranked[start..start + size];
        start += size;
        buckets.push(Bucket {
            docs: size,
            min_avg_sentences: slice.first().map(|x| x.0),
            max_avg_sentences: slice.last().map(|x| x.0),
            scores: slice.iter().map(|x| x.2).sum::<Counts>().prf(),
        });
    }
    BucketReport { buckets, excluded_docs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleMultiReport {
    pub single_docs: usize,
    pub multi_docs: usize,
    /// `None` when the side has no documents.
    pub single: Option<Prf>,
    pub multi: Option<Prf>,
    pub excluded_docs: usize,
}

/// Splits documents by gold record count (one vs. more than one).
pub fn single_multi_report(docs: &[Document], doc_counts: &[Counts]) -> SingleMultiReport {
    assert_eq!(docs.len(), doc_counts.len());
    let (mut single, mut multi) = (Vec::new(), Vec::new());
    let mut excluded_docs = 0;
    for (d, &c) in docs.iter().zip(doc_counts) {
        match d.gold_records.len() {
            0 => excluded_docs += 1,
            1 => single.push(c),
            _ => multi.push(c),
        }
    }
    if excluded_docs > 0 {
        log::info!("{excluded_docs} documents without records excluded from S./M. split");
    }
    let score = |v: &[Counts]| (!v.is_empty()).then(|| v.iter().copied().sum::<Counts>().prf());
    SingleMultiReport {
        single_docs: single.len(),
        multi_docs: multi.len(),
        single: score(&single),
        multi: score(&multi),
        excluded_docs,
    }
}

/// Model output for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub doc_id: String,
    pub types: BTreeSet<usize>,
    pub records: Vec<EventRecord>,
    /// Predicted mentions, when the producer kept them.
    pub mentions: Option<Vec<EntityMention>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrediction {
    doc_id: String,
    types: Vec<String>,
    records: Vec<RawRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mentions: Option<Vec<RawSpan>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    sent: usize,
    start: usize,
    end: usize,
    surface: String,
}

pub fn predictions_to_json(preds: &[Prediction], schema: &EventSchema) -> serde_json::Value {
    let raw: Vec<RawPrediction> = preds
        .iter()
        .map(|p| RawPrediction {
            doc_id: p.doc_id.clone(),
            types: p.types.iter().map(|&t| schema.type_name(t).to_owned()).collect(),
            records: records_to_json(&p.records, schema),
            mentions: p.mentions.as_ref().map(|ms| {
                ms.iter()
                    .map(|m| RawSpan {
                        sent: m.sentence_index,
                        start: m.start,
                        end: m.end,
                        surface: m.surface.clone(),
                    })
                    .collect()
            }),
        })
        .collect();
    serde_json::to_value(raw).expect("predictions serialise")
}

pub fn parse_predictions(text: &str, schema: &EventSchema) -> Result<Vec<Prediction>> {
    let raw: Vec<RawPrediction> = serde_json::from_str(text).map_err(|e| Error::json("prediction dump", e))?;
    raw.into_iter()
        .map(|r| {
            let types = r
                .types
                .iter()
                .map(|t| {
                    schema
                        .type_id(t)
                        .ok_or_else(|| Error::schema(&r.doc_id, "types", format!("unknown event type `{t}`")))
                })
                .collect::<Result<_>>()?;
            let records = read_records_json(&r.records, schema, &r.doc_id)?;
            let mentions = r.mentions.map(|ms| {
                ms.into_iter()
                    .map(|m| EntityMention {
                        sentence_index: m.sent,
                        start: m.start,
                        end: m.end,
                        surface: m.surface,
                        kind: None,
                    })
                    .collect()
            });
            Ok(Prediction {
                doc_id: r.doc_id,
                types,
                records,
                mentions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub docs: usize,
    /// Absent when the predictions carry no mentions.
    pub entity: Option<Prf>,
    pub types: TypeReport,
    pub records: RecordReport,
    pub buckets: BucketReport,
    pub single_multi: SingleMultiReport,
    #[serde(skip)]
    pub type_names: Vec<String>,
}

/// Scores `preds` against the gold annotations of `docs`, aligned by
/// document id. Documents without a prediction count as empty predictions.
pub fn evaluate(docs: &[Document], preds: &[Prediction], schema: &EventSchema) -> MetricReport {
    let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let empty = |d: &Document| Prediction {
        doc_id: d.doc_id.clone(),
        types: BTreeSet::new(),
        records: Vec::new(),
        mentions: Some(Vec::new()),
    };
    let aligned: Vec<Prediction> = docs
        .iter()
        .map(|d| match by_id.get(d.doc_id.as_str()) {
            Some(p) => (*p).clone(),
            None => {
                log::warn!("no prediction for document {}, scored as empty", d.doc_id);
                empty(d)
            }
        })
        .collect();
    let nt = schema.num_types();
    let entity = aligned.iter().all(|p| p.mentions.is_some()).then(|| {
        let pm: Vec<Vec<EntityMention>> = aligned.iter().map(|p| p.mentions.clone().unwrap_or_default()).collect();
        let gm: Vec<Vec<EntityMention>> = docs.iter().map(|d| d.gold_mentions.clone()).collect();
        entity_f1(&pm, &gm)
    });
    let pt: Vec<BTreeSet<usize>> = aligned.iter().map(|p| p.types.clone()).collect();
    let gt: Vec<BTreeSet<usize>> = docs.iter().map(|d| d.gold_types.clone()).collect();
    let pr: Vec<Vec<EventRecord>> = aligned.iter().map(|p| p.records.clone()).collect();
    let gr: Vec<Vec<EventRecord>> = docs.iter().map(|d| d.gold_records.clone()).collect();
    let doc_counts: Vec<Counts> = pr
        .iter()
        .zip(&gr)
        .map(|(p, g)| record_counts(p, g, nt).into_iter().sum())
        .collect();
    MetricReport {
        docs: docs.len(),
        entity,
        types: type_f1(&pt, &gt, nt),
        records: record_micro_f1(&pr, &gr, nt),
        buckets: bucket_report(docs, &doc_counts),
        single_multi: single_multi_report(docs, &doc_counts),
        type_names: schema.type_names().to_vec(),
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn prf_row(name: &str, p: &Prf) -> Vec<String> {
    vec![
        name.to_owned(),
        pct(p.precision),
        pct(p.recall),
        pct(p.f1),
        p.counts.tp.to_string(),
        p.counts.fp.to_string(),
        p.counts.fn_.to_string(),
    ]
}

const PRF_HEADER: [&str; 7] = ["", "P", "R", "F1", "TP", "FP", "FN"];

impl MetricReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serialises");
        let names: IndexMap<&str, &Prf> = self
            .type_names
            .iter()
            .map(String::as_str)
            .zip(&self.records.per_type)
            .collect();
        v["records"]["by_name"] = serde_json::to_value(names).expect("serialises");
        v
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let name = |t: usize| self.type_names.get(t).cloned().unwrap_or_else(|| format!("type{t}"));
        let mut rows: Vec<Vec<String>> = Vec::new();
        if let Some(e) = &self.entity {
            rows.push(prf_row("entity", e));
        }
        rows.push(prf_row("event types", &self.types.micro));
        rows.push(prf_row("records", &self.records.micro));
        let _ = writeln!(out, "overall ({} documents)", self.docs);
        out.push_str(&table(&PRF_HEADER, &rows));
        let rows: Vec<Vec<String>> = self
            .records
            .per_type
            .iter()
            .enumerate()
            .map(|(t, p)| prf_row(&name(t), p))
            .collect();
        out.push_str("\nrecords by type\n");
        out.push_str(&table(&PRF_HEADER, &rows));
        let rows: Vec<Vec<String>> = ["I", "II", "III", "IV"]
            .iter()
            .zip(&self.buckets.buckets)
            .map(|(n, b)| {
                let range = match (b.min_avg_sentences, b.max_avg_sentences) {
                    (Some(lo), Some(hi)) => format!("{lo:.2}-{hi:.2}"),
                    _ => "-".into(),
                };
                vec![n.to_string(), b.docs.to_string(), range, pct(b.scores.f1)]
            })
            .collect();
        out.push_str("\ncross-sentence buckets\n");
        out.push_str(&table(&["set", "docs", "avg sents", "F1"], &rows));
        let side = |p: &Option<Prf>, n: usize| match p {
            Some(p) => vec![n.to_string(), pct(p.precision), pct(p.recall), pct(p.f1)],
            None => vec![n.to_string(), "-".into(), "-".into(), "-".into()],
        };
        let mut s = vec!["S.".to_owned()];
        s.extend(side(&self.single_multi.single, self.single_multi.single_docs));
        let mut m = vec!["M.".to_owned()];
        m.extend(side(&self.single_multi.multi, self.single_multi.multi_docs));
        out.push_str("\nsingle vs multi record\n");
        out.push_str(&table(&["", "docs", "P", "R", "F1"], &[s, m]));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, args: &[Option<&str>]) -> EventRecord {
        EventRecord {
            event_type: t,
            args: args.iter().map(|a| a.map(str::to_owned)).collect(),
        }
    }

    #[test]
    fn zero_over_zero_is_zero() {
        let p = Counts::default().prf();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bucket_sizes_push_remainder_late() {
        assert_eq!(bucket_sizes(4), [1, 1, 1, 1]);
        assert_eq!(bucket_sizes(5), [1, 1, 1, 2]);
        assert_eq!(bucket_sizes(7), [1, 2, 2, 2]);
        assert_eq!(bucket_sizes(2), [0, 0, 1, 1]);
    }

    #[test]
    fn unmatched_records_count_their_filled_roles() {
        let c = record_counts(&[rec(0, &[Some("a"), None])], &[], 1);
        assert_eq!(c[0], Counts { tp: 0, fp: 1, fn_: 0 });
        let c = record_counts(&[], &[rec(0, &[Some("a"), Some("b")])], 1);
        assert_eq!(c[0], Counts { tp: 0, fp: 0, fn_: 2 });
    }

    #[test]
    fn matching_prefers_most_equal_roles() {
        let p = [rec(0, &[Some("a"), Some("b")]), rec(0, &[Some("c"), Some("d")])];
        let g = [rec(0, &[Some("c"), Some("d")]), rec(0, &[Some("a"), Some("x")])];
        let pr: Vec<&EventRecord> = p.iter().collect();
        let gr: Vec<&EventRecord> = g.iter().collect();
        assert_eq!(match_records(&pr, &gr), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn text_report_renders() {
        let schema = EventSchema::synthetic(1, 2).unwrap();
        let doc = Document {
            doc_id: "d".into(),
            sentences: vec![vec!["a".into()]],
            gold_mentions: vec![EntityMention::from_tokens(0, 0, 1, &["a".into()])],
            gold_types: [0].into(),
            gold_records: vec![rec(0, &[Some("a"), None])],
        };
        let pred = Prediction {
            doc_id: "d".into(),
            types: [0].into(),
            records: vec![rec(0, &[Some("a"), None])],
            mentions: None,
        };
        let r = evaluate(&[doc], &[pred], &schema);
        assert_eq!(r.records.micro.f1, 1.0);
        assert!(r.entity.is_none());
        let text = r.to_text();
        assert!(text.contains("records"));
        assert!(r.to_json()["records"]["by_name"]["T0"]["f1"].as_f64() == Some(1.0));
    }
}
