//! BIO tagging of gold mentions and recovery of spans from tag sequences.

use super::{Document, EntityMention};

/// Label index as seen by the CRF.
pub type LabelIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    O,
    B(usize),
    I(usize),
}

/// Maps tags to CRF label indices: `O = 0`, `B-k = 1 + 2k`, `I-k = 2 + 2k`.
///
/// The untyped scheme has a single anonymous kind and three labels.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct LabelScheme {
    kinds: Vec<String>,
}

impl LabelScheme {
    pub fn untyped() -> Self {
        Self::default()
    }

    pub fn typed(kinds: Vec<String>) -> Self {
        Self { kinds }
    }

    pub fn is_typed(&self) -> bool {
        !self.kinds.is_empty()
    }

    pub fn num_kinds(&self) -> usize {
        self.kinds.len().max(1)
    }

    pub fn num_labels(&self) -> usize {
        1 + 2 * self.num_kinds()
    }

    pub fn encode(&self, tag: Tag) -> LabelIdx {
        match tag {
            Tag::O => 0,
            Tag::B(k) => 1 + 2 * k,
            Tag::I(k) => 2 + 2 * k,
        }
    }

    pub fn decode(&self, label: LabelIdx) -> Tag {
        assert!(label < self.num_labels(), "label {label} out of range");
        match label {
            0 => Tag::O,
            l if l % 2 == 1 => Tag::B((l - 1) / 2),
            l => Tag::I((l - 2) / 2),
        }
    }

    pub fn kind_index(&self, kind: Option<&str>) -> usize {
        kind.and_then(|k| self.kinds.iter().position(|x| x == k)).unwrap_or(0)
    }

    pub fn kind_name(&self, k: usize) -> Option<&str> {
        self.kinds.get(k).map(String::as_str)
    }
}

/// Removes overlapping mentions within each sentence: the longer span wins,
/// and on equal length the earlier-starting one. Exact duplicates collapse
/// silently. Returns `(kept, dropped)`, `kept` sorted by position.
pub fn resolve_overlaps(mentions: &[EntityMention]) -> (Vec<EntityMention>, Vec<EntityMention>) {
    let mut order: Vec<&EntityMention> = mentions.iter().collect();
    order.sort_by(|a, b| {
        (a.sentence_index, std::cmp::Reverse(a.len()), a.start).cmp(&(
            b.sentence_index,
            std::cmp::Reverse(b.len()),
            b.start,
        ))
    });
    let mut kept: Vec<EntityMention> = Vec::new();
    let mut dropped = Vec::new();
    for m in order {
        if kept.iter().any(|k| k.span_key() == m.span_key()) {
            continue;
        }
        if kept.iter().any(|k| k.overlaps(m)) {
            dropped.push(m.clone());
        } else {
            kept.push(m.clone());
        }
    }
    kept.sort();
    (kept, dropped)
}

/// One label sequence per sentence for the document's gold mentions.
pub fn to_bio(doc: &Document, scheme: &LabelScheme) -> Vec<Vec<LabelIdx>> {
    let (kept, dropped) = resolve_overlaps(&doc.gold_mentions);
    for d in &dropped {
        let winner = kept
            .iter()
            .find(|k| k.overlaps(d))
            .expect("dropped mention has a winner");
        log::warn!(
            "doc {}: overlapping mentions in sentence {}: kept [{}, {}), dropped [{}, {})",
            doc.doc_id,
            d.sentence_index,
            winner.start,
            winner.end,
            d.start,
            d.end
        );
    }
    let mut labels: Vec<Vec<LabelIdx>> = doc.sentences.iter().map(|s| vec![0; s.len()]).collect();
    for m in &kept {
        let k = scheme.kind_index(m.kind.as_deref());
        let row = &mut labels[m.sentence_index];
        row[m.start] = scheme.encode(Tag::B(k));
        for l in &mut row[m.start + 1..m.end] {
            *l = scheme.encode(Tag::I(k));
        }
    }
    labels
}

/// Maximal `B I*` runs of one kind as `(start, end, kind)`. An `I` that does
/// not continue a run of its kind opens a new mention.
pub fn decode_bio(labels: &[LabelIdx], scheme: &LabelScheme) -> Vec<(usize, usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &l) in labels.iter().enumerate() {
        match scheme.decode(l) {
            Tag::O => {
                if let Some((s, k)) = open.take() {
                    spans.push((s, i, k));
                }
            }
            Tag::B(k) => {
                if let Some((s, pk)) = open.take() {
                    spans.push((s, i, pk));
                }
                open = Some((i, k));
            }
            Tag::I(k) => match open {
                Some((_, pk)) if pk == k => {}
                _ => {
                    if let Some((s, pk)) = open.take() {
                        spans.push((s, i, pk));
                    }
                    open = Some((i, k));
                }
            },
        }
    }
    if let Some((s, k)) = open {
        spans.push((s, labels.len(), k));
    }
    spans
}
