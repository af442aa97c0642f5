//! Linear-chain CRF tagging: negative log-likelihood, marginals, Viterbi
//! decoding and mention extraction.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::corpus::{decode_bio, EntityMention, LabelScheme};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

pub use crate::corpus::LabelIdx;

/// Transition scores of a CRF: `transitions[(from, to)]`, plus start and
/// stop scores as `1 x labels` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    pub transitions: Mat,
    pub start: Mat,
    pub end: Mat,
}

impl CrfParams {
    pub fn zeros(labels: usize) -> Self {
        Self {
            transitions: Mat::zeros(labels, labels),
            start: Mat::zeros(1, labels),
            end: Mat::zeros(1, labels),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.transitions.rows()
    }
}

pub(crate) struct CrfMarginals {
    pub log_partition: f64,
    /// `len x labels` posterior label probabilities.
    pub unary: Mat,
    /// `labels x labels` expected transition counts summed over positions.
    pub pairwise: Mat,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Score of one label path.
pub(crate) fn crf_path_score(e: &Mat, t: &Mat, start: &Mat, end: &Mat, path: &[LabelIdx]) -> f64 {
    let mut s = start[(0, path[0])] + e[(0, path[0])];
    for i in 1..path.len() {
        s += t[(path[i - 1], path[i])] + e[(i, path[i])];
    }
    s + end[(0, path[path.len() - 1])]
}

/// Forward-backward in log space.
pub(crate) fn crf_marginals(e: &Mat, t: &Mat, start: &Mat, end: &Mat) -> CrfMarginals {
    let (len, labels) = e.shape();
    assert!(len > 0, "CRF over an empty sequence");
    let mut alpha = Mat::zeros(len, labels);
    for y in 0..labels {
        alpha[(0, y)] = start[(0, y)] + e[(0, y)];
    }
    for i in 1..len {
        for y in 0..labels {
            alpha[(i, y)] = log_sum_exp((0..labels).map(|p| alpha[(i - 1, p)] + t[(p, y)])) + e[(i, y)];
        }
    }
    let mut beta = Mat::zeros(len, labels);
    for y in 0..labels {
        beta[(len - 1, y)] = end[(0, y)];
    }
    for i in (0..len - 1).rev() {
        for y in 0..labels {
            beta[(i, y)] = log_sum_exp((0..labels).map(|n| t[(y, n)] + e[(i + 1, n)] + beta[(i + 1, n)]));
        }
    }
    let log_partition = log_sum_exp((0..labels).map(|y| alpha[(len - 1, y)] + end[(0, y)]));
    let mut unary = Mat::zeros(len, labels);
    for i in 0..len {
        for y in 0..labels {
            unary[(i, y)] = (alpha[(i, y)] + beta[(i, y)] - log_partition).exp();
        }
    }
    let mut pairwise = Mat::zeros(labels, labels);
    for i in 1..len {
        for p in 0..labels {
            for y in 0..labels {
                pairwise[(p, y)] += (alpha[(i - 1, p)] + t[(p, y)] + e[(i, y)] + beta[(i, y)] - log_partition).exp();
            }
        }
    }
    CrfMarginals {
        log_partition,
        unary,
        pairwise,
    }
}

fn check_shapes(emissions: &Mat, params: &CrfParams) -> Result<()> {
    let labels = params.num_labels();
    if emissions.rows() == 0 {
        return Err(Error::Shape("empty emission sequence".into()));
    }
    if emissions.cols() != labels
        || params.transitions.cols() != labels
        || params.start.shape() != (1, labels)
        || params.end.shape() != (1, labels)
    {
        return Err(Error::Shape(format!(
            "emissions {:?} incompatible with {labels} labels",
            emissions.shape()
        )));
    }
    Ok(())
}

/// `log Z - score(gold)`.
pub fn crf_nll(emissions: &Mat, gold: &[LabelIdx], params: &CrfParams) -> Result<f64> {
    check_shapes(emissions, params)?;
    if gold.len() != emissions.rows() {
        return Err(Error::Shape(format!(
            "{} gold labels for {} emission rows",
            gold.len(),
            emissions.rows()
        )));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g >= params.num_labels()) {
        return Err(Error::Shape(format!("gold label {bad} out of range")));
    }
    let (t, s, n) = (&params.transitions, &params.start, &params.end);
    Ok(crf_marginals(emissions, t, s, n).log_partition - crf_path_score(emissions, t, s, n, gold))
}

pub fn path_score(emissions: &Mat, params: &CrfParams, path: &[LabelIdx]) -> f64 {
    crf_path_score(emissions, &params.transitions, &params.start, &params.end, path)
}

/// Highest-scoring label path. Among equally scoring paths the
/// lexicographically smallest label-index sequence wins.
///
/// Runs the max-product recursion right to left, then picks labels left to
/// right, taking the smallest label whose best completion attains the
/// optimum.
pub fn viterbi_decode(emissions: &Mat, params: &CrfParams) -> Result<Vec<LabelIdx>> {
    check_shapes(emissions, params)?;
    let (len, labels) = emissions.shape();
    let (t, e) = (&params.transitions, emissions);
    // best[i][y]: best score of positions i+1.. given label y at i.
    let mut best = Mat::zeros(len, labels);
    for y in 0..labels {
        best[(len - 1, y)] = params.end[(0, y)];
    }
    for i in (0..len - 1).rev() {
        for y in 0..labels {
            best[(i, y)] = (0..labels)
                .map(|n| t[(y, n)] + e[(i + 1, n)] + best[(i + 1, n)])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let first = |y: usize| params.start[(0, y)] + e[(0, y)] + best[(0, y)];
    let top = (0..labels).map(first).fold(f64::NEG_INFINITY, f64::max);
    let mut path = Vec::with_capacity(len);
    path.push((0..labels).find(|&y| first(y) == top).expect("finite scores"));
    for i in 1..len {
        let prev = path[i - 1];
        let target = best[(i - 1, prev)];
        let y = (0..labels)
            .find(|&n| t[(prev, n)] + e[(i, n)] + best[(i, n)] == target)
            .expect("optimal continuation exists");
        path.push(y);
    }
    Ok(path)
}

/// Mentions from one sentence's label sequence; see [`decode_bio`] for the
/// repair of orphan `I` labels.
pub fn extract_mentions(
    labels: &[LabelIdx],
    sentence_index: usize,
    tokens: &[String],
    scheme: &LabelScheme,
) -> Vec<EntityMention> {
    decode_bio(labels, scheme)
        .into_iter()
        .map(|(s, e, k)| {
            let mut m = EntityMention::from_tokens(sentence_index, s, e, tokens);
            if scheme.is_typed() {
                m.kind = scheme.kind_name(k).map(str::to_owned);
            }
            m
        })
        .collect()
}

/// Trainable CRF tagger head: emission projection plus transitions.
#[derive(Debug, Clone)]
pub struct NerParams {
    pub emission_w: ParamId,
    pub emission_b: ParamId,
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl NerParams {
    pub fn register<R: Rng>(store: &mut ParamStore, d_model: usize, labels: usize, rng: &mut R) -> Self {
        Self {
            emission_w: store.add("ner.emission.w", Mat::xavier(d_model, labels, rng)),
            emission_b: store.add("ner.emission.b", Mat::zeros(1, labels)),
            transitions: store.add("ner.transitions", Mat::zeros(labels, labels)),
            start: store.add("ner.start", Mat::zeros(1, labels)),
            end: store.add("ner.end", Mat::zeros(1, labels)),
        }
    }

    pub fn emissions(&self, tape: &mut Tape<'_>, token_reps: Var) -> Var {
        let w = tape.param(self.emission_w);
        let b = tape.param(self.emission_b);
        let x = tape.matmul(token_reps, w);
        tape.add_row(x, b)
    }

    pub fn loss(&self, tape: &mut Tape<'_>, emissions: Var, gold: &[LabelIdx]) -> Var {
        let t = tape.param(self.transitions);
        let s = tape.param(self.start);
        let e = tape.param(self.end);
        tape.crf_nll(emissions, t, s, e, gold)
    }

    pub fn crf_values(&self, store: &ParamStore) -> CrfParams {
        CrfParams {
            transitions: store.get(self.transitions).clone(),
            start: store.get(self.start).clone(),
            end: store.get(self.end).clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, len: usize) -> (Mat, CrfParams) {
        (
            Mat::uniform(len, 3, 2.0, rng),
            CrfParams {
                transitions: Mat::uniform(3, 3, 2.0, rng),
                start: Mat::uniform(1, 3, 2.0, rng),
                end: Mat::uniform(1, 3, 2.0, rng),
            },
        )
    }

    #[test]
    fn uniform_single_token_costs_ln3() {
        let nll = crf_nll(&Mat::zeros(1, 3), &[2], &CrfParams::zeros(3)).unwrap();
        assert!((nll - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(crf_nll(&Mat::zeros(3, 3), &[0, 0], &CrfParams::zeros(3)).is_err());
        assert!(viterbi_decode(&Mat::zeros(2, 4), &CrfParams::zeros(3)).is_err());
    }

    #[test]
    fn stronger_outside_emission_lowers_all_outside_loss() {
        let params = CrfParams::zeros(3);
        let gold = [0, 0, 0, 0];
        let mut losses = Vec::new();
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let mut e = Mat::zeros(4, 3);
            for i in 0..4 {
                e[(i, 0)] = scale;
            }
            losses.push(crf_nll(&e, &gold, &params).unwrap());
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn dominant_outside_decodes_all_outside() {
        let mut e = Mat::zeros(5, 3);
        for i in 0..5 {
            e[(i, 0)] = 100.0;
        }
        assert_eq!(viterbi_decode(&e, &CrfParams::zeros(3)).unwrap(), vec![0; 5]);
    }

    #[test]
    fn marginals_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (e, p) = random_instance(&mut rng, 5);
        let m = crf_marginals(&e, &p.transitions, &p.start, &p.end);
        for i in 0..5 {
            let s: f64 = m.unary.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((m.pairwise.sum() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn extract_mentions_uses_surfaces() {
        let toks: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let ms = extract_mentions(&[0, 1, 2, 0], 3, &toks, &LabelScheme::untyped());
        assert_eq!(ms.len(), 1);
        assert_eq!((ms[0].sentence_index, ms[0].start, ms[0].end), (3, 1, 3));
        assert_eq!(ms[0].surface, "bc");
    }
}
