//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! the tape through [`Tape::param`] (memoised per tape) and receive their
//! gradients from [`Tape::backward`].

use crate::ner::{crf_marginals, crf_path_score, LabelIdx};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Mat;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-12;

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    SumAll(Var),
    CrfNll {
        emissions: Var,
        transitions: Var,
        start: Var,
        end: Var,
        gold: Vec<LabelIdx>,
    },
    Bce(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "add_row expects a 1 x cols row");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "mul_row expects a 1 x cols row");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o *= b;
            }
        }
        self.push(value, Op::MulRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let value = self.value(a).zip_map(&c, |x, y| x * y);
        self.push(value, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Per-row standardisation without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols() as f64;
        let mut inv_std = Vec::with_capacity(value.rows());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(value, Op::LayerNorm(a, inv_std))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::concat_rows(&mats);
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Mat::concat_cols(&mats);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_rows(start, end);
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_cols(start, end);
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let value = Mat::from_vec(indices.len(), t.cols(), data);
        self.push(value, Op::GatherRows(table, indices.to_vec()))
    }

    /// Column-wise mean, `1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.rows() > 0, "mean over zero rows");
        let mut value = av.sum_rows();
        value.scale_assign(1.0 / av.rows() as f64);
        self.push(value, Op::MeanRows(a))
    }

    /// Column-wise max, `1 x cols`; gradient flows to the first maximal row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.rows() > 0, "max over zero rows");
        let mut value = Mat::filled(1, av.cols(), f64::NEG_INFINITY);
        let mut arg = vec![0usize; av.cols()];
        for r in 0..av.rows() {
            for (c, &x) in av.row(r).iter().enumerate() {
                if x > value[(0, c)] {
                    value[(0, c)] = x;
                    arg[c] = r;
                }
            }
        }
        self.push(value, Op::MaxRows(a, arg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::filled(1, 1, self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Sum of several `1 x 1` scalars.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        match parts {
            [] => self.constant(Mat::zeros(1, 1)),
            [one] => *one,
            _ => {
                let col = self.concat_rows(parts);
                self.sum_all(col)
            }
        }
    }

    /// Negative log-likelihood of `gold` under a linear-chain CRF.
    ///
    /// `emissions` is `len x labels`, `transitions` is `labels x labels`
    /// (from-row, to-column), `start` and `end` are `1 x labels`.
    pub fn crf_nll(&mut self, emissions: Var, transitions: Var, start: Var, end: Var, gold: &[LabelIdx]) -> Var {
        let (e, t, s, n) = (
            self.value(emissions),
            self.value(transitions),
            self.value(start),
            self.value(end),
        );
        let log_z = crf_marginals(e, t, s, n).log_partition;
        let gold_score = crf_path_score(e, t, s, n, gold);
        let value = Mat::filled(1, 1, log_z - gold_score);
        self.push(
            value,
            Op::CrfNll {
                emissions,
                transitions,
                start,
                end,
                gold: gold.to_vec(),
            },
        )
    }

    /// Summed two-sided binary cross-entropy of probabilities against
    /// `targets` (same number of entries), with clamping at [`BCE_EPS`].
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Var {
        let p = self.value(probs);
        assert_eq!(p.len(), targets.len(), "bce target length mismatch");
        let value = Mat::filled(1, 1, bce_value(p.data(), targets));
        self.push(value, Op::Bce(probs, targets.to_vec()))
    }

    /// Reverse pass from a `1 x 1` loss; returns gradients for every
    /// parameter that entered the tape.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut out = Grads::new(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_rows());
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let av = self.value(*a);
                    let rv = self.value(*row);
                    let mut ga = g.clone();
                    let mut gr = Mat::zeros(1, rv.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga[(r, c)] *= rv[(0, c)];
                            gr[(0, c)] += g[(r, c)] * av[(r, c)];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *row, gr);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, g.zip_map(c, |x, y| x * y)),
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Relu(a) => acc(&mut grads, *a, g.zip_map(y, |x, out| if out > 0.0 { x } else { 0.0 })),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |x, s| x * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |x, t| x * (1.0 - t * t))),
                Op::SoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for (o, &s) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o = s * (*o - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, inv_std) => {
                    let n = y.cols() as f64;
                    let mut ga = g.clone();
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = is * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        acc(&mut grads, p, g.slice_rows(offset, offset + rows));
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        acc(&mut grads, p, g.slice_cols(offset, offset + cols));
                        offset += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Mat::zeros(rows, cols);
                    ga.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(table, indices) => {
                    let (rows, cols) = self.shape(*table);
                    let mut gt = Mat::zeros(rows, cols);
                    for (i, &src) in indices.iter().enumerate() {
                        for (o, v) in gt.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let inv = 1.0 / rows as f64;
                    let mut ga = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o = v * inv;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaxRows(a, arg) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Mat::zeros(rows, cols);
                    for (c, &r) in arg.iter().enumerate() {
                        ga[(r, c)] = g[(0, c)];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = self.shape(*a);
                    acc(&mut grads, *a, Mat::filled(rows, cols, g.scalar()));
                }
                Op::CrfNll {
                    emissions,
                    transitions,
                    start,
                    end,
                    gold,
                } => {
                    let scale = g.scalar();
                    let e = self.value(*emissions);
                    let m = crf_marginals(e, self.value(*transitions), self.value(*start), self.value(*end));
                    let labels = e.cols();
                    let len = e.rows();
                    let mut ge = m.unary;
                    let mut gt = m.pairwise;
                    let mut gs = Mat::zeros(1, labels);
                    let mut gn = Mat::zeros(1, labels);
                    for y in 0..labels {
                        gs[(0, y)] = ge[(0, y)];
                        gn[(0, y)] = ge[(len - 1, y)];
                    }
                    for (i, &y) in gold.iter().enumerate() {
                        ge[(i, y)] -= 1.0;
                        if i > 0 {
                            gt[(gold[i - 1], y)] -= 1.0;
                        }
                    }
                    gs[(0, gold[0])] -= 1.0;
                    gn[(0, gold[len - 1])] -= 1.0;
                    for m in [&mut ge, &mut gt, &mut gs, &mut gn] {
                        m.scale_assign(scale);
                    }
                    acc(&mut grads, *emissions, ge);
                    acc(&mut grads, *transitions, gt);
                    acc(&mut grads, *start, gs);
                    acc(&mut grads, *end, gn);
                }
                Op::Bce(probs, targets) => {
                    let scale = g.scalar();
                    let p = self.value(*probs);
                    let gp: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| {
                            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                                0.0
                            } else {
                                scale * (-t / p + (1.0 - t) / (1.0 - p))
                            }
                        })
                        .collect();
                    acc(&mut grads, *probs, Mat::from_vec(p.rows(), p.cols(), gp));
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `-sum_t [y_t ln p_t + (1 - y_t) ln(1 - p_t)]` with clamped probabilities.
pub fn bce_value(probs: &[f64], targets: &[f64]) -> f64 {
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite-difference check of every parameter entry.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Tape<'_>) -> Var) {
        let grads = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss)
        };
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data()[k];
                store.get_mut(id).data_mut()[k] = orig + h;
                let plus = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.value(l).scalar()
                };
                store.get_mut(id).data_mut()[k] = orig - h;
                let minus = {
                    let mut t = Tape::new(store);
                    let l = f(&mut t);
                    t.value(l).scalar()
                };
                store.get_mut(id).data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-5,
                    "{}[{k}]: analytic {analytic} numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn elementwise_and_structural_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let a = store.add("a", Mat::uniform(3, 4, 1.0, &mut rng));
        let b = store.add("b", Mat::uniform(4, 2, 1.0, &mut rng));
        let r = store.add("r", Mat::uniform(1, 4, 1.0, &mut rng));
        check(&mut store, |t| {
            let (a, b, r) = (t.param(a), t.param(b), t.param(r));
            let x = t.add_row(a, r);
            let x = t.mul_row(x, r);
            let x = t.layer_norm(x);
            let s = t.softmax_rows(x);
            let th = t.tanh(x);
            let m = t.mul(s, th);
            let y = t.matmul(m, b);
            let y = t.sigmoid(y);
            let yt = t.transpose(y);
            let c = t.concat_cols(&[y, y]);
            let c = t.slice_cols(c, 1, 3);
            let rr = t.concat_rows(&[c, c]);
            let rr = t.slice_rows(rr, 2, 5);
            let g = t.gather_rows(a, &[2, 0, 2]);
            let mx = t.max_rows(g);
            let mean = t.mean_rows(rr);
            let s1 = t.sum_all(mx);
            let s2 = t.sum_all(mean);
            let s3 = t.sum_all(yt);
            let d = t.sub(s1, s2);
            let d = t.scale(d, 0.7);
            t.sum_scalars(&[d, s3])
        });
    }

    #[test]
    fn bce_gradient_and_uniform_value() {
        let mut store = ParamStore::new();
        let p = store.add("p", Mat::row_vector(&[0.2, 0.7, 0.5]));
        check(&mut store, |t| {
            let p = t.param(p);
            t.bce(p, &[1.0, 0.0, 1.0])
        });
        let v = bce_value(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]);
        assert!((v - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn relu_gradient_is_masked() {
        let mut store = ParamStore::new();
        let p = store.add("p", Mat::row_vector(&[-1.0, 2.0]));
        let mut t = Tape::new(&store);
        let x = t.param(p);
        let y = t.relu(x);
        let s = t.sum_all(y);
        let g = t.backward(s);
        assert_eq!(g.get(p).unwrap().data(), &[0.0, 1.0]);
    }
}
