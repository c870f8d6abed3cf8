//! Reverse-mode differentiation over [`Tensor`] operations.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar (`1 x 1`) node walks the record in reverse
//! and produces gradients for every node that depends on a parameter.
//!
//! Grouped operations (`concat_groups`, `slice_groups`, `attention`, ...) treat
//! a tensor with `groups * len` rows as `groups` stacked blocks, which is how a
//! mini-batch of independent token sequences is laid out.

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { a: Var, inv_std: Vec<f64> },
    Tile { a: Var, times: usize },
    ConcatGroups { a: Var, b: Var, groups: usize },
    SliceGroups { a: Var, groups: usize, start: usize },
    MeanGroups { a: Var, groups: usize },
    Reshape(Var),
    Attention { q: Var, k: Var, v: Var, groups: usize, heads: usize, probs: Vec<f64> },
    SqErrSum { a: Var, target: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: Vec<(Var, ParamId)>,
    track: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

#[inline]
fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

impl Graph {
    /// Graph that records operations for a later [`Graph::backward`].
    pub fn new() -> Self {
        Self { track: true, ..Default::default() }
    }

    /// Graph for inference only: parameters are not marked for gradients.
    pub fn inference() -> Self {
        Self { track: false, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Leaf that receives a gradient even though it is not a stored parameter.
    /// Used by gradient checks on raw inputs.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let track = self.track;
        self.push(t, Op::Param, track)
    }

    /// Bind a stored parameter. Binding the same id twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(v, _)) = self.params.iter().find(|(_, p)| *p == id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.params.push((v, id));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, true)
    }

    fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let m = if ta { av.cols() } else { av.rows() };
        let n = if tb { bv.rows() } else { bv.cols() };
        let mut out = Tensor::zeros(m, n);
        gemm(av, ta, bv, tb, &mut out, 0.0);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds the `1 x cols` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "bias must be a row");
        assert_eq!(bv.cols(), self.value(a).cols(), "bias width");
        let mut out = self.value(a).clone();
        let b = bv.data().to_vec();
        for i in 0..out.rows() {
            for (o, bj) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bj;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        self.push(out, Op::AddBias(a, bias), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(c);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = gelu(*x));
        let ng = self.needs(a);
        self.push(out, Op::Gelu(a), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            softmax_row(av.row(i), out.row_mut(i));
        }
        let ng = self.needs(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let cols = av.cols() as f64;
        let mut out = av.clone();
        let mut inv_std = Vec::with_capacity(av.rows());
        for i in 0..av.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * r);
            inv_std.push(r);
        }
        let ng = self.needs(a);
        self.push(out, Op::LayerNorm { a, inv_std }, ng)
    }

    /// Stack `times` copies of `a` vertically.
    pub fn tile(&mut self, a: Var, times: usize) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len() * times);
        for _ in 0..times {
            data.extend_from_slice(av.data());
        }
        let out = Tensor::from_vec(av.rows() * times, av.cols(), data).expect("tile shape");
        let ng = self.needs(a);
        self.push(out, Op::Tile { a, times }, ng)
    }

    /// Per group, rows of `a` followed by rows of `b`.
    pub fn concat_groups(&mut self, a: Var, b: Var, groups: usize) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "concat width");
        assert!(groups > 0 && av.rows() % groups == 0 && bv.rows() % groups == 0);
        let (la, lb) = (av.rows() / groups, bv.rows() / groups);
        let cols = av.cols();
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for g in 0..groups {
            data.extend_from_slice(&av.data()[g * la * cols..(g + 1) * la * cols]);
            data.extend_from_slice(&bv.data()[g * lb * cols..(g + 1) * lb * cols]);
        }
        let out = Tensor::from_vec(groups * (la + lb), cols, data).expect("concat shape");
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::ConcatGroups { a, b, groups }, ng)
    }

    /// Per group, rows `start..start + len`.
    pub fn slice_groups(&mut self, a: Var, groups: usize, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(groups > 0 && av.rows() % groups == 0);
        let l = av.rows() / groups;
        assert!(start + len <= l, "slice out of range");
        let cols = av.cols();
        let mut data = Vec::with_capacity(groups * len * cols);
        for g in 0..groups {
            let r0 = g * l + start;
            data.extend_from_slice(&av.data()[r0 * cols..(r0 + len) * cols]);
        }
        let out = Tensor::from_vec(groups * len, cols, data).expect("slice shape");
        let ng = self.needs(a);
        self.push(out, Op::SliceGroups { a, groups, start }, ng)
    }

    /// Mean of the rows of each group: `groups x cols`.
    pub fn mean_groups(&mut self, a: Var, groups: usize) -> Var {
        let av = self.value(a);
        assert!(groups > 0 && av.rows() % groups == 0);
        let l = av.rows() / groups;
        let mut out = Tensor::zeros(groups, av.cols());
        for g in 0..groups {
            for r in 0..l {
                for (o, x) in out.row_mut(g).iter_mut().zip(av.row(g * l + r)) {
                    *o += x / l as f64;
                }
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::MeanGroups { a, groups }, ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols).expect("reshape");
        let ng = self.needs(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Grouped multi-head scaled dot-product attention.
    ///
    /// `q` is `groups*lq x dq`, `k` is `groups*lk x dq`, `v` is `groups*lk x dv`.
    /// Head `h` uses columns `h*dq/heads..` of `q`/`k` and `h*dv/heads..` of `v`;
    /// head outputs are concatenated along columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qv.cols(), kv.cols(), "query/key width");
        assert_eq!(kv.rows(), vv.rows(), "key/value rows");
        assert!(groups > 0 && qv.rows() % groups == 0 && kv.rows() % groups == 0);
        assert!(heads > 0 && qv.cols() % heads == 0 && vv.cols() % heads == 0);
        let (lq, lk) = (qv.rows() / groups, kv.rows() / groups);
        let (dh, dvh) = (qv.cols() / heads, vv.cols() / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(qv.rows(), vv.cols());
        let mut probs = vec![0.0; groups * heads * lq * lk];
        let mut scores = vec![0.0; lk];
        for g in 0..groups {
            for h in 0..heads {
                for i in 0..lq {
                    let qi = &qv.row(g * lq + i)[h * dh..(h + 1) * dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &kv.row(g * lk + j)[h * dh..(h + 1) * dh];
                        *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let base = ((g * heads + h) * lq + i) * lk;
                    let p = &mut probs[base..base + lk];
                    softmax_row(&scores, p);
                    let orow = &mut out.row_mut(g * lq + i)[h * dvh..(h + 1) * dvh];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vv.row(g * lk + j)[h * dvh..(h + 1) * dvh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(out, Op::Attention { q, k, v, groups, heads, probs }, ng)
    }

    /// Attention weights recorded by an [`Graph::attention`] node, laid out
    /// `[group][head][query][key]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Weights of every attention node on the tape, with the key length of
    /// each, so `probs.chunks(key_len)` yields one distribution per query.
    pub fn attention_records(&self) -> Vec<(&[f64], usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { k, groups, probs, .. } => Some((probs.as_slice(), self.nodes[k.0].value.rows() / groups)),
                _ => None,
            })
            .collect()
    }

    /// `sum((a - target)^2)` as a `1 x 1` node.
    pub fn sq_err_sum(&mut self, a: Var, target: Tensor) -> Var {
        assert_eq!(self.value(a).shape(), target.shape(), "loss target shape");
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, t)| (x - t) * (x - t))
            .sum();
        let ng = self.needs(a);
        self.push(Tensor::row_vector(vec![s]), Op::SqErrSum { a, target }, ng)
    }

    /// Gradient of `d(loss)/d(v)` after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(
        grads: &mut [Option<Tensor>],
        v: Var,
        shape: [usize; 2],
        f: impl FnOnce(&mut Tensor),
    ) {
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape[0], shape[1]));
        }
        f(slot.as_mut().expect("just filled"));
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).shape(), [1, 1], "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::row_vector(vec![1.0]));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else { continue };
            self.backprop_node(idx, &dout, &mut grads);
            grads[idx] = Some(dout);
        }
        self.grads = grads;
    }

    fn backprop_node(&self, idx: usize, dout: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[idx].op {
            Op::Input | Op::Param => {}
            &Op::MatMul { a, b, ta, tb } => {
                // C = op(A) op(B)
                if needs(a) {
                    let shape = val(a).shape();
                    Self::acc_with(grads, a, shape, |ga| {
                        if ta {
                            // A^T B' = C  =>  dA = op(B) dC^T
                            gemm(val(b), tb, dout, true, ga, 1.0);
                        } else {
                            gemm(dout, false, val(b), !tb, ga, 1.0);
                        }
                    });
                }
                if needs(b) {
                    let shape = val(b).shape();
                    Self::acc_with(grads, b, shape, |gb| {
                        if tb {
                            gemm(dout, true, val(a), ta, gb, 1.0);
                        } else {
                            gemm(val(a), !ta, dout, false, gb, 1.0);
                        }
                    });
                }
            }
            &Op::Add(a, b) => {
                if needs(a) {
                    Self::acc(grads, a, dout.clone());
                }
                if needs(b) {
                    Self::acc(grads, b, dout.clone());
                }
            }
            &Op::AddBias(a, bias) => {
                if needs(a) {
                    Self::acc(grads, a, dout.clone());
                }
                if needs(bias) {
                    let mut gb = Tensor::zeros(1, dout.cols());
                    for i in 0..dout.rows() {
                        for (o, x) in gb.data_mut().iter_mut().zip(dout.row(i)) {
                            *o += x;
                        }
                    }
                    Self::acc(grads, bias, gb);
                }
            }
            &Op::Scale(a, c) => {
                let mut g = dout.clone();
                g.scale(c);
                Self::acc(grads, a, g);
            }
            &Op::Gelu(a) => {
                let mut g = dout.clone();
                for (gi, x) in g.data_mut().iter_mut().zip(val(a).data()) {
                    *gi *= gelu_grad(*x);
                }
                Self::acc(grads, a, g);
            }
            &Op::Softmax(a) => {
                let y = &nodes[idx].value;
                let mut g = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, dr) = (y.row(i), dout.row(i));
                    let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                    for ((o, p), d) in g.row_mut(i).iter_mut().zip(yr).zip(dr) {
                        *o = p * (d - dot);
                    }
                }
                Self::acc(grads, a, g);
            }
            Op::LayerNorm { a, inv_std } => {
                let y = &nodes[idx].value;
                let cols = y.cols() as f64;
                let mut g = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, dr) = (y.row(i), dout.row(i));
                    let mean_d = dr.iter().sum::<f64>() / cols;
                    let mean_dy = yr.iter().zip(dr).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for ((o, yy), d) in g.row_mut(i).iter_mut().zip(yr).zip(dr) {
                        *o = inv_std[i] * (d - mean_d - yy * mean_dy);
                    }
                }
                Self::acc(grads, *a, g);
            }
            &Op::Tile { a, times } => {
                let shape = val(a).shape();
                let block = shape[0] * shape[1];
                Self::acc_with(grads, a, shape, |ga| {
                    for t in 0..times {
                        for (o, x) in ga.data_mut().iter_mut().zip(&dout.data()[t * block..]) {
                            *o += x;
                        }
                    }
                });
            }
            &Op::ConcatGroups { a, b, groups } => {
                let cols = dout.cols();
                let (la, lb) = (val(a).rows() / groups, val(b).rows() / groups);
                let l = la + lb;
                if needs(a) {
                    Self::acc_with(grads, a, val(a).shape(), |ga| {
                        for g in 0..groups {
                            let src = &dout.data()[g * l * cols..(g * l + la) * cols];
                            let dst = &mut ga.data_mut()[g * la * cols..(g + 1) * la * cols];
                            dst.iter_mut().zip(src).for_each(|(o, x)| *o += x);
                        }
                    });
                }
                if needs(b) {
                    Self::acc_with(grads, b, val(b).shape(), |gb| {
                        for g in 0..groups {
                            let src = &dout.data()[(g * l + la) * cols..(g + 1) * l * cols];
                            let dst = &mut gb.data_mut()[g * lb * cols..(g + 1) * lb * cols];
                            dst.iter_mut().zip(src).for_each(|(o, x)| *o += x);
                        }
                    });
                }
            }
            &Op::SliceGroups { a, groups, start } => {
                let cols = dout.cols();
                let l = val(a).rows() / groups;
                let len = dout.rows() / groups;
                Self::acc_with(grads, a, val(a).shape(), |ga| {
                    for g in 0..groups {
                        let r0 = g * l + start;
                        let src = &dout.data()[g * len * cols..(g + 1) * len * cols];
                        let dst = &mut ga.data_mut()[r0 * cols..(r0 + len) * cols];
                        dst.iter_mut().zip(src).for_each(|(o, x)| *o += x);
                    }
                });
            }
            &Op::MeanGroups { a, groups } => {
                let l = val(a).rows() / groups;
                Self::acc_with(grads, a, val(a).shape(), |ga| {
                    for g in 0..groups {
                        for r in 0..l {
                            for (o, x) in ga.row_mut(g * l + r).iter_mut().zip(dout.row(g)) {
                                *o += x / l as f64;
                            }
                        }
                    }
                });
            }
            &Op::Reshape(a) => {
                let [r, c] = val(a).shape();
                Self::acc(grads, a, dout.clone().reshaped(r, c).expect("reshape grad"));
            }
            Op::Attention { q, k, v, groups, heads, probs } => {
                self.attention_backward(*q, *k, *v, *groups, *heads, probs, dout, grads);
            }
            Op::SqErrSum { a, target } => {
                let s = 2.0 * dout.get(0, 0);
                let av = val(*a);
                let mut g = Tensor::zeros(av.rows(), av.cols());
                for ((o, x), t) in g.data_mut().iter_mut().zip(av.data()).zip(target.data()) {
                    *o = s * (x - t);
                }
                Self::acc(grads, *a, g);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
        probs: &[f64],
        dout: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (lq, lk) = (qv.rows() / groups, kv.rows() / groups);
        let (dh, dvh) = (qv.cols() / heads, vv.cols() / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Tensor::zeros(qv.rows(), qv.cols());
        let mut gk = Tensor::zeros(kv.rows(), kv.cols());
        let mut gv = Tensor::zeros(vv.rows(), vv.cols());
        let mut dp = vec![0.0; lk];
        for g in 0..groups {
            for h in 0..heads {
                for i in 0..lq {
                    let base = ((g * heads + h) * lq + i) * lk;
                    let p = &probs[base..base + lk];
                    let dorow = &dout.row(g * lq + i)[h * dvh..(h + 1) * dvh];
                    for j in 0..lk {
                        let vj = &vv.row(g * lk + j)[h * dvh..(h + 1) * dvh];
                        dp[j] = dorow.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let gvj = &mut gv.row_mut(g * lk + j)[h * dvh..(h + 1) * dvh];
                        for (o, d) in gvj.iter_mut().zip(dorow) {
                            *o += p[j] * d;
                        }
                    }
                    let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    let qi: Vec<f64> = qv.row(g * lq + i)[h * dh..(h + 1) * dh].to_vec();
                    for j in 0..lk {
                        let ds = scale * p[j] * (dp[j] - dot);
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &kv.row(g * lk + j)[h * dh..(h + 1) * dh];
                        let gqi = &mut gq.row_mut(g * lq + i)[h * dh..(h + 1) * dh];
                        for (o, x) in gqi.iter_mut().zip(kj) {
                            *o += ds * x;
                        }
                        let gkj = &mut gk.row_mut(g * lk + j)[h * dh..(h + 1) * dh];
                        for (o, x) in gkj.iter_mut().zip(&qi) {
                            *o += ds * x;
                        }
                    }
                }
            }
        }
        if self.needs(q) {
            Self::acc(grads, q, gq);
        }
        if self.needs(k) {
            Self::acc(grads, k, gk);
        }
        if self.needs(v) {
            Self::acc(grads, v, gv);
        }
    }

    /// Add the gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(v, id) in &self.params {
            if let Some(g) = self.grad(v) {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_row_known_values() {
        let mut out = [0.0; 2];
        softmax_row(&[0.0, 3f64.ln()], &mut out);
        assert!((out[0] - 0.25).abs() < 1e-15);
        assert!((out[1] - 0.75).abs() < 1e-15);

        let mut u = [0.0; 4];
        softmax_row(&[7.0; 4], &mut u);
        assert!(u.iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_shift_stable() {
        let mut out = [0.0; 3];
        softmax_row(&[1000.0, 1001.0, 999.0], &mut out);
        assert!(out.iter().all(|p| p.is_finite()));
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(vec![1.5, -2.0, 0.25]));
        let l = g.sq_err_sum(x, Tensor::zeros(1, 3));
        let l = g.scale(l, 0.5);
        g.backward(l);
        assert_eq!(g.grad(x).unwrap().data(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn inputs_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(vec![1.0, 2.0]));
        let w = g.leaf(Tensor::from_vec(2, 1, vec![3.0, 4.0]).unwrap());
        let y = g.matmul(x, w);
        let l = g.sq_err_sum(y, Tensor::zeros(1, 1));
        g.backward(l);
        assert!(g.grad(x).is_none());
        // d/dw (x.w)^2 = 2 (x.w) x = 2 * 11 * x
        assert_eq!(g.grad(w).unwrap().data(), &[22.0, 44.0]);
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_fn(4, 2, |i, j| (i * 2 + j) as f64));
        let b = g.leaf(Tensor::from_fn(2, 2, |i, j| -((i * 2 + j) as f64)));
        let c = g.concat_groups(a, b, 2);
        assert_eq!(g.value(c).rows(), 6);
        let back_a = g.slice_groups(c, 2, 0, 2);
        let back_b = g.slice_groups(c, 2, 2, 1);
        assert_eq!(g.value(back_a), g.value(a));
        assert_eq!(g.value(back_b), g.value(b));
    }
}
