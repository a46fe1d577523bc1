//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Values are
//! row-major matrices (`[rows, cols]`); scalars are `[1]`. Variable-length
//! token sequences are packed row-wise and described by [`Segments`] so a
//! whole batch shares one set of matrix multiplies while attention and
//! pooling stay within each sample.
//!
//! Shape errors while building a graph are programmer errors and panic.

use std::collections::HashMap;
use std::sync::Arc;

use super::float::{gemm, MatView};
use super::params::{ParamId, ParamStore};
use super::{Float, NumError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Row ranges of independent sequences packed into one matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &l in lengths {
            acc += l;
            offsets.push(acc);
        }
        Segments { offsets }
    }

    pub fn single(len: usize) -> Self {
        Segments::from_lengths(&[len])
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }
}

enum Op<T> {
    Const,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Gelu { a: Var, th: Vec<T> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax { a: Var },
    Attention { qkv: Var, heads: usize, segs: Arc<Segments>, probs: Vec<T> },
    Gather { a: Var, idx: Vec<usize> },
    Scatter { a: Var, idx: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SegmentMean { a: Var, segs: Arc<Segments> },
    SumAll { a: Var },
    MeanAll { a: Var },
    SquaredError { pred: Var, target: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    WeightedSum { parts: Vec<(Var, T)> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients of a scalar with respect to the parameters it reached.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn empty(n_params: usize) -> Self {
        Gradients { slots: (0..n_params).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| s.is_none())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::new(i), g)))
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize_with(other.slots.len(), || None);
        }
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => {
                        for (a, &b) in m.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => *mine = Some(g.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.slots.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.all_finite())
    }
}

/// `tanh` through a single `exp`, which libm evaluates far faster.
fn tanh_via_exp<T: Float>(u: T) -> T {
    let e = (T::from_f64(-2.0) * u.abs()).exp();
    let t = (T::one() - e) / (T::one() + e);
    if u < T::zero() {
        -t
    } else {
        t
    }
}

/// Evaluation tape. Build with the op methods, then call [`Graph::backward`].
pub struct Graph<T: Float = f32> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    n_params: usize,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sqrt_2_over_pi<T: Float>() -> T {
    T::from_f64((2.0 / std::f64::consts::PI).sqrt())
}

const GELU_C: f64 = 0.044715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), bound: HashMap::new(), n_params: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Const)
    }

    /// Binds a stored parameter as a leaf. Binding the same id twice returns
    /// the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        self.n_params = self.n_params.max(store.len());
        let v = self.push(store.tensor(id).clone(), Op::Param(id));
        self.bound.insert(id, v);
        v
    }

    /// `x @ w + b` with `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, din) = self.dims(x);
        let (win, dout) = self.dims(w);
        assert_eq!(din, win, "linear: input width {din} vs weight rows {win}");
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), dout, "linear: bias width");
            for row in out.chunks_mut(dout.max(1)) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(
            T::one(),
            self.value(x).data(),
            MatView::dense(n, din),
            self.value(w).data(),
            MatView::dense(din, dout),
            beta,
            &mut out,
            MatView::dense(n, dout),
        );
        self.push(Tensor::from_parts(vec![n, dout], out), Op::Linear { x, w, b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![T::zero(); n * m];
        gemm(
            T::one(),
            self.value(a).data(),
            MatView::dense(n, k),
            self.value(b).data(),
            MatView::dense(k, m),
            T::zero(),
            &mut out,
            MatView::dense(n, m),
        );
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul { a, b })
    }

    fn zip_same(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "elementwise op on mismatched sizes");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, |x, y| x + y);
        self.push(v, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_same(a, b, |x, y| x * y);
        self.push(v, Op::Mul { a, b })
    }

    /// Adds a `[d]` row to every row of `a: [n, d]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (n, d) = self.dims(a);
        let r = self.value(row).data();
        assert_eq!(r.len(), d, "add_row width");
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend(src[i * d..(i + 1) * d].iter().zip(r).map(|(&x, &y)| x + y));
        }
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::AddRow { a, row })
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a);
        let v = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| x * s).collect());
        self.push(v, Op::Scale { a, s })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = sqrt_2_over_pi::<T>();
        let k = T::from_f64(GELU_C);
        let half = T::from_f64(0.5);
        let t = self.value(a);
        let th: Vec<T> = t.data().iter().map(|&x| tanh_via_exp(c * (x + k * x * x * x))).collect();
        let data = t.data().iter().zip(&th).map(|(&x, &h)| half * x * (T::one() + h)).collect();
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(v, Op::Gelu { a, th })
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of width d.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (n, d) = self.dims(x);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!((g.len(), b.len()), (d, d), "layer_norm affine width");
        let src = self.value(x).data();
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        let dn = T::from_f64(d as f64);
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, d) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for i in 0..n {
            softmax_in_place(&mut out[i * d..(i + 1) * d]);
        }
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Softmax { a })
    }

    /// Multi-head self-attention over packed sequences.
    ///
    /// `qkv: [n, 3d]` holds queries, keys and values side by side; attention
    /// is full (unmasked) within each segment and absent across segments.
    pub fn attention(&mut self, qkv: Var, heads: usize, segs: Arc<Segments>) -> Var {
        let (n, d3) = self.dims(qkv);
        assert_eq!(d3 % 3, 0, "attention expects [n, 3d]");
        let d = d3 / 3;
        assert!(heads > 0 && d % heads == 0, "attention: width {d} not divisible by {heads} heads");
        assert_eq!(segs.total_rows(), n, "attention: segments do not cover the rows");
        let dh = d / heads;
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let total_probs: usize = segs.iter().map(|r| r.len() * r.len() * heads).sum();
        let mut probs = vec![T::zero(); total_probs];
        let mut out = vec![T::zero(); n * d];
        let src = self.value(qkv).data();
        let mut p_off = 0;
        for r in segs.iter() {
            let l = r.len();
            if l == 0 {
                continue;
            }
            for h in 0..heads {
                let q = MatView { rows: l, cols: dh, offset: r.start * d3 + h * dh, row_stride: d3, transposed: false };
                let k = MatView { offset: r.start * d3 + d + h * dh, ..q };
                let v = MatView { offset: r.start * d3 + 2 * d + h * dh, ..q };
                let p = MatView { rows: l, cols: l, offset: p_off, row_stride: l, transposed: false };
                gemm(scale, src, q, src, k.t(), T::zero(), &mut probs, p);
                for row in probs[p_off..p_off + l * l].chunks_mut(l) {
                    softmax_in_place(row);
                }
                let o = MatView { rows: l, cols: dh, offset: r.start * d + h * dh, row_stride: d, transposed: false };
                gemm(T::one(), &probs, p, src, v, T::zero(), &mut out, o);
                p_off += l * l;
            }
        }
        self.push(Tensor::from_parts(vec![n, d], out), Op::Attention { qkv, heads, segs, probs })
    }

    /// Selects rows of `a` (embedding lookup when `a` is a table).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (n, d) = self.dims(a);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            assert!(i < n, "gather_rows: index {i} out of {n} rows");
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(Tensor::from_parts(vec![idx.len(), d], out), Op::Gather { a, idx: idx.to_vec() })
    }

    /// Places row `i` of `a` at row `idx[i]` of an `[rows, d]` zero matrix
    /// (rows sharing a target are summed).
    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Var {
        let (n, d) = self.dims(a);
        assert_eq!(n, idx.len(), "scatter_rows: one index per row");
        let src = self.value(a).data();
        let mut out = vec![T::zero(); rows * d];
        for (i, &t) in idx.iter().enumerate() {
            assert!(t < rows, "scatter_rows: target {t} out of {rows} rows");
            for j in 0..d {
                out[t * d + j] += src[i * d + j];
            }
        }
        self.push(Tensor::from_parts(vec![rows, d], out), Op::Scatter { a, idx: idx.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let d = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            assert_eq!(c, d, "concat_rows: width mismatch");
            out.extend_from_slice(self.value(p).data());
            n += r;
        }
        self.push(Tensor::from_parts(vec![n, d], out), Op::ConcatRows { parts: parts.to_vec() })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let n = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.dims(p);
                assert_eq!(r, n, "concat_cols: row mismatch");
                c
            })
            .collect();
        let d: usize = widths.iter().sum();
        let mut out = vec![T::zero(); n * d];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..n {
                out[i * d + off..i * d + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push(Tensor::from_parts(vec![n, d], out), Op::ConcatCols { parts: parts.to_vec() })
    }

    /// Mean of the rows of each segment: `[n, d] -> [segments, d]`.
    pub fn segment_mean(&mut self, a: Var, segs: Arc<Segments>) -> Var {
        let (n, d) = self.dims(a);
        assert_eq!(segs.total_rows(), n, "segment_mean: segments do not cover the rows");
        let src = self.value(a).data();
        let mut out = vec![T::zero(); segs.count() * d];
        for (s, r) in segs.iter().enumerate() {
            assert!(!r.is_empty(), "segment_mean: empty segment {s}");
            let inv = T::one() / T::from_f64(r.len() as f64);
            for i in r {
                for j in 0..d {
                    out[s * d + j] += src[i * d + j];
                }
            }
            for j in 0..d {
                out[s * d + j] *= inv;
            }
        }
        let count = segs.count();
        self.push(Tensor::from_parts(vec![count, d], out), Op::SegmentMean { a, segs })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(!t.is_empty(), "mean of empty tensor");
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.len() as f64);
        self.push(Tensor::scalar(s), Op::MeanAll { a })
    }

    /// `sum((pred - target)^2)` over all elements.
    pub fn squared_error_sum(&mut self, pred: Var, target: &[T]) -> Var {
        let p = self.value(pred).data();
        assert_eq!(p.len(), target.len(), "squared_error: length mismatch");
        let s = p.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
        self.push(Tensor::scalar(s), Op::SquaredError { pred, target: target.to_vec() })
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Var {
        let n = target.len();
        assert!(n > 0, "mse of empty tensor");
        let s = self.squared_error_sum(pred, target);
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    /// Summed softmax cross-entropy of `logits: [n, C]` against class ids.
    pub fn cross_entropy_sum(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, c) = self.dims(logits);
        assert_eq!(n, labels.len(), "cross_entropy: one label per row");
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < c, "cross_entropy: label {y} out of {c} classes");
            let row = &mut probs[i * c..(i + 1) * c];
            softmax_in_place(row);
            total -= row[y].max(T::min_positive_value()).ln();
        }
        self.push(Tensor::scalar(total), Op::CrossEntropy { logits, labels: labels.to_vec(), probs })
    }

    /// Mean softmax cross-entropy.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        assert!(!labels.is_empty(), "cross_entropy over no rows");
        let s = self.cross_entropy_sum(logits, labels);
        self.scale(s, T::one() / T::from_f64(labels.len() as f64))
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, parts: &[(Var, T)]) -> Var {
        let mut total = T::zero();
        for &(v, w) in parts {
            let t = self.value(v);
            assert!(t.is_scalar(), "weighted_sum expects scalars");
            total += w * t.item();
        }
        self.push(Tensor::scalar(total), Op::WeightedSum { parts: parts.to_vec() })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(NumError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::empty(self.n_params);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, dy, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(&self, i: usize, dy: Vec<T>, grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Const => {}
            Op::Param(id) => {
                let shape = node.value.shape().to_vec();
                out.slots[id.index()] = Some(Tensor::from_parts(shape, dy));
            }
            Op::Linear { x, w, b } => {
                let (n, din) = self.dims(*x);
                let dout = self.dims(*w).1;
                let dyv = MatView::dense(n, dout);
                {
                    let wv = self.value(*w).data();
                    let gx = grad_buf(grads, *x, n * din);
                    gemm(T::one(), &dy, dyv, wv, MatView::dense(din, dout).t(), T::one(), gx, MatView::dense(n, din));
                }
                {
                    let xv = self.value(*x).data();
                    let gw = grad_buf(grads, *w, din * dout);
                    gemm(T::one(), xv, MatView::dense(n, din).t(), &dy, dyv, T::one(), gw, MatView::dense(din, dout));
                }
                if let Some(b) = b {
                    let gb = grad_buf(grads, *b, dout);
                    for row in dy.chunks(dout.max(1)) {
                        for (g, &v) in gb.iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (n, k) = self.dims(*a);
                let m = self.dims(*b).1;
                let dyv = MatView::dense(n, m);
                {
                    let bv = self.value(*b).data();
                    let ga = grad_buf(grads, *a, n * k);
                    gemm(T::one(), &dy, dyv, bv, MatView::dense(k, m).t(), T::one(), ga, MatView::dense(n, k));
                }
                {
                    let av = self.value(*a).data();
                    let gb = grad_buf(grads, *b, k * m);
                    gemm(T::one(), av, MatView::dense(n, k).t(), &dy, dyv, T::one(), gb, MatView::dense(k, m));
                }
            }
            Op::Add { a, b } => {
                add_into(grad_buf(grads, *a, dy.len()), &dy);
                add_into(grad_buf(grads, *b, dy.len()), &dy);
            }
            Op::AddRow { a, row } => {
                add_into(grad_buf(grads, *a, dy.len()), &dy);
                let d = self.dims(*a).1;
                let gr = grad_buf(grads, *row, d);
                for chunk in dy.chunks(d.max(1)) {
                    add_into(gr, chunk);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = grad_buf(grads, *a, dy.len());
                for ((g, &d), &y) in ga.iter_mut().zip(&dy).zip(bv) {
                    *g += d * y;
                }
                let gb = grad_buf(grads, *b, dy.len());
                for ((g, &d), &x) in gb.iter_mut().zip(&dy).zip(av) {
                    *g += d * x;
                }
            }
            Op::Scale { a, s } => {
                let ga = grad_buf(grads, *a, dy.len());
                for (g, &d) in ga.iter_mut().zip(&dy) {
                    *g += d * *s;
                }
            }
            Op::Gelu { a, th } => {
                let c = sqrt_2_over_pi::<T>();
                let k3 = T::from_f64(3.0 * GELU_C);
                let half = T::from_f64(0.5);
                let xs = self.value(*a).data();
                let ga = grad_buf(grads, *a, dy.len());
                for (((g, &d), &x), &th) in ga.iter_mut().zip(&dy).zip(xs).zip(th) {
                    let dx = half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + k3 * x * x);
                    *g += d * dx;
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (n, d) = self.dims(*x);
                let gv = self.value(*gamma).data();
                {
                    let gg = grad_buf(grads, *gamma, d);
                    for i in 0..n {
                        for j in 0..d {
                            gg[j] += dy[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                {
                    let gb = grad_buf(grads, *beta, d);
                    for row in dy.chunks(d) {
                        add_into(gb, row);
                    }
                }
                let gx = grad_buf(grads, *x, n * d);
                let dn = T::from_f64(d as f64);
                let mut dxhat = vec![T::zero(); d];
                for i in 0..n {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        let v = dy[i * d + j] * gv[j];
                        dxhat[j] = v;
                        m1 += v;
                        m2 += v * xhat[i * d + j];
                    }
                    m1 /= dn;
                    m2 /= dn;
                    for j in 0..d {
                        gx[i * d + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * d + j] * m2);
                    }
                }
            }
            Op::Softmax { a } => {
                let (n, d) = self.dims(*a);
                let y = node.value.data();
                let ga = grad_buf(grads, *a, n * d);
                for i in 0..n {
                    let r = i * d..(i + 1) * d;
                    let dot = dy[r.clone()].iter().zip(&y[r.clone()]).map(|(&a, &b)| a * b).sum::<T>();
                    for j in r {
                        ga[j] += y[j] * (dy[j] - dot);
                    }
                }
            }
            Op::Attention { qkv, heads, segs, probs } => {
                self.attention_backward(*qkv, *heads, segs, probs, &dy, grads);
            }
            Op::Gather { a, idx } => {
                let (n, d) = self.dims(*a);
                let ga = grad_buf(grads, *a, n * d);
                for (r, &src) in idx.iter().enumerate() {
                    add_into(&mut ga[src * d..(src + 1) * d], &dy[r * d..(r + 1) * d]);
                }
            }
            Op::Scatter { a, idx } => {
                let (n, d) = self.dims(*a);
                let ga = grad_buf(grads, *a, n * d);
                for (r, &t) in idx.iter().enumerate() {
                    add_into(&mut ga[r * d..(r + 1) * d], &dy[t * d..(t + 1) * d]);
                }
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    add_into(grad_buf(grads, p, len), &dy[off..off + len]);
                    off += len;
                }
            }
            Op::ConcatCols { parts } => {
                let (n, d) = (node.value.rows(), node.value.cols());
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    let gp = grad_buf(grads, p, n * w);
                    for i in 0..n {
                        add_into(&mut gp[i * w..(i + 1) * w], &dy[i * d + off..i * d + off + w]);
                    }
                    off += w;
                }
            }
            Op::SegmentMean { a, segs } => {
                let (n, d) = self.dims(*a);
                let ga = grad_buf(grads, *a, n * d);
                for (s, r) in segs.iter().enumerate() {
                    let inv = T::one() / T::from_f64(r.len() as f64);
                    for i in r {
                        for j in 0..d {
                            ga[i * d + j] += dy[s * d + j] * inv;
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                let len = self.value(*a).len();
                for g in grad_buf(grads, *a, len) {
                    *g += dy[0];
                }
            }
            Op::MeanAll { a } => {
                let len = self.value(*a).len();
                let v = dy[0] / T::from_f64(len as f64);
                for g in grad_buf(grads, *a, len) {
                    *g += v;
                }
            }
            Op::SquaredError { pred, target } => {
                let p = self.value(*pred).data();
                let two = T::from_f64(2.0);
                let gp = grad_buf(grads, *pred, p.len());
                for ((g, &x), &t) in gp.iter_mut().zip(p).zip(target) {
                    *g += two * (x - t) * dy[0];
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (n, c) = self.dims(*logits);
                let gl = grad_buf(grads, *logits, n * c);
                for (i, &y) in labels.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == y { T::one() } else { T::zero() };
                        gl[i * c + j] += (probs[i * c + j] - onehot) * dy[0];
                    }
                }
            }
            Op::WeightedSum { parts } => {
                for &(v, w) in parts {
                    grad_buf(grads, v, 1)[0] += w * dy[0];
                }
            }
        }
    }

    fn attention_backward(
        &self,
        qkv: Var,
        heads: usize,
        segs: &Segments,
        probs: &[T],
        dy: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (n, d3) = self.dims(qkv);
        let d = d3 / 3;
        let dh = d / heads;
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let src = self.value(qkv).data();
        let gq = grad_buf(grads, qkv, n * d3);
        let max_l = segs.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut dp = vec![T::zero(); max_l * max_l];
        let mut p_off = 0;
        for r in segs.iter() {
            let l = r.len();
            if l == 0 {
                continue;
            }
            for h in 0..heads {
                let q = MatView { rows: l, cols: dh, offset: r.start * d3 + h * dh, row_stride: d3, transposed: false };
                let k = MatView { offset: r.start * d3 + d + h * dh, ..q };
                let v = MatView { offset: r.start * d3 + 2 * d + h * dh, ..q };
                let o = MatView { rows: l, cols: dh, offset: r.start * d + h * dh, row_stride: d, transposed: false };
                let p = MatView { rows: l, cols: l, offset: p_off, row_stride: l, transposed: false };
                let lp = MatView::dense(l, l);
                let dpbuf = &mut dp[..l * l];
                // dP = dO V^T ; dV += P^T dO
                gemm(T::one(), dy, o, src, v.t(), T::zero(), dpbuf, lp);
                gemm(T::one(), probs, p.t(), dy, o, T::one(), gq, v);
                // dS = P * (dP - rowsum(dP * P)) * scale
                for i in 0..l {
                    let prow = &probs[p_off + i * l..p_off + (i + 1) * l];
                    let drow = &mut dpbuf[i * l..(i + 1) * l];
                    let dot = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum::<T>();
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot) * scale;
                    }
                }
                // dQ += dS K ; dK += dS^T Q
                gemm(T::one(), dpbuf, lp, src, k, T::one(), gq, q);
                gemm(T::one(), dpbuf, lp.t(), src, q, T::one(), gq, k);
                p_off += l * l;
            }
        }
    }
}

fn grad_buf<T: Float>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Float>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
