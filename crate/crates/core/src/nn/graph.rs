//! Eager tape with reverse-mode gradients.
//!
//! Ops are evaluated as they are appended, so node ids are already a
//! topological order and `backward` is a single reverse sweep. Row-parallel
//! kernels keep heavy matmuls fast without affecting determinism: every
//! output row is an independent dot-product chain with a fixed summation
//! order.

use super::{Grads, ParamStore};
use crate::error::{CdmError, Result};
use crate::mat::Mat;
use crate::parallel::par_chunks_mut;
use std::collections::HashMap;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Silu(NodeId),
    Tanh(NodeId),
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Scale { x: NodeId, c: f64 },
    ConcatCols(Vec<NodeId>),
    RepeatRows { x: NodeId, times: usize },
    MeanPoolRows { x: NodeId, group: usize },
    MseLoss { pred: NodeId, target: NodeId },
    SoftmaxXent { logits: NodeId, labels: NodeId },
}

struct Node {
    op: Op,
    value: Mat,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
}

/// Minimum rows per thread chunk for the parallel linear kernels.
const PAR_MIN_ROWS: usize = 64;

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Graph<'a> {
        Graph { store, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn input(&mut self, m: Mat) -> NodeId {
        self.push(Op::Input, m)
    }

    /// Node for a named parameter; reused if already on the tape.
    pub fn param(&mut self, name: &str) -> NodeId {
        let idx = self
            .store
            .idx(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        if let Some(&id) = self.param_nodes.get(&idx) {
            return id;
        }
        let (_, tensor) = self.store.by_index(idx);
        let id = self.push(Op::Param(idx), tensor.clone());
        self.param_nodes.insert(idx, id);
        id
    }

    /// y = x Wᵀ + b, with W stored (out × in) and b (1 × out).
    pub fn linear(&mut self, x: NodeId, layer: &str) -> NodeId {
        let w = self.param(&format!("{layer}.w"));
        let b = self.param(&format!("{layer}.b"));
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let bv = &self.nodes[b].value;
        assert_eq!(xv.cols(), wv.cols(), "linear `{layer}`: input width mismatch");
        assert_eq!(bv.cols(), wv.rows(), "linear `{layer}`: bias width mismatch");
        let value = linear_forward(xv, wv, bv);
        self.push(Op::Linear { x, w, b }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        av.check_same_shape(bv, "graph add").expect("shape mismatch in add");
        let mut out = av.clone();
        for (o, y) in out.data_mut().iter_mut().zip(bv.data()) {
            *o += y;
        }
        self.push(Op::Add(a, b), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        av.check_same_shape(bv, "graph mul").expect("shape mismatch in mul");
        let mut out = av.clone();
        for (o, y) in out.data_mut().iter_mut().zip(bv.data()) {
            *o *= y;
        }
        self.push(Op::Mul(a, b), out)
    }

    /// Feature-wise linear modulation: gamma ⊙ x + beta (all same shape).
    pub fn film(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let scaled = self.mul(x, gamma);
        self.add(scaled, beta)
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| v * sigmoid(v));
        self.push(Op::Silu(x), value)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x].value.map(|v| c * v);
        self.push(Op::Scale { x, c }, value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut out = Mat::zeros(rows, total);
        for r in 0..rows {
            let orow = out.row_mut(r);
            let mut off = 0;
            for &p in parts {
                let pv = &self.nodes[p].value;
                assert_eq!(pv.rows(), rows, "concat_cols: row mismatch");
                orow[off..off + pv.cols()].copy_from_slice(pv.row(r));
                off += pv.cols();
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Repeat each row `times` times: (B × C) → (B·times × C).
    pub fn repeat_rows(&mut self, x: NodeId, times: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut out = Mat::zeros(xv.rows() * times, xv.cols());
        for r in 0..xv.rows() {
            for t in 0..times {
                out.row_mut(r * times + t).copy_from_slice(xv.row(r));
            }
        }
        self.push(Op::RepeatRows { x, times }, out)
    }

    /// Mean over consecutive groups of `group` rows: (B·group × C) → (B × C).
    pub fn mean_pool_rows(&mut self, x: NodeId, group: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!(xv.rows() % group, 0, "mean_pool_rows: rows not divisible");
        let b = xv.rows() / group;
        let mut out = Mat::zeros(b, xv.cols());
        for i in 0..b {
            let orow = out.row_mut(i);
            for g in 0..group {
                for (o, v) in orow.iter_mut().zip(xv.row(i * group + g)) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o /= group as f64;
            }
        }
        self.push(Op::MeanPoolRows { x, group }, out)
    }

    /// Mean over all elements of (pred − target)². Scalar output.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        let (pv, tv) = (&self.nodes[pred].value, &self.nodes[target].value);
        pv.check_same_shape(tv, "mse_loss").expect("shape mismatch in mse_loss");
        let n = pv.numel() as f64;
        let mut s = 0.0;
        for (a, b) in pv.data().iter().zip(tv.data()) {
            let d = a - b;
            s += d * d;
        }
        self.push(Op::MseLoss { pred, target }, Mat::scalar(s / n))
    }

    /// Mean softmax cross-entropy over rows; `labels` are one-hot rows.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: NodeId) -> NodeId {
        let (lv, yv) = (&self.nodes[logits].value, &self.nodes[labels].value);
        lv.check_same_shape(yv, "softmax_xent").expect("shape mismatch in softmax_xent");
        let mut loss = 0.0;
        for r in 0..lv.rows() {
            let p = softmax_row(lv.row(r));
            for (pi, yi) in p.iter().zip(yv.row(r)) {
                if *yi > 0.0 {
                    loss -= yi * pi.max(1e-300).ln();
                }
            }
        }
        let value = Mat::scalar(loss / lv.rows() as f64);
        self.push(Op::SoftmaxXent { logits, labels }, value)
    }

    /// Reverse sweep from a scalar loss node. Returns parameter gradients.
    /// Fails if the loss is non-finite.
    pub fn backward(&mut self, loss: NodeId) -> Result<Grads> {
        let lv = &self.nodes[loss].value;
        assert_eq!(lv.numel(), 1, "backward expects a scalar loss");
        if !lv.is_finite() {
            return Err(CdmError::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Mat::scalar(1.0));
        let mut out = Grads::zeros_like(self.store);

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(idx) => {
                    let acc = &mut out.by_index[*idx];
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let xv = &self.nodes[x].value;
                    let wv = &self.nodes[w].value;
                    let (dx, dw, db) = linear_backward(xv, wv, &g);
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, b, db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let mut da = g.clone();
                    for (o, v) in da.data_mut().iter_mut().zip(self.nodes[b].value.data()) {
                        *o *= v;
                    }
                    let mut db = g;
                    for (o, v) in db.data_mut().iter_mut().zip(self.nodes[a].value.data()) {
                        *o *= v;
                    }
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Silu(x) => {
                    let x = *x;
                    let mut dx = g;
                    for (o, v) in dx.data_mut().iter_mut().zip(self.nodes[x].value.data()) {
                        let s = sigmoid(*v);
                        *o *= s * (1.0 + v * (1.0 - s));
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Tanh(x) => {
                    let x = *x;
                    let mut dx = g;
                    for (o, v) in dx.data_mut().iter_mut().zip(self.nodes[x].value.data()) {
                        let t = v.tanh();
                        *o *= 1.0 - t * t;
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let (x, lo, hi) = (*x, *lo, *hi);
                    let mut dx = g;
                    for (o, v) in dx.data_mut().iter_mut().zip(self.nodes[x].value.data()) {
                        if *v <= lo || *v >= hi {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    let mut dx = g;
                    for o in dx.data_mut() {
                        *o *= c;
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let rows = g.rows();
                    let mut off = 0;
                    for p in parts {
                        let c = self.nodes[p].value.cols();
                        let mut dp = Mat::zeros(rows, c);
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        off += c;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::RepeatRows { x, times } => {
                    let (x, times) = (*x, *times);
                    let b = g.rows() / times;
                    let mut dx = Mat::zeros(b, g.cols());
                    for r in 0..b {
                        let drow = dx.row_mut(r);
                        for t in 0..times {
                            for (o, v) in drow.iter_mut().zip(g.row(r * times + t)) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::MeanPoolRows { x, group } => {
                    let (x, group) = (*x, *group);
                    let mut dx = Mat::zeros(g.rows() * group, g.cols());
                    let inv = 1.0 / group as f64;
                    for r in 0..g.rows() {
                        for t in 0..group {
                            for (o, v) in dx.row_mut(r * group + t).iter_mut().zip(g.row(r)) {
                                *o = v * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::MseLoss { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    let scale = 2.0 * g.at(0, 0) / self.nodes[pred].value.numel() as f64;
                    let pv = &self.nodes[pred].value;
                    let tv = &self.nodes[target].value;
                    let mut dp = Mat::zeros(pv.rows(), pv.cols());
                    for ((o, a), b) in dp.data_mut().iter_mut().zip(pv.data()).zip(tv.data()) {
                        *o = scale * (a - b);
                    }
                    let dt = dp.map(|v| -v);
                    accumulate(&mut grads, pred, dp);
                    accumulate(&mut grads, target, dt);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let (logits, labels) = (*logits, *labels);
                    let lv = &self.nodes[logits].value;
                    let yv = &self.nodes[labels].value;
                    let scale = g.at(0, 0) / lv.rows() as f64;
                    let mut dl = Mat::zeros(lv.rows(), lv.cols());
                    for r in 0..lv.rows() {
                        let p = softmax_row(lv.row(r));
                        for ((o, pi), yi) in
                            dl.row_mut(r).iter_mut().zip(&p).zip(yv.row(r))
                        {
                            *o = scale * (pi - yi);
                        }
                    }
                    accumulate(&mut grads, logits, dl);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Mat>], id: NodeId, g: Mat) {
    match &mut grads[id] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / s).collect()
}

/// y = x Wᵀ + b, row-parallel. Rows are initialized from the bias and
/// accumulated with axpy sweeps over a transposed weight copy, which keeps
/// the inner loops contiguous.
fn linear_forward(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let n = x.rows();
    let out_dim = w.rows();
    let wt = w.transpose(); // (in × out): rows contiguous over outputs.
    let mut data = Vec::with_capacity(n * out_dim);
    for _ in 0..n {
        data.extend_from_slice(b.data());
    }
    let mut y = Mat::from_vec(n, out_dim, data);
    par_chunks_mut(y.data_mut(), PAR_MIN_ROWS * out_dim, |start, chunk| {
        let row0 = start / out_dim;
        for (k, yrow) in chunk.chunks_mut(out_dim).enumerate() {
            let xrow = x.row(row0 + k);
            for (kk, &xv) in xrow.iter().enumerate() {
                if xv != 0.0 {
                    crate::mat::axpy(xv, wt.row(kk), yrow);
                }
            }
        }
    });
    y
}

/// Gradients of the linear op given upstream dY.
fn linear_backward(x: &Mat, w: &Mat, dy: &Mat) -> (Mat, Mat, Mat) {
    let n = x.rows();
    let in_dim = x.cols();
    let out_dim = w.rows();

    // dX = dY · W (row-parallel over samples).
    let mut dx = Mat::zeros(n, in_dim);
    par_chunks_mut(dx.data_mut(), PAR_MIN_ROWS * in_dim, |start, chunk| {
        let row0 = start / in_dim;
        for (k, dxrow) in chunk.chunks_mut(in_dim).enumerate() {
            let dyrow = dy.row(row0 + k);
            for (o, &dyv) in dyrow.iter().enumerate() {
                if dyv != 0.0 {
                    crate::mat::axpy(dyv, w.row(o), dxrow);
                }
            }
        }
    });

    // dW = dYᵀ · X, parallel over contiguous dW row chunks. Each worker
    // sweeps the samples in order with its dW slice hot in cache.
    let mut dw = Mat::zeros(out_dim, in_dim);
    let o_chunk = out_dim.div_ceil(crate::parallel::max_threads()).max(1);
    par_chunks_mut(dw.data_mut(), o_chunk * in_dim, |start, chunk| {
        let o0 = start / in_dim;
        let rows_here = chunk.len() / in_dim;
        for r in 0..n {
            let dyrow = dy.row(r);
            let xrow = x.row(r);
            for k in 0..rows_here {
                let dyv = dyrow[o0 + k];
                if dyv != 0.0 {
                    crate::mat::axpy(dyv, xrow, &mut chunk[k * in_dim..(k + 1) * in_dim]);
                }
            }
        }
    });

    // db[o] = Σ_r dY[r][o].
    let mut db = Mat::zeros(1, out_dim);
    for r in 0..n {
        for (o, v) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *o += v;
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_dense, init_dense_const_bias, ParamStore};
    use crate::rng::{fill_normal, stream_rng};

    #[test]
    fn film_identity_modulation() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Mat::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]));
        let ones = g.input(Mat::from_vec(2, 3, vec![1.0; 6]));
        let zeros = g.input(Mat::zeros(2, 3));
        let y = g.film(x, ones, zeros);
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn dense_identity_weights_pass_through() {
        let mut store = ParamStore::new();
        let mut w = Mat::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        store.add("id.w", w).unwrap();
        store.add("id.b", Mat::zeros(1, 3)).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]));
        let y = g.linear(x, "id");
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn quadratic_loss_gradient_is_analytic() {
        // loss = mean((w - c)^2); d/dw = 2 (w - c) / numel.
        let mut store = ParamStore::new();
        store.add("w", Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut g = Graph::new(&store);
        let w = g.param("w");
        let c = g.input(Mat::from_vec(1, 4, vec![0.5, 0.5, 0.5, 0.5]));
        let loss = g.mse_loss(w, c);
        let grads = g.backward(loss).unwrap();
        let gw = grads.get(&store, "w").unwrap();
        for (i, want) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let expect = 2.0 * (want - 0.5) / 4.0;
            assert!((gw.at(0, i) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.add("used", Mat::from_vec(1, 2, vec![1.0, 2.0])).unwrap();
        store.add("unused", Mat::from_vec(1, 2, vec![3.0, 4.0])).unwrap();
        let mut g = Graph::new(&store);
        let w = g.param("used");
        let t = g.input(Mat::zeros(1, 2));
        let loss = g.mse_loss(w, t);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(&store, "unused").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(grads.get(&store, "used").unwrap().data().iter().any(|v| *v != 0.0));
    }

    /// Finite-difference oracle over every parameter of a network that
    /// exercises all op kinds.
    fn fd_check(
        store: &mut ParamStore,
        build: impl Fn(&mut Graph) -> NodeId,
        rel_tol: f64,
    ) {
        let loss_of = |store: &ParamStore| -> f64 {
            let mut g = Graph::new(store);
            let l = build(&mut g);
            g.value(l).at(0, 0)
        };
        let grads = {
            let mut g = Graph::new(store);
            let l = build(&mut g);
            g.backward(l).unwrap()
        };
        let h = 1e-5;
        for i in 0..store.len() {
            let numel = store.by_index(i).1.numel();
            for k in 0..numel {
                let orig = store.by_index(i).1.data()[k];
                store.by_index_mut(i).data_mut()[k] = orig + h;
                let lp = loss_of(store);
                store.by_index_mut(i).data_mut()[k] = orig - h;
                let lm = loss_of(store);
                store.by_index_mut(i).data_mut()[k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.by_index[i].data()[k];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < rel_tol,
                    "param {} elem {k}: fd {fd} vs analytic {an}",
                    store.by_index(i).0
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_all_ops() {
        let mut rng = stream_rng(61, 0);
        let mut store = ParamStore::new();
        init_dense(&mut store, "l1", 8, 6, &mut rng);
        init_dense(&mut store, "l2", 4, 8, &mut rng);
        init_dense(&mut store, "pf", 5, 3, &mut rng);
        init_dense_const_bias(&mut store, "gamma", 8, 5, 1.0);
        init_dense_const_bias(&mut store, "beta", 8, 5, 0.0);
        init_dense(&mut store, "head", 2, 8, &mut rng);

        let rows = 6; // two groups of 3
        let mut x = Mat::zeros(rows, 6);
        fill_normal(&mut rng, x.data_mut());
        let mut cond = Mat::zeros(rows, 3);
        fill_normal(&mut rng, cond.data_mut());
        let mut target = Mat::zeros(2, 2);
        fill_normal(&mut rng, target.data_mut());

        let build = move |g: &mut Graph| -> NodeId {
            let xin = g.input(x.clone());
            let cin = g.input(cond.clone());
            let h = g.linear(xin, "l1");
            let h = g.silu(h);
            // FiLM conditioning path.
            let pf = g.linear(cin, "pf");
            let pf = g.tanh(pf);
            let gamma = g.linear(pf, "gamma");
            let beta = g.linear(pf, "beta");
            let h = g.film(h, gamma, beta);
            let h = g.linear(h, "l2");
            let h = g.clamp(h, -5.0, 5.0);
            // Pool groups of 3 rows, then a head.
            let pooled = g.mean_pool_rows(h, 3);
            let wide = g.repeat_rows(pooled, 1);
            let both = g.concat_cols(&[wide, pooled]);
            let both = g.scale(both, 0.5);
            let logits = g.linear(both, "head");
            let t = g.input(target.clone());
            g.mse_loss(logits, t)
        };
        fd_check(&mut store, build, 1e-4);
    }

    #[test]
    fn softmax_xent_values_and_gradient() {
        // Uniform prediction: loss = ln 2. Perfect prediction: loss ~ 0.
        let mut store = ParamStore::new();
        store.add("logit", Mat::zeros(2, 2)).unwrap();
        {
            let mut g = Graph::new(&store);
            let l = g.param("logit");
            let y = g.input(Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
            let loss = g.softmax_xent(l, y);
            assert!((g.value(loss).at(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);
        }
        {
            let mut perfect = ParamStore::new();
            perfect.add("logit", Mat::from_vec(2, 2, vec![40.0, -40.0, -40.0, 40.0])).unwrap();
            let mut g = Graph::new(&perfect);
            let l = g.param("logit");
            let y = g.input(Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
            let loss = g.softmax_xent(l, y);
            assert!(g.value(loss).at(0, 0) < 1e-12);
        }
        // FD check through a linear layer into the xent head.
        let mut rng = stream_rng(62, 0);
        let mut store = ParamStore::new();
        init_dense(&mut store, "enc", 2, 5, &mut rng);
        let mut x = Mat::zeros(4, 5);
        fill_normal(&mut rng, x.data_mut());
        let labels = Mat::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let build = move |g: &mut Graph| -> NodeId {
            let xin = g.input(x.clone());
            let logits = g.linear(xin, "enc");
            let y = g.input(labels.clone());
            g.softmax_xent(logits, y)
        };
        fd_check(&mut store, build, 1e-4);
    }

    #[test]
    fn permutation_equivariance_of_pointwise_stack() {
        // A pointwise network (linear + silu + film) commutes with row
        // permutations when the conditioning rows permute identically.
        let mut rng = stream_rng(63, 0);
        let mut store = ParamStore::new();
        init_dense(&mut store, "l1", 6, 3, &mut rng);
        init_dense(&mut store, "gm", 6, 4, &mut rng);
        init_dense(&mut store, "bt", 6, 4, &mut rng);
        init_dense(&mut store, "out", 3, 6, &mut rng);

        let mut x = Mat::zeros(5, 3);
        fill_normal(&mut rng, x.data_mut());
        let mut c = Mat::zeros(5, 4);
        fill_normal(&mut rng, c.data_mut());

        let run = |x: &Mat, c: &Mat, store: &ParamStore| -> Mat {
            let mut g = Graph::new(store);
            let xin = g.input(x.clone());
            let cin = g.input(c.clone());
            let h = g.linear(xin, "l1");
            let h = g.silu(h);
            let gamma = g.linear(cin, "gm");
            let beta = g.linear(cin, "bt");
            let h = g.film(h, gamma, beta);
            let out = g.linear(h, "out");
            g.value(out).clone()
        };
        let base = run(&x, &c, &store);
        // Permute rows 0..5 -> reversed.
        let perm: Vec<usize> = (0..5).rev().collect();
        let xp = Mat::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>());
        let cp = Mat::from_rows(&perm.iter().map(|&i| c.row(i).to_vec()).collect::<Vec<_>>());
        let out_p = run(&xp, &cp, &store);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(out_p.row(k), base.row(i));
        }
    }
}
