//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Graph`] is built per forward pass and borrows the parameter store, so
//! parameter leaves cost nothing. [`Graph::backward`] walks the tape in
//! reverse and accumulates parameter gradients into [`Grads`].

use crate::error::{ModelError, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{gemm, matmul, softmax_in_place, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Query rows `q_start..q_start + q_len` attend to key rows
/// `k_start..k_start + k_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

impl Segment {
    pub fn aligned(start: usize, len: usize) -> Self {
        Self { q_start: start, q_len: len, k_start: start, k_len: len }
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Input,
    Param(ParamId),
    Embed { table: ParamId, ids: Vec<usize> },
    MatMul { a: NodeId, b: NodeId },
    AddRow { x: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Mat, inv_std: Vec<f64> },
    Gelu { x: NodeId },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, causal: bool, segments: Vec<Segment>, probs: Vec<Vec<f64>> },
    SelectRows { x: NodeId, idx: Vec<usize> },
    Nll { logits: NodeId, rows: Vec<usize>, targets: Vec<usize>, weights: Vec<f64>, probs: Mat },
}

enum Value {
    Owned(Mat),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
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

    pub fn value(&self, id: NodeId) -> &Mat {
        match &self.nodes[id.0].value {
            Value::Owned(m) => m,
            Value::Param(p) => self.params.get(*p),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(value), op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> NodeId {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        self.nodes.push(Node { value: Value::Param(p), op: Op::Param(p) });
        NodeId(self.nodes.len() - 1)
    }

    /// Rows of a parameter table.
    pub fn embed(&mut self, table: ParamId, ids: &[usize]) -> NodeId {
        let out = self.params.get(table).select_rows(ids);
        self.push(out, Op::Embed { table, ids: ids.to_vec() })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = matmul(self.value(a), false, self.value(b), false);
        self.push(out, Op::MatMul { a, b })
    }

    /// Adds the `1 × cols` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, self.value(x).cols), "bias shape");
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow { x, bias })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let d = xv.cols;
        let mut xhat = Mat::zeros(xv.rows, d);
        let mut out = Mat::zeros(xv.rows, d);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat.data[r * d + c] = h;
                out.data[r * d + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data.iter_mut() {
            let u = GELU_C * (*v + GELU_A * *v * *v * *v);
            *v = 0.5 * *v * (1.0 + u.tanh());
        }
        self.push(out, Op::Gelu { x })
    }

    /// Multi-head scaled dot-product attention over already projected
    /// queries, keys and values.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, causal: bool, segments: &[Segment]) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols;
        assert_eq!(d % heads, 0, "heads must divide the width");
        assert_eq!((kv.cols, vv.cols), (d, d));
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(qv.rows, d);
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for s in segments {
            assert!(!causal || s.q_len == s.k_len, "causal segments must be aligned");
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let mut p = vec![0.0; s.q_len * s.k_len];
                for i in 0..s.q_len {
                    let qi = &qv.row(s.q_start + i)[cols.clone()];
                    let visible = if causal { i + 1 } else { s.k_len };
                    let scores = &mut p[i * s.k_len..i * s.k_len + visible];
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let kj = &kv.row(s.k_start + j)[cols.clone()];
                        *sc = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    softmax_in_place(scores);
                    let orow = &mut out.data[(s.q_start + i) * d + h * dh..(s.q_start + i) * d + (h + 1) * dh];
                    for (j, &pj) in scores.iter().enumerate() {
                        let vj = &vv.row(s.k_start + j)[cols.clone()];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, causal, segments: segments.to_vec(), probs })
    }

    pub fn select_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let out = self.value(x).select_rows(idx);
        self.push(out, Op::SelectRows { x, idx: idx.to_vec() })
    }

    /// `sum_j weights[j] * -ln softmax(logits_j)[targets[j]]` as a `1 × 1`
    /// node. Rows with zero weight are skipped entirely.
    pub fn weighted_nll(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> Result<NodeId> {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows, "one target per row");
        assert_eq!(weights.len(), lv.rows, "one weight per row");
        let rows: Vec<usize> = (0..lv.rows).filter(|&r| weights[r] != 0.0).collect();
        let mut probs = lv.select_rows(&rows);
        let mut loss = 0.0;
        for (i, &r) in rows.iter().enumerate() {
            let p = probs.row_mut(i);
            if p.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Numeric(format!("non-finite logits at position {r}")));
            }
            if targets[r] >= p.len() {
                return Err(ModelError::Config(format!("target {} outside the vocabulary", targets[r])));
            }
            let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += weights[r] * (lse - p[targets[r]]);
            softmax_in_place(p);
        }
        Ok(self
            .push(Mat::from_vec(1, 1, vec![loss]), Op::Nll { logits, rows, targets: targets.to_vec(), weights: weights.to_vec(), probs }))
    }

    /// Back-propagates `seed · ∂root` and adds parameter gradients to `grads`.
    pub fn backward(&self, root: NodeId, seed: f64, grads: &mut Grads) {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = self.value(root);
        g[root.0] = Some(Mat::filled(rv.rows, rv.cols, seed));
        for idx in (0..=root.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(p) => grads.slot(*p, dy.rows, dy.cols).add_assign(&dy),
                Op::Embed { table, ids } => {
                    let t = self.params.get(*table);
                    let slot = grads.slot(*table, t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, d) in slot.row_mut(id).iter_mut().zip(dy.row(r)) {
                            *s += d;
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut g, *a, || matmul(&dy, false, bv, true), |m| gemm(1.0, &dy, false, bv, true, 1.0, m));
                    acc(&mut g, *b, || matmul(av, true, &dy, false), |m| gemm(1.0, av, true, &dy, false, 1.0, m));
                }
                Op::AddRow { x, bias } => {
                    let mut db = Mat::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        for (s, d) in db.data.iter_mut().zip(dy.row(r)) {
                            *s += d;
                        }
                    }
                    add_grad(&mut g, *bias, db);
                    add_grad(&mut g, *x, dy);
                }
                Op::Add { a, b } => {
                    add_grad(&mut g, *a, dy.clone());
                    add_grad(&mut g, *b, dy);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gv = self.value(*gamma);
                    let d = dy.cols;
                    let mut dg = Mat::zeros(1, d);
                    let mut db = Mat::zeros(1, d);
                    let mut dx = Mat::zeros(dy.rows, d);
                    for r in 0..dy.rows {
                        let (dyr, xh) = (dy.row(r), xhat.row(r));
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for c in 0..d {
                            dg.data[c] += dyr[c] * xh[c];
                            db.data[c] += dyr[c];
                            let dxh = dyr[c] * gv.data[c];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[c];
                        }
                        let inv = inv_std[r];
                        let out = dx.row_mut(r);
                        for c in 0..d {
                            let dxh = dyr[c] * gv.data[c];
                            out[c] = inv / d as f64 * (d as f64 * dxh - sum_dxh - xh[c] * sum_dxh_xh);
                        }
                    }
                    add_grad(&mut g, *gamma, dg);
                    add_grad(&mut g, *beta, db);
                    add_grad(&mut g, *x, dx);
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let mut dx = dy;
                    for (d, &v) in dx.data.iter_mut().zip(&xv.data) {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                    }
                    add_grad(&mut g, *x, dx);
                }
                Op::Attention { q, k, v, heads, causal, segments, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.cols;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(qv.rows, d);
                    let mut dk = Mat::zeros(kv.rows, d);
                    let mut dv = Mat::zeros(vv.rows, d);
                    let mut pi = 0;
                    for s in segments {
                        for h in 0..*heads {
                            let p = &probs[pi];
                            pi += 1;
                            let c0 = h * dh;
                            for i in 0..s.q_len {
                                let visible = if *causal { i + 1 } else { s.k_len };
                                let prow = &p[i * s.k_len..i * s.k_len + visible];
                                let qr = s.q_start + i;
                                let dor = &dy.data[qr * d + c0..qr * d + c0 + dh];
                                let mut dp = vec![0.0; visible];
                                for (j, dpj) in dp.iter_mut().enumerate() {
                                    let vj = &vv.data[(s.k_start + j) * d + c0..(s.k_start + j) * d + c0 + dh];
                                    *dpj = dor.iter().zip(vj).map(|(a, b)| a * b).sum();
                                }
                                let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                                for j in 0..visible {
                                    let kr = s.k_start + j;
                                    let ds = prow[j] * (dp[j] - dot) * scale;
                                    for c in 0..dh {
                                        dq.data[qr * d + c0 + c] += ds * kv.data[kr * d + c0 + c];
                                        dk.data[kr * d + c0 + c] += ds * qv.data[qr * d + c0 + c];
                                        dv.data[kr * d + c0 + c] += prow[j] * dor[c];
                                    }
                                }
                            }
                        }
                    }
                    add_grad(&mut g, *q, dq);
                    add_grad(&mut g, *k, dk);
                    add_grad(&mut g, *v, dv);
                }
                Op::SelectRows { x, idx } => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (s, d) in dx.row_mut(i).iter_mut().zip(dy.row(r)) {
                            *s += d;
                        }
                    }
                    add_grad(&mut g, *x, dx);
                }
                Op::Nll { logits, rows, targets, weights, probs } => {
                    let lv = self.value(*logits);
                    let up = dy.data[0];
                    let mut dl = Mat::zeros(lv.rows, lv.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        let w = weights[r] * up;
                        let out = dl.row_mut(r);
                        for (o, p) in out.iter_mut().zip(probs.row(i)) {
                            *o = w * p;
                        }
                        out[targets[r]] -= w;
                    }
                    add_grad(&mut g, *logits, dl);
                }
            }
        }
    }
}

fn add_grad(g: &mut [Option<Mat>], id: NodeId, m: Mat) {
    match &mut g[id.0] {
        Some(existing) => existing.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}

/// Adds a product into `g[id]`, writing straight into an existing buffer.
fn acc(g: &mut [Option<Mat>], id: NodeId, fresh: impl FnOnce() -> Mat, into: impl FnOnce(&mut Mat)) {
    match &mut g[id.0] {
        Some(existing) => into(existing),
        slot @ None => *slot = Some(fresh()),
    }
}
