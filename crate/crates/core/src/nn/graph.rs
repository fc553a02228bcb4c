//! Reverse-mode differentiation over a tape of matrix operations.

use std::collections::BTreeMap;

use super::mat::{dot, matmul, matmul_nt, matmul_tn, Mat};
use super::params::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Which keys each query may look at.
#[derive(Clone, Debug, Default)]
pub struct AttnMask {
    /// Keys that exist; `None` means all of them.
    pub key_valid: Option<Vec<bool>>,
    /// Per-query half-open key range `[start, start + len)`; `None` means all keys.
    pub ranges: Option<Vec<(usize, usize)>>,
}

impl AttnMask {
    pub fn dense() -> Self {
        AttnMask::default()
    }

    pub fn with_valid(valid: Vec<bool>) -> Self {
        AttnMask {
            key_valid: Some(valid),
            ranges: None,
        }
    }

    /// Query `i` sees keys `i*group .. (i+1)*group`.
    pub fn grouped(queries: usize, group: usize) -> Self {
        AttnMask {
            key_valid: None,
            ranges: Some((0..queries).map(|i| (i * group, group)).collect()),
        }
    }

    fn keys_for(&self, query: usize, n_keys: usize) -> Vec<usize> {
        let (start, len) = match &self.ranges {
            Some(r) => r[query],
            None => (0, n_keys),
        };
        (start..start + len)
            .filter(|&j| self.key_valid.as_ref().map_or(true, |v| v[j]))
            .collect()
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    Tanh(Var),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        keys: Vec<Vec<usize>>,
        probs: Vec<Vec<f64>>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    SmoothL1 {
        pred: Var,
        target: Mat,
        weight: Mat,
        beta: f64,
    },
    BceLogits {
        logits: Var,
        target: Mat,
        weight: Mat,
    },
    DotConst(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Recording of a single forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let m = self.value(v);
        (m.rows, m.cols)
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "elementwise shape mismatch");
        Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p + q);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a, b))
    }

    /// Broadcast a `1 × c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut out = self.value(a).clone();
        assert_eq!(out.cols, r.cols);
        let r = r.data.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Elementwise product with a constant.
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let x = self.value(a);
        assert_eq!((x.rows, x.cols), (c.rows, c.cols));
        let out = Mat::from_vec(x.rows, x.cols, x.data.iter().zip(&c.data).map(|(p, q)| p * q).collect());
        self.push(out, Op::MulConst(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Row-wise normalization with a learned `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(r) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain).clone(), self.value(bias).clone());
        let mut out = xhat.clone();
        for i in 0..rows {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = *o * g.data[j] + b.data[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention over already projected
    /// queries, keys and values. Queries with no visible key produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qm.cols, km.cols);
        assert_eq!(km.rows, vm.rows);
        assert_eq!(qm.cols % heads, 0);
        assert_eq!(vm.cols % heads, 0);
        let dq = qm.cols / heads;
        let dv = vm.cols / heads;
        let scale = 1.0 / (dq as f64).sqrt();
        let mut out = Mat::zeros(qm.rows, vm.cols);
        let mut keys = Vec::with_capacity(qm.rows);
        let mut probs = Vec::with_capacity(qm.rows * heads);
        for i in 0..qm.rows {
            let ks = mask.keys_for(i, km.rows);
            for h in 0..heads {
                let qi = &qm.row(i)[h * dq..(h + 1) * dq];
                let scores: Vec<f64> = ks.iter().map(|&j| dot(qi, &km.row(j)[h * dq..(h + 1) * dq]) * scale).collect();
                let p = softmax(&scores);
                let orow = &mut out.data[i * vm.cols + h * dv..i * vm.cols + (h + 1) * dv];
                for (&j, &pj) in ks.iter().zip(&p) {
                    for (o, x) in orow.iter_mut().zip(&vm.row(j)[h * dv..(h + 1) * dv]) {
                        *o += pj * x;
                    }
                }
                probs.push(p);
            }
            keys.push(ks);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                keys,
                probs,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut c = 0;
            for &p in parts {
                let pm = self.value(p);
                assert_eq!(pm.rows, rows, "concat_cols row mismatch");
                out.row_mut(i)[c..c + pm.cols].copy_from_slice(pm.row(i));
                c += pm.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pm.data);
            rows += pm.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let am = self.value(a);
        assert!(start + width <= am.cols);
        let mut out = Mat::zeros(am.rows, width);
        for i in 0..am.rows {
            out.row_mut(i).copy_from_slice(&am.row(i)[start..start + width]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.gather_rows(a, (start..start + len).collect())
    }

    /// Rows of `a` picked by index, repetition allowed.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let am = self.value(a);
        let mut data = Vec::with_capacity(index.len() * am.cols);
        for &i in &index {
            data.extend_from_slice(am.row(i));
        }
        let out = Mat::from_vec(index.len(), am.cols, data);
        self.push(out, Op::Gather(a, index))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Mat::scalar(s), Op::Sum(a))
    }

    /// `Σ w · smoothL1(pred - target)` with transition point `beta`.
    pub fn smooth_l1(&mut self, pred: Var, target: Mat, weight: Mat, beta: f64) -> Var {
        let p = self.value(pred);
        assert_eq!((p.rows, p.cols), (target.rows, target.cols));
        assert_eq!((p.rows, p.cols), (weight.rows, weight.cols));
        let mut s = 0.0;
        for ((x, y), w) in p.data.iter().zip(&target.data).zip(&weight.data) {
            let d = (x - y).abs();
            s += w * if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta };
        }
        self.push(
            Mat::scalar(s),
            Op::SmoothL1 {
                pred,
                target,
                weight,
                beta,
            },
        )
    }

    /// `Σ w · BCE(sigmoid(logit), target)` computed stably from logits.
    pub fn bce_with_logits(&mut self, logits: Var, target: Mat, weight: Mat) -> Var {
        let z = self.value(logits);
        assert_eq!((z.rows, z.cols), (target.rows, target.cols));
        let mut s = 0.0;
        for ((x, y), w) in z.data.iter().zip(&target.data).zip(&weight.data) {
            s += w * (x.max(0.0) - x * y + (-x.abs()).exp().ln_1p());
        }
        self.push(Mat::scalar(s), Op::BceLogits { logits, target, weight })
    }

    /// `Σ a ⊙ c` for a constant `c`.
    pub fn dot_const(&mut self, a: Var, c: Mat) -> Var {
        let s = dot(&self.value(a).data, &c.data);
        self.push(Mat::scalar(s), Op::DotConst(a, c))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, self.value(*b));
                    let db = matmul_tn(self.value(*a), &g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = zip(&g, bv, |p, q| p * q);
                    let db = zip(&g, av, |p, q| p * q);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (d, x) in dr.data.iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    acc(&mut grads, *row, dr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::MulConst(a, c) => acc(&mut grads, *a, zip(&g, c, |p, q| p * q)),
                Op::Tanh(a) => {
                    let d = zip(&g, &node.value, |p, y| p * (1.0 - y * y));
                    acc(&mut grads, *a, d);
                }
                Op::Gelu(a) => {
                    let d = zip(&g, self.value(*a), |p, x| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        p * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip(&g, &node.value, |p, y| p * y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = (g.rows, g.cols);
                    let mut dg = Mat::zeros(1, cols);
                    let mut db = Mat::zeros(1, cols);
                    let mut dx = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        let mut dxhat = vec![0.0; cols];
                        for j in 0..cols {
                            dg.data[j] += gr[j] * xr[j];
                            db.data[j] += gr[j];
                            dxhat[j] = gr[j] * gv.data[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dot(&dxhat, xr) / cols as f64;
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = inv_std[i] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dg);
                    acc(&mut grads, *bias, db);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    keys,
                    probs,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let heads = *heads;
                    let dq_w = qm.cols / heads;
                    let dv_w = vm.cols / heads;
                    let scale = 1.0 / (dq_w as f64).sqrt();
                    let mut dq = Mat::zeros(qm.rows, qm.cols);
                    let mut dk = Mat::zeros(km.rows, km.cols);
                    let mut dv = Mat::zeros(vm.rows, vm.cols);
                    for i in 0..qm.rows {
                        let ks = &keys[i];
                        for h in 0..heads {
                            let p = &probs[i * heads + h];
                            let go = &g.row(i)[h * dv_w..(h + 1) * dv_w];
                            let dp: Vec<f64> = ks.iter().map(|&j| dot(go, &vm.row(j)[h * dv_w..(h + 1) * dv_w])).collect();
                            let pdp: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            let qi = &qm.row(i)[h * dq_w..(h + 1) * dq_w];
                            for (n, &j) in ks.iter().enumerate() {
                                let pj = p[n];
                                for (d, x) in dv.row_mut(j)[h * dv_w..(h + 1) * dv_w].iter_mut().zip(go) {
                                    *d += pj * x;
                                }
                                let ds = pj * (dp[n] - pdp) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = &km.row(j)[h * dq_w..(h + 1) * dq_w];
                                for (d, x) in dq.row_mut(i)[h * dq_w..(h + 1) * dq_w].iter_mut().zip(kj) {
                                    *d += ds * x;
                                }
                                for (d, x) in dk.row_mut(j)[h * dq_w..(h + 1) * dq_w].iter_mut().zip(qi) {
                                    *d += ds * x;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut d = Mat::zeros(g.rows, w);
                        for i in 0..g.rows {
                            d.row_mut(i).copy_from_slice(&g.row(i)[c..c + w]);
                        }
                        c += w;
                        acc(&mut grads, p, d);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let h = self.value(p).rows;
                        let d = Mat::from_vec(h, g.cols, g.data[r * g.cols..(r + h) * g.cols].to_vec());
                        r += h;
                        acc(&mut grads, p, d);
                    }
                }
                Op::SliceCols(a, start) => {
                    let am = self.value(*a);
                    let mut d = Mat::zeros(am.rows, am.cols);
                    for i in 0..g.rows {
                        d.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Gather(a, index) => {
                    let am = self.value(*a);
                    let mut d = Mat::zeros(am.rows, am.cols);
                    for (n, &i) in index.iter().enumerate() {
                        for (o, x) in d.row_mut(i).iter_mut().zip(g.row(n)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Mat::filled(r, c, g.data[0]));
                }
                Op::SmoothL1 {
                    pred,
                    target,
                    weight,
                    beta,
                } => {
                    let p = self.value(*pred);
                    let s = g.data[0];
                    let mut d = Mat::zeros(p.rows, p.cols);
                    for (n, o) in d.data.iter_mut().enumerate() {
                        let e = p.data[n] - target.data[n];
                        let de = if e.abs() < *beta { e / beta } else { e.signum() };
                        *o = s * weight.data[n] * de;
                    }
                    acc(&mut grads, *pred, d);
                }
                Op::BceLogits { logits, target, weight } => {
                    let z = self.value(*logits);
                    let s = g.data[0];
                    let mut d = Mat::zeros(z.rows, z.cols);
                    for (n, o) in d.data.iter_mut().enumerate() {
                        *o = s * weight.data[n] * (sigmoid(z.data[n]) - target.data[n]);
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::DotConst(a, c) => {
                    let s = g.data[0];
                    acc(&mut grads, *a, c.map(|x| x * s));
                }
            }
        }

        let mut out = Gradients::default();
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get_mut(v.0).and_then(Option::take) {
                out.insert(id, g);
            }
        }
        out
    }
}

fn zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    Mat::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(p, q)| f(*p, *q)).collect())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}
