//! Minimal reverse-mode automatic differentiation over `ndarray`.
//!
//! A [`Graph`] is a tape of nodes created in topological order; every op
//! returns a [`NodeId`]. Calling [`Graph::backward`] on a scalar node walks
//! the tape in reverse and accumulates gradients for every node that
//! (transitively) depends on a leaf. Constants contribute no backward work,
//! so evaluation-only forwards are cheap.
//!
//! All values are `f64`; gradient correctness is pinned by the central
//! finite-difference tests at the bottom of this file.

use ndarray::{ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn};

pub type NodeId = usize;

enum Op {
    Leaf,
    Const,
    Add(NodeId, NodeId),
    /// `x [..., D] + b [D]`
    AddBias(NodeId, NodeId),
    /// `x [B, S, D] + p [S, D]`
    AddSeqBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[m, k] @ [k, n]`
    MatMul(NodeId, NodeId),
    /// `[n, p, q] @ [n, q, r]`
    Bmm(NodeId, NodeId),
    Permute(NodeId, Vec<usize>),
    Reshape(NodeId),
    SoftmaxLast(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    Gelu(NodeId),
    Abs(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    /// `[B, S, D] -> [B, D]`
    MeanAxis1(NodeId),
    IndexSelect {
        x: NodeId,
        axis: usize,
        idx: Vec<usize>,
    },
    /// `(x [B, K, D], positions, seq_len) -> [B, S, D]`, zeros elsewhere.
    ScatterAxis1 {
        x: NodeId,
        positions: Vec<usize>,
    },
    /// `v [D] -> shape [..., D]`
    BroadcastVec(NodeId),
    LogSumExpLast(NodeId),
    /// `x [N, M], idx [N] -> [N]`
    GatherPerRow(NodeId, Vec<usize>),
    /// Row-wise L2 normalization of `[N, D]`.
    NormalizeRows(NodeId),
    /// Mean binary cross-entropy of `logits [N]` against constant targets.
    BceWithLogits {
        logits: NodeId,
        targets: Vec<f64>,
    },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Reshape preserving row-major element order.
fn reshape_std(arr: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let v: Vec<f64> = arr.iter().copied().collect();
    ArrayD::from_shape_vec(IxDyn(shape), v).expect("reshape element count mismatch")
}

fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    /// Scalar value of a 0-d (or single-element) node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        *self.nodes[id].value.iter().next().expect("empty node")
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// A differentiable input (parameters).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input (data, masks, positional tables).
    pub fn constant(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Const, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value + &self.nodes[b].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let d = *self.shape(x).last().expect("add_bias on 0-d");
        debug_assert_eq!(self.shape(b), [d]);
        let bv = self.nodes[b].value.view().into_dimensionality::<Ix1>().unwrap();
        let mut v = self.nodes[x].value.clone();
        for mut lane in v.rows_mut() {
            lane += &bv;
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(v, Op::AddBias(x, b), rg)
    }

    pub fn add_seq_bias(&mut self, x: NodeId, p: NodeId) -> NodeId {
        let xs = self.shape(x).to_vec();
        debug_assert_eq!(self.shape(p), &xs[1..]);
        let pv = self.nodes[p].value.clone();
        let mut v = self.nodes[x].value.clone();
        for mut batch in v.outer_iter_mut() {
            batch += &pv;
        }
        let rg = self.rg(x) || self.rg(p);
        self.push(v, Op::AddSeqBias(x, p), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value - &self.nodes[b].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value * &self.nodes[b].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.nodes[x].value.mapv(|t| t * c);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, c), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.nodes[b].value.view().into_dimensionality::<Ix2>().unwrap();
        let v = av.dot(&bv).into_dyn();
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a].value.view().into_dimensionality::<Ix3>().unwrap();
        let bv = self.nodes[b].value.view().into_dimensionality::<Ix3>().unwrap();
        debug_assert_eq!(av.dim().0, bv.dim().0);
        debug_assert_eq!(av.dim().2, bv.dim().1);
        let (n, p, _) = av.dim();
        let r = bv.dim().2;
        let mut v = ndarray::Array3::<f64>::zeros((n, p, r));
        for i in 0..n {
            let prod = av.index_axis(Axis(0), i).dot(&bv.index_axis(Axis(0), i));
            v.index_axis_mut(Axis(0), i).assign(&prod);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(v.into_dyn(), Op::Bmm(a, b), rg)
    }

    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> NodeId {
        let v = self.nodes[x]
            .value
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let rg = self.rg(x);
        self.push(v, Op::Permute(x, axes.to_vec()), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = reshape_std(&self.nodes[x].value, shape);
        let rg = self.rg(x);
        self.push(v, Op::Reshape(x), rg)
    }

    pub fn softmax_last(&mut self, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        for mut lane in v.rows_mut() {
            let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            lane.mapv_inplace(|t| (t - m).exp());
            let s: f64 = lane.sum();
            lane.mapv_inplace(|t| t / s);
        }
        let rg = self.rg(x);
        self.push(v, Op::SoftmaxLast(x), rg)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let gv = self.nodes[gain].value.view().into_dimensionality::<Ix1>().unwrap();
        let bv = self.nodes[bias].value.view().into_dimensionality::<Ix1>().unwrap();
        let mut v = self.nodes[x].value.clone();
        for mut lane in v.rows_mut() {
            let d = lane.len() as f64;
            let mu = lane.sum() / d;
            let var = lane.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / d;
            let sigma = (var + LN_EPS).sqrt();
            for (k, t) in lane.iter_mut().enumerate() {
                *t = (*t - mu) / sigma * gv[k] + bv[k];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(v, Op::LayerNorm { x, gain, bias }, rg)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.mapv(gelu_scalar);
        let rg = self.rg(x);
        self.push(v, Op::Gelu(x), rg)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.mapv(f64::abs);
        let rg = self.rg(x);
        self.push(v, Op::Abs(x), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let m = self.nodes[x].value.mean().unwrap_or(0.0);
        let rg = self.rg(x);
        self.push(ndarray::arr0(m).into_dyn(), Op::MeanAll(x), rg)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].value.sum();
        let rg = self.rg(x);
        self.push(ndarray::arr0(s).into_dyn(), Op::SumAll(x), rg)
    }

    pub fn mean_axis1(&mut self, x: NodeId) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix3>().unwrap();
        let v = xv.mean_axis(Axis(1)).unwrap().into_dyn();
        let rg = self.rg(x);
        self.push(v, Op::MeanAxis1(x), rg)
    }

    pub fn index_select(&mut self, x: NodeId, axis: usize, idx: &[usize]) -> NodeId {
        let v = self.nodes[x].value.select(Axis(axis), idx);
        let rg = self.rg(x);
        self.push(
            v,
            Op::IndexSelect {
                x,
                axis,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    /// Place the K rows of `x [B, K, D]` at `positions` within a zeroed
    /// `[B, seq_len, D]` output.
    pub fn scatter_axis1(&mut self, x: NodeId, positions: &[usize], seq_len: usize) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix3>().unwrap();
        let (b, k, d) = xv.dim();
        debug_assert_eq!(k, positions.len());
        let mut v = ndarray::Array3::<f64>::zeros((b, seq_len, d));
        for (j, &pos) in positions.iter().enumerate() {
            v.index_axis_mut(Axis(1), pos)
                .assign(&xv.index_axis(Axis(1), j));
        }
        let rg = self.rg(x);
        self.push(
            v.into_dyn(),
            Op::ScatterAxis1 {
                x,
                positions: positions.to_vec(),
            },
            rg,
        )
    }

    /// Broadcast a `[D]` vector to `shape` (whose last axis must be `D`).
    pub fn broadcast_vec(&mut self, v: NodeId, shape: &[usize]) -> NodeId {
        let vv = self.nodes[v].value.view().into_dimensionality::<Ix1>().unwrap();
        debug_assert_eq!(*shape.last().unwrap(), vv.len());
        let out = self.nodes[v]
            .value
            .broadcast(IxDyn(shape))
            .expect("broadcast shape mismatch")
            .to_owned();
        let rg = self.rg(v);
        self.push(out, Op::BroadcastVec(v), rg)
    }

    pub fn logsumexp_last(&mut self, x: NodeId) -> NodeId {
        let xs = self.shape(x).to_vec();
        let (out_shape, _d) = (xs[..xs.len() - 1].to_vec(), xs[xs.len() - 1]);
        let mut out = Vec::new();
        for lane in self.nodes[x].value.rows() {
            let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = lane.iter().map(|&t| (t - m).exp()).sum();
            out.push(m + s.ln());
        }
        let v = ArrayD::from_shape_vec(IxDyn(&out_shape), out).unwrap();
        let rg = self.rg(x);
        self.push(v, Op::LogSumExpLast(x), rg)
    }

    pub fn gather_per_row(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix2>().unwrap();
        debug_assert_eq!(xv.nrows(), idx.len());
        let v: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| xv[[i, j]]).collect();
        let out = ArrayD::from_shape_vec(IxDyn(&[idx.len()]), v).unwrap();
        let rg = self.rg(x);
        self.push(out, Op::GatherPerRow(x, idx.to_vec()), rg)
    }

    pub fn normalize_rows(&mut self, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        for mut lane in v.rows_mut() {
            let n = lane.iter().map(|t| t * t).sum::<f64>().sqrt().max(NORM_EPS);
            lane.mapv_inplace(|t| t / n);
        }
        let rg = self.rg(x);
        self.push(v, Op::NormalizeRows(x), rg)
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64]) -> NodeId {
        let lv = self.nodes[logits].value.view().into_dimensionality::<Ix1>().unwrap();
        debug_assert_eq!(lv.len(), targets.len());
        let mut total = 0.0;
        for (&x, &y) in lv.iter().zip(targets) {
            total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        }
        let v = ndarray::arr0(total / targets.len() as f64).into_dyn();
        let rg = self.rg(logits);
        self.push(
            v,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// `x @ w + b` over the last axis of `x`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xs = self.shape(x).to_vec();
        let k = *xs.last().unwrap();
        let n = self.shape(w)[1];
        let flat: usize = xs[..xs.len() - 1].iter().product();
        let x2 = self.reshape(x, &[flat, k]);
        let y2 = self.matmul(x2, w);
        let mut out_shape = xs[..xs.len() - 1].to_vec();
        out_shape.push(n);
        let y = self.reshape(y2, &out_shape);
        match b {
            Some(b) => self.add_bias(y, b),
            None => y,
        }
    }

    /// Reverse-mode sweep from scalar node `loss`; returns per-node
    /// gradients (None for nodes the loss does not depend on).
    pub fn backward(&mut self, loss: NodeId) -> Vec<Option<ArrayD<f64>>> {
        assert_eq!(
            self.nodes[loss].value.len(),
            1,
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(ArrayD::from_elem(
            self.nodes[loss].value.raw_dim(),
            1.0,
        ));

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(go) = grads[id].take() else { continue };
            let contributions = self.backward_step(id, &go);
            for (pid, g) in contributions {
                if !self.nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
            if !matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = None;
            } else {
                grads[id] = Some(go);
            }
        }
        grads
    }

    fn backward_step(&self, id: NodeId, go: &ArrayD<f64>) -> Vec<(NodeId, ArrayD<f64>)> {
        match &self.nodes[id].op {
            Op::Leaf | Op::Const => Vec::new(),
            Op::Add(a, b) => vec![(*a, go.clone()), (*b, go.clone())],
            Op::Sub(a, b) => vec![(*a, go.clone()), (*b, go.mapv(|t| -t))],
            Op::AddBias(x, b) => {
                let d = *go.shape().last().unwrap();
                let mut gb = ndarray::Array1::<f64>::zeros(d);
                for lane in go.rows() {
                    gb += &lane;
                }
                vec![(*x, go.clone()), (*b, gb.into_dyn())]
            }
            Op::AddSeqBias(x, p) => {
                let mut gp = ArrayD::<f64>::zeros(self.nodes[*p].value.raw_dim());
                for batch in go.outer_iter() {
                    gp += &batch;
                }
                vec![(*x, go.clone()), (*p, gp)]
            }
            Op::Mul(a, b) => {
                let ga = go * &self.nodes[*b].value;
                let gb = go * &self.nodes[*a].value;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, c) => vec![(*x, go.mapv(|t| t * c))],
            Op::MatMul(a, b) => {
                let av = self.nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
                let bv = self.nodes[*b].value.view().into_dimensionality::<Ix2>().unwrap();
                let gv = go.view().into_dimensionality::<Ix2>().unwrap();
                let ga = gv.dot(&bv.t()).into_dyn();
                let gb = av.t().dot(&gv).into_dyn();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Bmm(a, b) => {
                let av = self.nodes[*a].value.view().into_dimensionality::<Ix3>().unwrap();
                let bv = self.nodes[*b].value.view().into_dimensionality::<Ix3>().unwrap();
                let gv = go.view().into_dimensionality::<Ix3>().unwrap();
                let n = av.dim().0;
                let mut ga = ndarray::Array3::<f64>::zeros(av.dim());
                let mut gb = ndarray::Array3::<f64>::zeros(bv.dim());
                for i in 0..n {
                    let gi = gv.index_axis(Axis(0), i);
                    ga.index_axis_mut(Axis(0), i)
                        .assign(&gi.dot(&bv.index_axis(Axis(0), i).t()));
                    gb.index_axis_mut(Axis(0), i)
                        .assign(&av.index_axis(Axis(0), i).t().dot(&gi));
                }
                vec![(*a, ga.into_dyn()), (*b, gb.into_dyn())]
            }
            Op::Permute(x, axes) => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let gx = go
                    .view()
                    .permuted_axes(IxDyn(&inverse))
                    .as_standard_layout()
                    .to_owned();
                vec![(*x, gx)]
            }
            Op::Reshape(x) => {
                let gx = reshape_std(go, self.nodes[*x].value.shape());
                vec![(*x, gx)]
            }
            Op::SoftmaxLast(x) => {
                let y = &self.nodes[id].value;
                let mut gx = go * y;
                for (mut glane, ylane) in gx.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = glane.sum();
                    for (g, &yv) in glane.iter_mut().zip(ylane.iter()) {
                        *g -= dot * yv;
                    }
                }
                vec![(*x, gx)]
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = &self.nodes[*x].value;
                let gv = self.nodes[*gain].value.view().into_dimensionality::<Ix1>().unwrap();
                let d = gv.len();
                let mut gx = ArrayD::<f64>::zeros(xv.raw_dim());
                let mut ggain = ndarray::Array1::<f64>::zeros(d);
                let mut gbias = ndarray::Array1::<f64>::zeros(d);
                for ((xlane, glane), mut olane) in xv
                    .rows()
                    .into_iter()
                    .zip(go.rows())
                    .zip(gx.rows_mut())
                {
                    let df = d as f64;
                    let mu = xlane.sum() / df;
                    let var = xlane.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / df;
                    let sigma = (var + LN_EPS).sqrt();
                    let ylane: Vec<f64> = xlane.iter().map(|t| (t - mu) / sigma).collect();
                    let dy: Vec<f64> = glane
                        .iter()
                        .enumerate()
                        .map(|(k, g)| g * gv[k])
                        .collect();
                    let mean_dy = dy.iter().sum::<f64>() / df;
                    let mean_dyy = dy
                        .iter()
                        .zip(&ylane)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / df;
                    for k in 0..d {
                        olane[k] = (dy[k] - mean_dy - ylane[k] * mean_dyy) / sigma;
                        ggain[k] += glane[k] * ylane[k];
                        gbias[k] += glane[k];
                    }
                }
                vec![
                    (*x, gx),
                    (*gain, ggain.into_dyn()),
                    (*bias, gbias.into_dyn()),
                ]
            }
            Op::Gelu(x) => {
                let gx = ndarray::Zip::from(go)
                    .and(&self.nodes[*x].value)
                    .map_collect(|&g, &t| g * gelu_grad_scalar(t));
                vec![(*x, gx)]
            }
            Op::Abs(x) => {
                let gx = ndarray::Zip::from(go)
                    .and(&self.nodes[*x].value)
                    .map_collect(|&g, &t| g * t.signum() * if t == 0.0 { 0.0 } else { 1.0 });
                vec![(*x, gx)]
            }
            Op::MeanAll(x) => {
                let n = self.nodes[*x].value.len() as f64;
                let g = go.iter().next().unwrap() / n;
                vec![(
                    *x,
                    ArrayD::from_elem(self.nodes[*x].value.raw_dim(), g),
                )]
            }
            Op::SumAll(x) => {
                let g = *go.iter().next().unwrap();
                vec![(
                    *x,
                    ArrayD::from_elem(self.nodes[*x].value.raw_dim(), g),
                )]
            }
            Op::MeanAxis1(x) => {
                let xs = self.nodes[*x].value.shape().to_vec();
                let s = xs[1] as f64;
                let gv = go.view().into_dimensionality::<Ix2>().unwrap();
                let mut gx = ndarray::Array3::<f64>::zeros((xs[0], xs[1], xs[2]));
                for bch in 0..xs[0] {
                    for t in 0..xs[1] {
                        for dch in 0..xs[2] {
                            gx[[bch, t, dch]] = gv[[bch, dch]] / s;
                        }
                    }
                }
                vec![(*x, gx.into_dyn())]
            }
            Op::IndexSelect { x, axis, idx } => {
                let mut gx = ArrayD::<f64>::zeros(self.nodes[*x].value.raw_dim());
                for (j, &src) in idx.iter().enumerate() {
                    let mut lane = gx.index_axis_mut(Axis(*axis), src);
                    lane += &go.index_axis(Axis(*axis), j);
                }
                vec![(*x, gx)]
            }
            Op::ScatterAxis1 { x, positions } => {
                let gx = go.select(Axis(1), positions);
                vec![(*x, gx)]
            }
            Op::BroadcastVec(v) => {
                let d = self.nodes[*v].value.len();
                let mut gv = ndarray::Array1::<f64>::zeros(d);
                for lane in go.rows() {
                    gv += &lane;
                }
                vec![(*v, gv.into_dyn())]
            }
            Op::LogSumExpLast(x) => {
                let xv = &self.nodes[*x].value;
                let mut gx = ArrayD::<f64>::zeros(xv.raw_dim());
                for ((xlane, mut olane), &g) in
                    xv.rows().into_iter().zip(gx.rows_mut()).zip(go.iter())
                {
                    let m = xlane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = xlane.iter().map(|&t| (t - m).exp()).sum();
                    for (o, &t) in olane.iter_mut().zip(xlane.iter()) {
                        *o = g * (t - m).exp() / s;
                    }
                }
                vec![(*x, gx)]
            }
            Op::GatherPerRow(x, idx) => {
                let mut gx = ArrayD::<f64>::zeros(self.nodes[*x].value.raw_dim());
                let gv = go.view().into_dimensionality::<Ix1>().unwrap();
                let mut gx2 = gx.view_mut().into_dimensionality::<Ix2>().unwrap();
                for (i, &j) in idx.iter().enumerate() {
                    gx2[[i, j]] += gv[i];
                }
                vec![(*x, gx)]
            }
            Op::NormalizeRows(x) => {
                let xv = &self.nodes[*x].value;
                let mut gx = ArrayD::<f64>::zeros(xv.raw_dim());
                for ((xlane, glane), mut olane) in xv
                    .rows()
                    .into_iter()
                    .zip(go.rows())
                    .zip(gx.rows_mut())
                {
                    let n = xlane.iter().map(|t| t * t).sum::<f64>().sqrt().max(NORM_EPS);
                    let y: Vec<f64> = xlane.iter().map(|t| t / n).collect();
                    let dot: f64 = glane.iter().zip(&y).map(|(g, yv)| g * yv).sum();
                    for (k, o) in olane.iter_mut().enumerate() {
                        *o = (glane[k] - y[k] * dot) / n;
                    }
                }
                vec![(*x, gx)]
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = self.nodes[*logits].value.view().into_dimensionality::<Ix1>().unwrap();
                let g = *go.iter().next().unwrap();
                let n = targets.len() as f64;
                let gx: Vec<f64> = lv
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| g * (sigmoid(x) - y) / n)
                    .collect();
                vec![(
                    *logits,
                    ArrayD::from_shape_vec(IxDyn(&[targets.len()]), gx).unwrap(),
                )]
            }
        }
    }
}
