//! Reverse-mode differentiation over small dense tensors.
//!
//! A [`Graph`] is a dynamic tape: every operation appends a node holding its
//! value and a backward rule, so creation order is already a topological
//! order. [`Graph::backward`] walks the tape once in reverse, accumulating
//! gradients into each node. Graphs are rebuilt per example or batch (the
//! virtual-sentence structure varies per example) and are confined to one
//! worker; parallelism happens across examples, never inside a graph.
//!
//! Repeated `backward` calls without clearing accumulate gradients.

mod tensor;

pub use tensor::Tensor;

use std::cell::RefCell;

use crate::error::{Error, Result};

/// Handle to a node in one [`Graph`]. Only valid for the graph that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// Elementwise sum; rhs may be a rank-1 bias broadcast over rank-2 rows.
    Add(NodeId, NodeId),
    /// Elementwise product of same-shape tensors.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `lhs @ rhs` with rhs rank-2; lhs rank-1 is treated as a single row.
    MatMul(NodeId, NodeId),
    /// Same-padded 1-D convolution: input (L,d), weight (k,d,f), bias (f).
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    /// Per-feature max over unmasked positions of an (L,f) tensor.
    MaxPoolSeq { input: NodeId, argmax: Vec<usize> },
    /// Per-feature mean over unmasked positions of an (L,f) tensor.
    MeanSeq { input: NodeId, mask: Vec<bool> },
    Relu(NodeId),
    /// Softmax over the last (and only) axis of a rank-1 tensor.
    Softmax(NodeId),
    Log(NodeId),
    /// Embedding-row gather: (V,d) rows picked by ids into (L,d).
    /// Rows gathered at `pad` receive no gradient.
    Gather {
        emb: NodeId,
        ids: Vec<u32>,
        pad: u32,
    },
    /// Weighted embedding mix: softmax(eta) convex-combines rows `ids` of the
    /// embedding into one d-vector. Gradients flow to eta and to every mixed
    /// row (except `pad` rows).
    Mix {
        emb: NodeId,
        eta: NodeId,
        ids: Vec<u32>,
        pad: u32,
    },
    /// One component of a rank-1 tensor, as a scalar.
    Select(NodeId, usize),
    /// Stack n rank-1 tensors of equal length into (n,d).
    Stack(Vec<NodeId>),
    /// Sum of same-shape tensors.
    SumMany(Vec<NodeId>),
}

struct NodeData {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// A dynamic computation tape. See the module docs.
pub struct Graph {
    nodes: RefCell<Vec<NodeData>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Tensor, op: Op) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(NodeData {
            value,
            grad: None,
            op,
        });
        NodeId(nodes.len() - 1)
    }

    /// A leaf node (input, parameter or constant).
    pub fn leaf(&self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id.0].value.clone()
    }

    pub fn dims(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.dims().to_vec()
    }

    /// Accumulated gradient of `id`, if the node was reached by a backward pass.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        self.nodes.borrow()[id.0].grad.clone()
    }

    pub fn add(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let (da, db) = (nodes[a.0].value.dims(), nodes[b.0].value.dims());
        let bias_cast = da.len() == 2 && db.len() == 1 && da[1] == db[0];
        if da != db && !bias_cast {
            return Err(Error::Shape(format!("add {:?} vs {:?}", da, db)));
        }
        let mut out = nodes[a.0].value.clone();
        if bias_cast {
            let cols = da[1];
            let bv = nodes[b.0].value.data();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += bv[i % cols];
            }
        } else {
            let bv = nodes[b.0].value.data();
            for (v, w) in out.data_mut().iter_mut().zip(bv) {
                *v += w;
            }
        }
        drop(nodes);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let (da, db) = (nodes[a.0].value.dims(), nodes[b.0].value.dims());
        if da != db {
            return Err(Error::Shape(format!("mul {:?} vs {:?}", da, db)));
        }
        let mut out = nodes[a.0].value.clone();
        let bv = nodes[b.0].value.data();
        for (v, w) in out.data_mut().iter_mut().zip(bv) {
            *v *= w;
        }
        drop(nodes);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&self, a: NodeId, c: f64) -> NodeId {
        let mut out = self.nodes.borrow()[a.0].value.clone();
        for v in out.data_mut() {
            *v *= c;
        }
        self.push(out, Op::Scale(a, c))
    }

    pub fn matmul(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let (da, db) = (
            nodes[a.0].value.dims().to_vec(),
            nodes[b.0].value.dims().to_vec(),
        );
        if db.len() != 2 {
            return Err(Error::Shape(format!("matmul rhs {:?} not rank 2", db)));
        }
        let (rows, inner) = match da.len() {
            1 => (1, da[0]),
            2 => (da[0], da[1]),
            _ => return Err(Error::Shape(format!("matmul lhs {:?}", da))),
        };
        if inner != db[0] {
            return Err(Error::Shape(format!("matmul {:?} @ {:?}", da, db)));
        }
        let cols = db[1];
        let av = nodes[a.0].value.data();
        let bv = nodes[b.0].value.data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for k in 0..inner {
                let x = av[i * inner + k];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[k * cols..(k + 1) * cols];
                let orow = &mut out[i * cols..(i + 1) * cols];
                for (o, w) in orow.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let dims = if da.len() == 1 {
            vec![cols]
        } else {
            vec![rows, cols]
        };
        drop(nodes);
        Ok(self.push(Tensor::new(dims, out)?, Op::MatMul(a, b)))
    }

    pub fn conv1d(&self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let di = nodes[input.0].value.dims().to_vec();
        let dw = nodes[weight.0].value.dims().to_vec();
        let db = nodes[bias.0].value.dims().to_vec();
        if di.len() != 2 || dw.len() != 3 || db.len() != 1 {
            return Err(Error::Shape(format!(
                "conv1d input {:?}, weight {:?}, bias {:?}",
                di, dw, db
            )));
        }
        let (len, d) = (di[0], di[1]);
        let (k, wd, f) = (dw[0], dw[1], dw[2]);
        if wd != d || db[0] != f || k % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv1d input {:?} incompatible with weight {:?} (kernel must be odd)",
                di, dw
            )));
        }
        let pad = (k - 1) / 2;
        let iv = &nodes[input.0].value;
        let wv = &nodes[weight.0].value;
        let bv = nodes[bias.0].value.data();
        let mut out = vec![0.0; len * f];
        for t in 0..len {
            let orow = &mut out[t * f..(t + 1) * f];
            orow.copy_from_slice(bv);
            for w in 0..k {
                let s = t + w;
                if s < pad || s - pad >= len {
                    continue; // zero padding
                }
                let irow = iv.row(s - pad);
                for (c, &x) in irow.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (o, j) in orow.iter_mut().zip(0..f) {
                        *o += x * wv.at3(w, c, j);
                    }
                }
            }
        }
        drop(nodes);
        Ok(self.push(
            Tensor::new(vec![len, f], out)?,
            Op::Conv1d {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Max over unmasked sequence positions, per feature. An all-false mask
    /// falls back to pooling over every position.
    pub fn max_pool_seq(&self, input: NodeId, mask: &[bool]) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let di = nodes[input.0].value.dims().to_vec();
        if di.len() != 2 || di[0] != mask.len() {
            return Err(Error::Shape(format!(
                "max_pool_seq input {:?}, mask len {}",
                di,
                mask.len()
            )));
        }
        let mask = normalize_mask(mask);
        let (len, f) = (di[0], di[1]);
        let iv = &nodes[input.0].value;
        let mut out = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0usize; f];
        for t in 0..len {
            if !mask[t] {
                continue;
            }
            for (c, &x) in iv.row(t).iter().enumerate() {
                if x > out[c] {
                    out[c] = x;
                    argmax[c] = t;
                }
            }
        }
        drop(nodes);
        Ok(self.push(Tensor::vector(out), Op::MaxPoolSeq { input, argmax }))
    }

    /// Mean over unmasked sequence positions, per feature. An all-false mask
    /// falls back to averaging every position.
    pub fn mean_seq(&self, input: NodeId, mask: &[bool]) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let di = nodes[input.0].value.dims().to_vec();
        if di.len() != 2 || di[0] != mask.len() {
            return Err(Error::Shape(format!(
                "mean_seq input {:?}, mask len {}",
                di,
                mask.len()
            )));
        }
        let mask = normalize_mask(mask);
        let (len, f) = (di[0], di[1]);
        let n = mask.iter().filter(|m| **m).count();
        let iv = &nodes[input.0].value;
        let mut out = vec![0.0; f];
        for t in 0..len {
            if !mask[t] {
                continue;
            }
            for (c, &x) in iv.row(t).iter().enumerate() {
                out[c] += x;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        drop(nodes);
        Ok(self.push(Tensor::vector(out), Op::MeanSeq { input, mask }))
    }

    pub fn relu(&self, a: NodeId) -> NodeId {
        let mut out = self.nodes.borrow()[a.0].value.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(a))
    }

    pub fn softmax(&self, a: NodeId) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let da = nodes[a.0].value.dims().to_vec();
        if da.len() != 1 {
            return Err(Error::Shape(format!("softmax on {:?}, want rank 1", da)));
        }
        let out = Tensor::vector(softmax_slice(nodes[a.0].value.data()));
        drop(nodes);
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn log(&self, a: NodeId) -> NodeId {
        let mut out = self.nodes.borrow()[a.0].value.clone();
        for v in out.data_mut() {
            *v = v.ln();
        }
        self.push(out, Op::Log(a))
    }

    /// Gather embedding rows for a token id sequence: (V,d) -> (L,d).
    pub fn gather(&self, emb: NodeId, ids: &[u32], pad: u32) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let de = nodes[emb.0].value.dims().to_vec();
        if de.len() != 2 {
            return Err(Error::Shape(format!("gather emb {:?}, want rank 2", de)));
        }
        let (v, d) = (de[0], de[1]);
        let ev = &nodes[emb.0].value;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if (id as usize) >= v {
                return Err(Error::Shape(format!("gather id {} out of {} rows", id, v)));
            }
            out.extend_from_slice(ev.row(id as usize));
        }
        drop(nodes);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                emb,
                ids: ids.to_vec(),
                pad,
            },
        ))
    }

    /// Convex mix of embedding rows with weights softmax(eta); the
    /// differentiable form of `simplex::convex_combine`.
    pub fn mix(&self, emb: NodeId, eta: NodeId, ids: &[u32], pad: u32) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let de = nodes[emb.0].value.dims().to_vec();
        let dn = nodes[eta.0].value.dims().to_vec();
        if de.len() != 2 || dn.len() != 1 || dn[0] != ids.len() {
            return Err(Error::Shape(format!(
                "mix emb {:?}, eta {:?}, {} ids",
                de,
                dn,
                ids.len()
            )));
        }
        let d = de[1];
        let beta = softmax_slice(nodes[eta.0].value.data());
        let ev = &nodes[emb.0].value;
        let mut out = vec![0.0; d];
        for (j, &id) in ids.iter().enumerate() {
            if (id as usize) >= de[0] {
                return Err(Error::Shape(format!(
                    "mix id {} out of {} rows",
                    id, de[0]
                )));
            }
            let row = ev.row(id as usize);
            for (o, &x) in out.iter_mut().zip(row) {
                *o += beta[j] * x;
            }
        }
        drop(nodes);
        Ok(self.push(
            Tensor::vector(out),
            Op::Mix {
                emb,
                eta,
                ids: ids.to_vec(),
                pad,
            },
        ))
    }

    pub fn select(&self, a: NodeId, idx: usize) -> Result<NodeId> {
        let nodes = self.nodes.borrow();
        let da = nodes[a.0].value.dims().to_vec();
        if da.len() != 1 || idx >= da[0] {
            return Err(Error::Shape(format!("select {} from {:?}", idx, da)));
        }
        let v = nodes[a.0].value.data()[idx];
        drop(nodes);
        Ok(self.push(Tensor::scalar(v), Op::Select(a, idx)))
    }

    pub fn stack(&self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("stack of zero tensors".into()));
        }
        let nodes = self.nodes.borrow();
        let d = nodes[parts[0].0].value.dims().to_vec();
        if d.len() != 1 {
            return Err(Error::Shape(format!("stack of {:?}, want rank 1", d)));
        }
        let mut out = Vec::with_capacity(parts.len() * d[0]);
        for p in parts {
            let pv = &nodes[p.0].value;
            if pv.dims() != d.as_slice() {
                return Err(Error::Shape(format!(
                    "stack {:?} vs {:?}",
                    pv.dims(),
                    d
                )));
            }
            out.extend_from_slice(pv.data());
        }
        drop(nodes);
        Ok(self.push(
            Tensor::new(vec![parts.len(), d[0]], out)?,
            Op::Stack(parts.to_vec()),
        ))
    }

    pub fn sum_many(&self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("sum of zero tensors".into()));
        }
        let nodes = self.nodes.borrow();
        let mut out = nodes[parts[0].0].value.clone();
        for p in &parts[1..] {
            let pv = &nodes[p.0].value;
            if pv.dims() != out.dims() {
                return Err(Error::Shape(format!(
                    "sum {:?} vs {:?}",
                    pv.dims(),
                    out.dims()
                )));
            }
            for (o, &x) in out.data_mut().iter_mut().zip(pv.data()) {
                *o += x;
            }
        }
        drop(nodes);
        Ok(self.push(out, Op::SumMany(parts.to_vec())))
    }

    pub fn mean_many(&self, parts: &[NodeId]) -> Result<NodeId> {
        let s = self.sum_many(parts)?;
        Ok(self.scale(s, 1.0 / parts.len() as f64))
    }

    /// Backpropagates from a scalar loss, populating `grad` on every node the
    /// loss depends on. Gradients accumulate across calls.
    pub fn backward(&self, loss: NodeId) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.0].value.rank() != 0 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                nodes[loss.0].value.dims()
            )));
        }
        let n = nodes.len();
        // Local upstream buffers: reverse creation order is reverse
        // topological order, so each node is finalized before it is visited.
        let mut up: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        up[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..n).rev() {
            let Some(u) = up[i].take() else { continue };
            // Accumulate into the persistent grad slot.
            {
                let slot = &mut nodes[i].grad;
                match slot {
                    Some(g) => {
                        for (a, b) in g.data_mut().iter_mut().zip(u.data()) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(u.clone()),
                }
            }
            step_backward(&nodes, i, &u, &mut up);
        }
        Ok(())
    }
}

fn normalize_mask(mask: &[bool]) -> Vec<bool> {
    if mask.iter().any(|m| *m) {
        mask.to_vec()
    } else {
        vec![true; mask.len()]
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

fn add_into(slot: &mut Option<Tensor>, dims: &[usize], f: impl FnOnce(&mut Tensor)) {
    if slot.is_none() {
        *slot = Some(Tensor::zeros(dims.to_vec()));
    }
    f(slot.as_mut().unwrap());
}

fn step_backward(nodes: &[NodeData], i: usize, u: &Tensor, up: &mut [Option<Tensor>]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let da = nodes[a.0].value.dims().to_vec();
            let db = nodes[b.0].value.dims().to_vec();
            add_into(&mut up[a.0], &da, |g| {
                for (x, y) in g.data_mut().iter_mut().zip(u.data()) {
                    *x += y;
                }
            });
            if da.len() == 2 && db.len() == 1 {
                let cols = da[1];
                add_into(&mut up[b.0], &db, |g| {
                    for (k, y) in u.data().iter().enumerate() {
                        g.data_mut()[k % cols] += y;
                    }
                });
            } else {
                add_into(&mut up[b.0], &db, |g| {
                    for (x, y) in g.data_mut().iter_mut().zip(u.data()) {
                        *x += y;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            let av = nodes[a.0].value.clone();
            let bv = nodes[b.0].value.clone();
            add_into(&mut up[a.0], av.dims(), |g| {
                for ((x, y), w) in g.data_mut().iter_mut().zip(u.data()).zip(bv.data()) {
                    *x += y * w;
                }
            });
            add_into(&mut up[b.0], bv.dims(), |g| {
                for ((x, y), w) in g.data_mut().iter_mut().zip(u.data()).zip(av.data()) {
                    *x += y * w;
                }
            });
        }
        Op::Scale(a, c) => {
            let (a, c) = (*a, *c);
            add_into(&mut up[a.0], nodes[a.0].value.dims(), |g| {
                for (x, y) in g.data_mut().iter_mut().zip(u.data()) {
                    *x += c * y;
                }
            });
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let (rows, inner) = match av.rank() {
                1 => (1, av.dims()[0]),
                _ => (av.dims()[0], av.dims()[1]),
            };
            let cols = bv.dims()[1];
            add_into(&mut up[a.0], av.dims(), |g| {
                let gd = g.data_mut();
                for i in 0..rows {
                    for k in 0..inner {
                        let mut acc = 0.0;
                        for j in 0..cols {
                            acc += u.data()[i * cols + j] * bv.data()[k * cols + j];
                        }
                        gd[i * inner + k] += acc;
                    }
                }
            });
            add_into(&mut up[b.0], bv.dims(), |g| {
                let gd = g.data_mut();
                for k in 0..inner {
                    for i in 0..rows {
                        let x = av.data()[i * inner + k];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..cols {
                            gd[k * cols + j] += x * u.data()[i * cols + j];
                        }
                    }
                }
            });
        }
        Op::Conv1d {
            input,
            weight,
            bias,
        } => {
            let (input, weight, bias) = (*input, *weight, *bias);
            let iv = &nodes[input.0].value;
            let wv = &nodes[weight.0].value;
            let (len, d) = (iv.dims()[0], iv.dims()[1]);
            let (k, f) = (wv.dims()[0], wv.dims()[2]);
            let pad = (k - 1) / 2;
            add_into(&mut up[input.0], iv.dims(), |g| {
                let gd = g.data_mut();
                for t in 0..len {
                    let urow = &u.data()[t * f..(t + 1) * f];
                    for w in 0..k {
                        let s = t + w;
                        if s < pad || s - pad >= len {
                            continue;
                        }
                        let s = s - pad;
                        for c in 0..d {
                            let mut acc = 0.0;
                            for j in 0..f {
                                acc += wv.at3(w, c, j) * urow[j];
                            }
                            gd[s * d + c] += acc;
                        }
                    }
                }
            });
            add_into(&mut up[weight.0], wv.dims(), |g| {
                let gd = g.data_mut();
                for t in 0..len {
                    let urow = &u.data()[t * f..(t + 1) * f];
                    for w in 0..k {
                        let s = t + w;
                        if s < pad || s - pad >= len {
                            continue;
                        }
                        let irow = iv.row(s - pad);
                        for (c, &x) in irow.iter().enumerate() {
                            if x == 0.0 {
                                continue;
                            }
                            for (j, &uy) in urow.iter().enumerate() {
                                gd[(w * d + c) * f + j] += x * uy;
                            }
                        }
                    }
                }
            });
            add_into(&mut up[bias.0], &[f], |g| {
                let gd = g.data_mut();
                for t in 0..len {
                    for j in 0..f {
                        gd[j] += u.data()[t * f + j];
                    }
                }
            });
        }
        Op::MaxPoolSeq { input, argmax } => {
            let input = *input;
            let f = argmax.len();
            add_into(&mut up[input.0], nodes[input.0].value.dims(), |g| {
                for (c, &t) in argmax.iter().enumerate() {
                    g.data_mut()[t * f + c] += u.data()[c];
                }
            });
        }
        Op::MeanSeq { input, mask } => {
            let input = *input;
            let n = mask.iter().filter(|m| **m).count() as f64;
            let f = u.len();
            add_into(&mut up[input.0], nodes[input.0].value.dims(), |g| {
                for (t, &m) in mask.iter().enumerate() {
                    if !m {
                        continue;
                    }
                    for j in 0..f {
                        g.data_mut()[t * f + j] += u.data()[j] / n;
                    }
                }
            });
        }
        Op::Relu(a) => {
            let a = *a;
            let av = &nodes[a.0].value;
            add_into(&mut up[a.0], av.dims(), |g| {
                for ((x, y), &v) in g.data_mut().iter_mut().zip(u.data()).zip(av.data()) {
                    if v > 0.0 {
                        *x += y;
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let a = *a;
            let y = &nodes[i].value;
            let dot: f64 = y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
            add_into(&mut up[a.0], y.dims(), |g| {
                for ((x, &yy), &uu) in g.data_mut().iter_mut().zip(y.data()).zip(u.data()) {
                    *x += yy * (uu - dot);
                }
            });
        }
        Op::Log(a) => {
            let a = *a;
            let av = &nodes[a.0].value;
            add_into(&mut up[a.0], av.dims(), |g| {
                for ((x, y), &v) in g.data_mut().iter_mut().zip(u.data()).zip(av.data()) {
                    *x += y / v;
                }
            });
        }
        Op::Gather { emb, ids, pad } => {
            let emb = *emb;
            let d = nodes[emb.0].value.dims()[1];
            add_into(&mut up[emb.0], nodes[emb.0].value.dims(), |g| {
                for (t, &id) in ids.iter().enumerate() {
                    if id == *pad {
                        continue; // PAD is structural, not semantic
                    }
                    let row = id as usize;
                    for j in 0..d {
                        g.data_mut()[row * d + j] += u.data()[t * d + j];
                    }
                }
            });
        }
        Op::Mix { emb, eta, ids, pad } => {
            let (emb, eta) = (*emb, *eta);
            let ev = &nodes[emb.0].value;
            let d = ev.dims()[1];
            let beta = softmax_slice(nodes[eta.0].value.data());
            // s_j = u . x_j
            let s: Vec<f64> = ids
                .iter()
                .map(|&id| {
                    ev.row(id as usize)
                        .iter()
                        .zip(u.data())
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            let sbar: f64 = beta.iter().zip(&s).map(|(b, s)| b * s).sum();
            add_into(&mut up[emb.0], ev.dims(), |g| {
                for (j, &id) in ids.iter().enumerate() {
                    if id == *pad {
                        continue;
                    }
                    let row = id as usize;
                    for c in 0..d {
                        g.data_mut()[row * d + c] += beta[j] * u.data()[c];
                    }
                }
            });
            add_into(&mut up[eta.0], &[ids.len()], |g| {
                for (j, x) in g.data_mut().iter_mut().enumerate() {
                    *x += beta[j] * (s[j] - sbar);
                }
            });
        }
        Op::Select(a, idx) => {
            let (a, idx) = (*a, *idx);
            add_into(&mut up[a.0], nodes[a.0].value.dims(), |g| {
                g.data_mut()[idx] += u.item();
            });
        }
        Op::Stack(parts) => {
            let d = u.dims()[1];
            for (t, p) in parts.iter().enumerate() {
                add_into(&mut up[p.0], &[d], |g| {
                    for j in 0..d {
                        g.data_mut()[j] += u.data()[t * d + j];
                    }
                });
            }
        }
        Op::SumMany(parts) => {
            for p in parts {
                add_into(&mut up[p.0], u.dims(), |g| {
                    for (x, y) in g.data_mut().iter_mut().zip(u.data()) {
                        *x += y;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests;
