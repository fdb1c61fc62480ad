//! The two classifier architectures producing class scores from a sequence
//! of embedding vectors.
//!
//! A [`Classifier`] owns its parameters (including the embedding matrix,
//! which is trainable). Forward passes run through a per-call [`Graph`]: a
//! [`Session`] injects the parameters as graph leaves, exposes the embed and
//! score operations, and harvests parameter gradients back after a backward
//! pass. A classifier in eval mode is read-only and safe to share across
//! threads; training mutates it under a single-writer contract.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::lexicon::{EmbeddingMatrix, TokenId, PAD};
use crate::simplex;
use crate::training::VirtualSentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Bow,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassifierConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Convolution width; ignored by BOW. Must be odd (same-padding).
    pub kernel: usize,
    pub classes: usize,
    pub dropout_embed: f64,
    pub max_len: usize,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Param("hidden must be > 0".into()));
        }
        if self.classes < 2 {
            return Err(Error::Param("classes must be >= 2".into()));
        }
        if self.embed_dim == 0 || self.max_len == 0 {
            return Err(Error::Param("embed_dim and max_len must be > 0".into()));
        }
        if self.arch == Arch::Cnn && self.kernel % 2 == 0 {
            return Err(Error::Param("kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_embed) {
            return Err(Error::Param("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    fn new(name: &str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.dims().to_vec());
        Param {
            name: name.to_string(),
            value,
            grad,
        }
    }
}

/// Named parameter registry; each parameter appears exactly once.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    fn push(&mut self, name: &str, value: Tensor) {
        debug_assert!(self.index_of(name).is_none(), "duplicate param {}", name);
        self.params.push(Param::new(name, value));
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> &Param {
        &self.params[self.index_of(name).expect("unknown param")]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        let i = self.index_of(name).expect("unknown param");
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Bit-exact snapshot of all values, for freeze checks.
    pub fn value_bits(&self) -> Vec<u64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
            .collect()
    }
}

pub const P_EMBEDDING: &str = "embedding";
pub const P_DENSE1_W: &str = "dense1.weight";
pub const P_DENSE1_B: &str = "dense1.bias";
pub const P_CONV_W: &str = "conv.weight";
pub const P_CONV_B: &str = "conv.bias";
pub const P_OUT_W: &str = "out.weight";
pub const P_OUT_B: &str = "out.bias";

#[derive(Debug, Clone)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub params: ParamStore,
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, dims: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(dims, data).expect("consistent dims")
}

impl Classifier {
    /// A fresh model; the embedding rows are copied from `emb` and trained
    /// with everything else.
    pub fn new(config: ClassifierConfig, emb: &EmbeddingMatrix, seed: u64) -> Result<Self> {
        config.validate()?;
        if emb.dim() != config.embed_dim {
            return Err(Error::Shape(format!(
                "embedding dim {} != config embed_dim {}",
                emb.dim(),
                config.embed_dim
            )));
        }
        let mut rng = crate::seeding::rng(crate::seeding::derive(seed, "init"));
        let mut params = ParamStore::default();
        params.push(
            P_EMBEDDING,
            Tensor::new(vec![emb.vocab_len(), emb.dim()], emb.rows().to_vec())?,
        );
        let (d, h, c, k) = (config.embed_dim, config.hidden, config.classes, config.kernel);
        match config.arch {
            Arch::Bow => {
                params.push(P_DENSE1_W, glorot(&mut rng, vec![d, h], d, h));
                params.push(P_DENSE1_B, Tensor::zeros(vec![h]));
            }
            Arch::Cnn => {
                params.push(P_CONV_W, glorot(&mut rng, vec![k, d, h], k * d, h));
                params.push(P_CONV_B, Tensor::zeros(vec![h]));
            }
        }
        params.push(P_OUT_W, glorot(&mut rng, vec![h, c], h, c));
        params.push(P_OUT_B, Tensor::zeros(vec![c]));
        Ok(Classifier { config, params })
    }

    pub fn from_parts(config: ClassifierConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        Ok(Classifier { config, params })
    }

    pub fn vocab_len(&self) -> usize {
        self.params.get(P_EMBEDDING).value.dims()[0]
    }

    pub fn embedding_row(&self, id: TokenId) -> &[f64] {
        self.params.get(P_EMBEDDING).value.row(id.index())
    }

    /// Binds the parameters into `graph` for one forward/backward pass.
    pub fn session<'g>(&self, graph: &'g Graph) -> Session<'g> {
        let handles = self
            .params
            .iter()
            .map(|p| graph.leaf(p.value.clone()))
            .collect();
        Session {
            graph,
            config: self.config,
            names: self.params.iter().map(|p| p.name.clone()).collect(),
            handles,
        }
    }

    /// Eval-mode class probabilities for a discrete sentence.
    pub fn forward_probs(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        let graph = Graph::new();
        let sess = self.session(&graph);
        let emb = sess.embed_discrete(ids, None)?;
        let scores = sess.score(&emb)?;
        let probs = graph.softmax(scores)?;
        Ok(graph.value(probs).data().to_vec())
    }

    /// Eval-mode class probabilities for a virtual sentence.
    pub fn forward_probs_virtual(&self, vs: &VirtualSentence) -> Result<Vec<f64>> {
        let graph = Graph::new();
        let sess = self.session(&graph);
        let (emb, _) = sess.embed_virtual(vs, true, None)?;
        let scores = sess.score(&emb)?;
        let probs = graph.softmax(scores)?;
        Ok(graph.value(probs).data().to_vec())
    }
}

/// An embedded sequence plus its pooling mask (false at PAD positions).
pub struct Embedded {
    pub node: NodeId,
    pub mask: Vec<bool>,
}

/// One model bound to one graph.
pub struct Session<'g> {
    graph: &'g Graph,
    pub config: ClassifierConfig,
    names: Vec<String>,
    handles: Vec<NodeId>,
}

impl<'g> Session<'g> {
    pub fn param_node(&self, name: &str) -> NodeId {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .expect("unknown param");
        self.handles[i]
    }

    fn embedding_node(&self) -> NodeId {
        self.param_node(P_EMBEDDING)
    }

    /// Adds this session's parameter gradients into the model's store.
    pub fn accumulate_grads(&self, model: &mut Classifier) {
        for (name, node) in self.names.iter().zip(&self.handles) {
            if let Some(g) = self.graph.grad(*node) {
                let p = model.params.get_mut(name);
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    /// Embeds a discrete token sequence by row gather. `dropout` is an
    /// optional precomputed (L,d) mask; passing one means training mode.
    pub fn embed_discrete(&self, ids: &[TokenId], dropout: Option<&Tensor>) -> Result<Embedded> {
        if ids.is_empty() {
            return Err(Error::Shape("empty token sequence".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        let raw: Vec<u32> = ids.iter().map(|t| t.0).collect();
        let mut node = self.graph.gather(self.embedding_node(), &raw, PAD.0)?;
        if let Some(mask) = dropout {
            let m = self.graph.leaf(mask.clone());
            node = self.graph.mul(node, m)?;
        }
        Ok(Embedded {
            node,
            mask: ids.iter().map(|t| *t != PAD).collect(),
        })
    }

    /// Embeds a virtual sentence: each position becomes the weighted mix of
    /// its neighborhood rows. With `coordinated` gradients reach every mixed
    /// row and the per-position eta leaves (returned for search); without it
    /// each position is re-expressed as the center embedding plus a constant
    /// offset, so only center rows receive gradient.
    pub fn embed_virtual(
        &self,
        vs: &VirtualSentence,
        coordinated: bool,
        dropout: Option<&Tensor>,
    ) -> Result<(Embedded, Vec<NodeId>)> {
        vs.check()?;
        if vs.ids.is_empty() {
            return Err(Error::Shape("empty virtual sentence".into()));
        }
        if vs.ids.len() > self.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds max_len {}",
                vs.ids.len(),
                self.config.max_len
            )));
        }
        let g = self.graph;
        let emb_node = self.embedding_node();
        let mut eta_nodes = Vec::new();
        let mut node = if coordinated {
            let mut parts = Vec::with_capacity(vs.ids.len());
            for (nbh, point) in vs.nbhs.iter().zip(&vs.points) {
                let ids: Vec<u32> = nbh.vertex_ids().iter().map(|t| t.0).collect();
                let eta = g.leaf(Tensor::vector(point.eta().to_vec()));
                eta_nodes.push(eta);
                parts.push(g.mix(emb_node, eta, &ids, PAD.0)?);
            }
            g.stack(&parts)?
        } else {
            let centers: Vec<u32> = vs.ids.iter().map(|t| t.0).collect();
            let seq = g.gather(emb_node, &centers, PAD.0)?;
            // Constant offset from the center vertex to the mixed point.
            let d = self.config.embed_dim;
            let emb_value = g.value(emb_node);
            let mut offsets = Vec::with_capacity(vs.ids.len() * d);
            for ((id, nbh), point) in vs.ids.iter().zip(&vs.nbhs).zip(&vs.points) {
                let mixed = mix_value(&emb_value, nbh, point);
                let center = emb_value.row(id.index());
                offsets.extend(mixed.iter().zip(center).map(|(m, c)| m - c));
            }
            let off = g.leaf(Tensor::new(vec![vs.ids.len(), d], offsets)?);
            g.add(seq, off)?
        };
        if let Some(mask) = dropout {
            let m = g.leaf(mask.clone());
            node = g.mul(node, m)?;
        }
        Ok((
            Embedded {
                node,
                mask: vs.ids.iter().map(|t| *t != PAD).collect(),
            },
            eta_nodes,
        ))
    }

    /// Class scores for an embedded sequence.
    ///
    /// BOW: masked mean over positions, one hidden relu layer, affine out.
    /// CNN: same-padded width-k convolution, relu, masked max-pool, affine out.
    pub fn score(&self, embedded: &Embedded) -> Result<NodeId> {
        let g = self.graph;
        match self.config.arch {
            Arch::Bow => {
                let pooled = g.mean_seq(embedded.node, &embedded.mask)?;
                let h = g.matmul(pooled, self.param_node(P_DENSE1_W))?;
                let h = g.add(h, self.param_node(P_DENSE1_B))?;
                let h = g.relu(h);
                let o = g.matmul(h, self.param_node(P_OUT_W))?;
                g.add(o, self.param_node(P_OUT_B))
            }
            Arch::Cnn => {
                let conv = g.conv1d(
                    embedded.node,
                    self.param_node(P_CONV_W),
                    self.param_node(P_CONV_B),
                )?;
                let conv = g.relu(conv);
                let pooled = g.max_pool_seq(conv, &embedded.mask)?;
                let o = g.matmul(pooled, self.param_node(P_OUT_W))?;
                g.add(o, self.param_node(P_OUT_B))
            }
        }
    }
}

/// The numeric value of a position's convex mix (no graph involved).
fn mix_value(
    emb: &Tensor,
    nbh: &crate::lexicon::Neighborhood,
    point: &simplex::SimplexPoint,
) -> Vec<f64> {
    let d = emb.dims()[1];
    let mut out = vec![0.0; d];
    for (b, id) in point.beta().iter().zip(nbh.vertex_ids()) {
        for (o, x) in out.iter_mut().zip(emb.row(id.index())) {
            *o += b * x;
        }
    }
    out
}

/// Index of the maximum entry; ties break toward the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else 1/(1-p).
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, p: f64) -> Tensor {
    let scale = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("consistent dims")
}
