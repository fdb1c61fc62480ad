//! Training loops: ORIG (plain cross-entropy), RAN (random discrete synonym
//! substitution), and DNE (virtual hull augmentation plus simplex-constrained
//! adversarial search).
//!
//! The search maximizes prediction error by normalized gradient descent on
//! log p(x~, y) in the eta coordinates, so every iterate stays inside its
//! hull. All iterates plus the initial Dirichlet draw enter the loss.
//!
//! Randomness is derived per (seed, component, epoch, example), so results do
//! not depend on batch size boundaries or worker count.

use std::time::Instant;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::lexicon::{neighborhood, Neighborhood, SynonymGraph, TokenId, PAD};
use crate::models::{argmax, dropout_mask, Classifier};
use crate::seeding;
use crate::simplex::{build_alpha, sample_dirichlet, DirichletParams, SimplexPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Orig,
    Ran,
    Dne,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::Orig => write!(f, "ORIG"),
            TrainMode::Ran => write!(f, "RAN"),
            TrainMode::Dne => write!(f, "DNE"),
        }
    }
}

/// How the eta update uses the gradient of log p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Step of length epsilon along -g/||g||2.
    Normalized,
    /// Step -epsilon * g.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub alpha: f64,
    pub lambda: f64,
    pub adv_steps: usize,
    pub adv_epsilon: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub grad_clip: (f64, f64),
    pub epochs: usize,
    pub seed: u64,
    pub expand_hull: bool,
    pub coordinated_update: bool,
    pub update_rule: UpdateRule,
    /// Normalize the search gradient per position instead of globally.
    pub per_position_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Dne,
            alpha: 0.1,
            lambda: 0.1,
            adv_steps: 3,
            adv_epsilon: 10.0,
            lr: 5e-4,
            weight_decay: 1e-4,
            batch: 32,
            grad_clip: (-1.0, 1.0),
            epochs: 20,
            seed: 0,
            expand_hull: true,
            coordinated_update: true,
            update_rule: UpdateRule::Normalized,
            per_position_norm: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adv_steps > 0 && self.adv_epsilon <= 0.0 {
            return Err(Error::Param(
                "adv_epsilon must be > 0 when adv_steps > 0".into(),
            ));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Param("batch and epochs must be >= 1".into()));
        }
        if self.grad_clip.0 >= self.grad_clip.1 {
            return Err(Error::Param("grad_clip must be an interval".into()));
        }
        DirichletParams::new(self.alpha, self.lambda)?;
        Ok(())
    }

    pub fn dirichlet(&self) -> DirichletParams {
        DirichletParams {
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }
}

/// A sentence whose per-position embeddings are points in neighborhood hulls.
#[derive(Debug, Clone)]
pub struct VirtualSentence {
    pub ids: Vec<TokenId>,
    pub nbhs: Vec<Neighborhood>,
    pub points: Vec<SimplexPoint>,
}

impl VirtualSentence {
    pub fn check(&self) -> Result<()> {
        if self.ids.len() != self.nbhs.len() || self.ids.len() != self.points.len() {
            return Err(Error::Shape(format!(
                "virtual sentence lengths differ: {} ids, {} neighborhoods, {} points",
                self.ids.len(),
                self.nbhs.len(),
                self.points.len()
            )));
        }
        for (nbh, point) in self.nbhs.iter().zip(&self.points) {
            if nbh.len() != point.len() {
                return Err(Error::Shape(format!(
                    "point of {} weights on a neighborhood of {}",
                    point.len(),
                    nbh.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Draws one virtual sentence: a Dirichlet point per non-PAD position
/// (over the expanded hull when `expand` is set); PAD positions keep the
/// trivial point on {PAD}.
pub fn make_virtual<R: rand::Rng + ?Sized>(
    ids: &[TokenId],
    graph: &SynonymGraph,
    params: DirichletParams,
    expand: bool,
    rng: &mut R,
) -> VirtualSentence {
    let mut nbhs = Vec::with_capacity(ids.len());
    let mut points = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == PAD {
            nbhs.push(Neighborhood {
                center: PAD,
                one_hop: vec![PAD],
                two_hop_only: vec![],
            });
            points.push(SimplexPoint::trivial());
            continue;
        }
        let nbh = neighborhood(graph, id, expand);
        let conc = build_alpha(&nbh, params).expect("validated params");
        points.push(sample_dirichlet(&conc, rng));
        nbhs.push(nbh);
    }
    VirtualSentence {
        ids: ids.to_vec(),
        nbhs,
        points,
    }
}

/// -log softmax(scores)[label] as a graph node.
pub fn cross_entropy_node(g: &Graph, scores: NodeId, label: usize) -> Result<NodeId> {
    let probs = g.softmax(scores)?;
    let p = g.select(probs, label)?;
    Ok(g.scale(g.log(p), -1.0))
}

/// Cross-entropy of the classifier on one virtual sentence (eval mode).
pub fn virtual_loss(model: &Classifier, vs: &VirtualSentence, label: usize) -> Result<f64> {
    if label >= model.config.classes {
        return Err(Error::Param(format!(
            "label {} out of {} classes",
            label, model.config.classes
        )));
    }
    let g = Graph::new();
    let sess = model.session(&g);
    let (emb, _) = sess.embed_virtual(vs, true, None)?;
    let scores = sess.score(&emb)?;
    let loss = cross_entropy_node(&g, scores, label)?;
    Ok(g.value(loss).item())
}

/// Hull-constrained search for hard virtual points. Per step: the gradient
/// of log p(x~, label) w.r.t. every position's eta is taken jointly, eta
/// moves a distance `epsilon` against it, and beta is re-derived, so every
/// iterate remains on its simplex. Returns the iterate after each step;
/// parameters and embeddings are never modified.
///
/// A vanishing gradient (norm below 1e-12) stops the search early; if that
/// happens before the first step, the unmodified starting point is returned.
pub fn adversarial_search(
    model: &Classifier,
    vs: &VirtualSentence,
    label: usize,
    steps: usize,
    epsilon: f64,
    rule: UpdateRule,
    per_position_norm: bool,
) -> Result<Vec<VirtualSentence>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    vs.check()?;
    let mut current = vs.clone();
    let mut iterates: Vec<VirtualSentence> = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g = Graph::new();
        let sess = model.session(&g);
        let (emb, eta_nodes) = sess.embed_virtual(&current, true, None)?;
        let scores = sess.score(&emb)?;
        let probs = g.softmax(scores)?;
        let p = g.select(probs, label)?;
        let logp = g.log(p);
        g.backward(logp)?;

        let grads: Vec<Vec<f64>> = eta_nodes
            .iter()
            .map(|n| {
                g.grad(*n)
                    .map(|t| t.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; g.dims(*n)[0]])
            })
            .collect();
        let global_norm: f64 = grads
            .iter()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if global_norm < 1e-12 {
            break;
        }
        let mut points = Vec::with_capacity(current.points.len());
        for (point, grad) in current.points.iter().zip(&grads) {
            let denom = match (rule, per_position_norm) {
                (UpdateRule::Raw, _) => 1.0,
                (UpdateRule::Normalized, false) => global_norm,
                (UpdateRule::Normalized, true) => {
                    let n: f64 = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n < 1e-12 {
                        // position is flat; leave it unchanged
                        points.push(point.clone());
                        continue;
                    }
                    n
                }
            };
            let eta: Vec<f64> = point
                .eta()
                .iter()
                .zip(grad)
                .map(|(e, g)| e - epsilon * g / denom)
                .collect();
            points.push(SimplexPoint::from_eta(eta)?);
        }
        current = VirtualSentence {
            ids: current.ids.clone(),
            nbhs: current.nbhs.clone(),
            points,
        };
        iterates.push(current.clone());
    }
    if iterates.is_empty() {
        iterates.push(vs.clone());
    }
    Ok(iterates)
}

/// Adam with bias correction. Weight decay applies to dense weight matrices
/// only; embeddings and biases are exempt, so an embedding row moves only
/// when it actually receives gradient.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(model: &Classifier, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = model
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.dims().to_vec()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients accumulated in the model; clears them.
    pub fn step(&mut self, model: &mut Classifier, clip: (f64, f64)) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in model.params.iter_mut().enumerate() {
            let decayed = self.weight_decay != 0.0
                && p.name.ends_with(".weight")
                && p.name != crate::models::P_EMBEDDING;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (val, grad)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data_mut())
                .enumerate()
            {
                let mut g = grad.clamp(clip.0, clip.1);
                if decayed {
                    g += self.weight_decay * *val;
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *val -= self.lr * mhat / (vhat.sqrt() + self.eps);
                *grad = 0.0;
            }
        }
    }
}

/// Per-epoch training metrics, one JSON line each in the metrics file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mode: String,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub wall_ms: u64,
}

/// Accuracy of the base classifier on a dataset (eval mode).
pub fn base_accuracy(model: &Classifier, data: &Dataset) -> Result<f64> {
    if data.examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (ids, label) in &data.examples {
        let probs = model.forward_probs(ids)?;
        if argmax(&probs) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.examples.len() as f64)
}

/// Trains in place, returning per-epoch metrics. The caller decides what to
/// do with checkpoints (the harness keeps the best-validation one).
pub fn train(
    model: &mut Classifier,
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    synonyms: &SynonymGraph,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &Classifier),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_data.examples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut opt = Adam::new(model, cfg.lr, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_data.examples.len()).collect();
        shuffle(&mut order, seeding::derive_idx(cfg.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let (batch_loss, batch_correct) =
                train_batch(model, &mut opt, train_data, synonyms, cfg, epoch, chunk)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {}",
                    epoch
                )));
            }
            loss_sum += batch_loss * chunk.len() as f64;
            correct += batch_correct;
        }
        let val_acc = match val_data {
            Some(v) => base_accuracy(model, v)?,
            None => f64::NAN,
        };
        let metrics = EpochMetrics {
            epoch,
            mode: cfg.mode.to_string(),
            train_loss: loss_sum / train_data.examples.len() as f64,
            train_acc: correct as f64 / train_data.examples.len() as f64,
            val_acc,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_epoch(&metrics, model);
        history.push(metrics);
    }
    Ok(history)
}

/// Fisher-Yates with a derived stream, independent of worker layout.
fn shuffle(order: &mut [usize], seed: u64) {
    use rand::Rng;
    let mut rng = seeding::rng(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

fn train_batch(
    model: &mut Classifier,
    opt: &mut Adam,
    data: &Dataset,
    synonyms: &SynonymGraph,
    cfg: &TrainConfig,
    epoch: usize,
    batch: &[usize],
) -> Result<(f64, usize)> {
    // Search phase reads the model; the mutable phase starts at backward.
    let mut prepared: Vec<(Vec<VirtualSentence>, usize, u64)> = Vec::new();
    let mut discrete: Vec<(Vec<TokenId>, usize, u64)> = Vec::new();
    for &i in batch {
        let (ids, label) = &data.examples[i];
        let dropout_seed = seeding::derive_idx2(cfg.seed, "dropout", epoch as u64, i as u64);
        match cfg.mode {
            TrainMode::Orig => discrete.push((ids.clone(), *label, dropout_seed)),
            TrainMode::Ran => {
                let mut rng =
                    seeding::rng(seeding::derive_idx2(cfg.seed, "ran", epoch as u64, i as u64));
                discrete.push((substitute_random(ids, synonyms, &mut rng), *label, dropout_seed));
            }
            TrainMode::Dne => {
                let mut rng = seeding::rng(seeding::derive_idx2(
                    cfg.seed,
                    "virtual",
                    epoch as u64,
                    i as u64,
                ));
                let vs = make_virtual(ids, synonyms, cfg.dirichlet(), cfg.expand_hull, &mut rng);
                let mut points = vec![vs.clone()];
                if cfg.adv_steps > 0 {
                    points.extend(adversarial_search(
                        model,
                        &vs,
                        *label,
                        cfg.adv_steps,
                        cfg.adv_epsilon,
                        cfg.update_rule,
                        cfg.per_position_norm,
                    )?);
                }
                prepared.push((points, *label, dropout_seed));
            }
        }
    }

    let g = Graph::new();
    let sess = model.session(&g);
    let mut example_losses = Vec::with_capacity(batch.len());
    let mut correct = 0usize;
    let p = model.config.dropout_embed;
    for (ids, label, dropout_seed) in &discrete {
        let mask = mask_for(p, ids.len(), model.config.embed_dim, *dropout_seed);
        let emb = sess.embed_discrete(ids, mask.as_ref())?;
        let scores = sess.score(&emb)?;
        if argmax(g.value(scores).data()) == *label {
            correct += 1;
        }
        example_losses.push(cross_entropy_node(&g, scores, *label)?);
    }
    for (points, label, dropout_seed) in &prepared {
        // One dropout mask per example slot, shared by all its virtual copies.
        let mask = mask_for(
            p,
            points[0].ids.len(),
            model.config.embed_dim,
            *dropout_seed,
        );
        let mut copy_losses = Vec::with_capacity(points.len());
        for (k, vs) in points.iter().enumerate() {
            let (emb, _) = sess.embed_virtual(vs, cfg.coordinated_update, mask.as_ref())?;
            let scores = sess.score(&emb)?;
            if k == 0 && argmax(g.value(scores).data()) == *label {
                correct += 1;
            }
            copy_losses.push(cross_entropy_node(&g, scores, *label)?);
        }
        example_losses.push(g.mean_many(&copy_losses)?);
    }
    let batch_loss = g.mean_many(&example_losses)?;
    let loss_value = g.value(batch_loss).item();
    g.backward(batch_loss)?;
    sess.accumulate_grads(model);
    opt.step(model, cfg.grad_clip);
    Ok((loss_value, correct))
}

fn mask_for(p: f64, len: usize, dim: usize, seed: u64) -> Option<Tensor> {
    if p <= 0.0 {
        return None;
    }
    let mut rng = seeding::rng(seed);
    Some(dropout_mask(&mut rng, len, dim, p))
}

/// Replaces every word that has synonyms by a uniform draw from its 1-hop
/// substitution set (which includes the word itself).
pub fn substitute_random<R: rand::Rng + ?Sized>(
    ids: &[TokenId],
    synonyms: &SynonymGraph,
    rng: &mut R,
) -> Vec<TokenId> {
    ids.iter()
        .map(|&id| {
            if id == PAD {
                return id;
            }
            let s = synonyms.synonyms_with_self(id);
            s[rng.random_range(0..s.len())]
        })
        .collect()
}

#[cfg(test)]
mod tests;
