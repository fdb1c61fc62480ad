//! Monte-Carlo evaluation of the smoothed classifier.
//!
//! The smoothed predictor draws k virtual copies of the input over 1-hop
//! hulls only (never the expanded training hull), scores each with the base
//! classifier, and returns the confidence-weighted average of the softmax
//! vectors. Weights follow CBW-D: powered margins between the top
//! probability and every other class.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lexicon::{SynonymGraph, TokenId};
use crate::models::{argmax, Classifier};
use crate::seeding;
use crate::simplex::DirichletParams;
use crate::training::make_virtual;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Monte-Carlo sample count.
    pub k: usize,
    /// CBW-D margin exponent.
    pub r: u32,
    pub seed: u64,
    /// Dirichlet alpha used at test time; None reuses the training alpha
    /// passed to `smooth_predict`.
    pub test_alpha: Option<f64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k: 16,
            r: 3,
            seed: 0,
            test_alpha: None,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Param("ensemble k must be >= 1".into()));
        }
        if self.r < 1 {
            return Err(Error::Param("ensemble r must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub label: usize,
    pub avg_probs: Vec<f64>,
    /// The k (probs, weight) pairs, in draw order.
    pub per_sample: Vec<(Vec<f64>, f64)>,
}

/// CBW-D confidence weight: sum over non-top classes of
/// (p_top - p_c)^r, where top is the argmax class.
pub fn cbwd_weight(probs: &[f64], r: u32) -> f64 {
    let y = argmax(probs);
    probs
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != y)
        .map(|(_, p)| (probs[y] - p).powi(r as i32))
        .sum()
}

/// Smoothed prediction for one sentence with an explicit sampling seed.
///
/// Draws k virtual sentences over 1-hop hulls, weights each softmax vector
/// by `cbwd_weight`, and averages. If every weight is zero (all samples
/// exactly uniform) the mean is unweighted. Ties in the final argmax break
/// toward the lowest class id.
pub fn smooth_predict_seeded(
    model: &Classifier,
    ids: &[TokenId],
    synonyms: &SynonymGraph,
    cfg: &EnsembleConfig,
    params: DirichletParams,
    seed: u64,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    let params = DirichletParams {
        alpha: cfg.test_alpha.unwrap_or(params.alpha),
        lambda: params.lambda,
    };
    let classes = model.config.classes;
    let mut per_sample = Vec::with_capacity(cfg.k);
    for s in 0..cfg.k {
        let mut rng = seeding::rng(seeding::derive_idx(seed, "smooth", s as u64));
        let vs = make_virtual(ids, synonyms, params, false, &mut rng);
        let probs = model.forward_probs_virtual(&vs)?;
        let w = cbwd_weight(&probs, cfg.r);
        per_sample.push((probs, w));
    }
    let total: f64 = per_sample.iter().map(|(_, w)| w).sum();
    let mut avg = vec![0.0; classes];
    if total > 0.0 {
        for (probs, w) in &per_sample {
            for (a, p) in avg.iter_mut().zip(probs) {
                *a += w * p / total;
            }
        }
    } else {
        // All-zero weights (every sample exactly uniform): unweighted mean.
        for (probs, _) in &per_sample {
            for (a, p) in avg.iter_mut().zip(probs) {
                *a += p / cfg.k as f64;
            }
        }
    }
    Ok(EnsembleResult {
        label: argmax(&avg),
        avg_probs: avg,
        per_sample,
    })
}

/// Smoothed prediction with the seed derived from the queried content, so
/// identical sentences always see identical ensemble noise regardless of
/// query order (attacks rely on this for determinism).
pub fn smooth_predict(
    model: &Classifier,
    ids: &[TokenId],
    synonyms: &SynonymGraph,
    cfg: &EnsembleConfig,
    params: DirichletParams,
) -> Result<EnsembleResult> {
    let raw: Vec<u32> = ids.iter().map(|t| t.0).collect();
    let seed = seeding::derive_idx(cfg.seed, "query", seeding::content_key(&raw));
    smooth_predict_seeded(model, ids, synonyms, cfg, params, seed)
}

/// Dataset-level smoothed accuracy; per-example seeds come from the example
/// index so evaluation order does not matter. Examples evaluate in parallel
/// and reduce by index.
pub fn smoothed_accuracy(
    model: &Classifier,
    examples: &[(Vec<TokenId>, usize)],
    synonyms: &SynonymGraph,
    cfg: &EnsembleConfig,
    params: DirichletParams,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let hits: Result<Vec<bool>> = examples
        .par_iter()
        .enumerate()
        .map(|(i, (ids, label))| {
            let seed = seeding::derive_idx(cfg.seed, "example", i as u64);
            let res = smooth_predict_seeded(model, ids, synonyms, cfg, params, seed)?;
            Ok(res.label == *label)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / examples.len() as f64)
}
