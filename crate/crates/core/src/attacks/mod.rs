//! Word-substitution attacks and the robustness report.
//!
//! Both attacks operate over 1-hop substitution sets S(x_i) and query the
//! deployed predictor (smoothed for DNE/RAN, base for ORIG) through a uniform
//! interface that counts every call. One attack instance is sequential;
//! distinct examples attack in parallel.

mod genetic;
mod pwws;

pub use genetic::genetic_attack;
pub use pwws::pwws_attack;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lexicon::{SynonymGraph, TokenId};
use crate::models::{argmax, Classifier};
use crate::simplex::DirichletParams;
use crate::smoothing::{smooth_predict, EnsembleConfig};

/// A classifier the attacker can query for class probabilities.
pub trait Predict: Sync {
    fn probs(&self, ids: &[TokenId]) -> Result<Vec<f64>>;
}

/// The base classifier f.
pub struct BasePredictor<'a> {
    pub model: &'a Classifier,
}

impl Predict for BasePredictor<'_> {
    fn probs(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        self.model.forward_probs(ids)
    }
}

/// The smoothed classifier g. Ensemble noise is keyed on the queried content,
/// so repeated queries of one sentence are identical.
pub struct SmoothedPredictor<'a> {
    pub model: &'a Classifier,
    pub synonyms: &'a SynonymGraph,
    pub ensemble: EnsembleConfig,
    pub params: DirichletParams,
}

impl Predict for SmoothedPredictor<'_> {
    fn probs(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        Ok(smooth_predict(self.model, ids, self.synonyms, &self.ensemble, self.params)?.avg_probs)
    }
}

/// Wraps a predictor, counting every query.
pub(crate) struct Counting<'a> {
    inner: &'a dyn Predict,
    count: AtomicU64,
}

impl<'a> Counting<'a> {
    pub fn new(inner: &'a dyn Predict) -> Self {
        Counting {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn probs(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.probs(ids)
    }

    pub fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AttackBudget {
    /// Fraction of positions the attacker may modify.
    pub max_substitution_ratio: f64,
    pub ga_population: usize,
    pub ga_generations: usize,
    pub seed: u64,
}

impl Default for AttackBudget {
    fn default() -> Self {
        AttackBudget {
            max_substitution_ratio: 0.25,
            ga_population: 20,
            ga_generations: 20,
            seed: 0,
        }
    }
}

impl AttackBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_substitution_ratio > 0.0 && self.max_substitution_ratio <= 1.0) {
            return Err(Error::Param(format!(
                "max_substitution_ratio must be in (0, 1], got {}",
                self.max_substitution_ratio
            )));
        }
        if self.ga_population < 1 || self.ga_generations < 1 {
            return Err(Error::Param(
                "ga_population and ga_generations must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Whole number of modifiable positions for a sentence of `len` tokens.
    pub fn max_substitutions(&self, len: usize) -> usize {
        (self.max_substitution_ratio * len as f64).floor() as usize
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttackResult {
    pub original_ids: Vec<u32>,
    pub adversarial_ids: Vec<u32>,
    /// position -> (old id, new id)
    pub substitutions: BTreeMap<usize, (u32, u32)>,
    pub success: bool,
    /// The example was already misclassified, so no search ran.
    pub skipped: bool,
    pub queries: u64,
    pub probs_before: Vec<f64>,
    pub probs_after: Vec<f64>,
}

impl AttackResult {
    pub(crate) fn from_parts(
        original: &[TokenId],
        adversarial: Vec<TokenId>,
        success: bool,
        skipped: bool,
        queries: u64,
        probs_before: Vec<f64>,
        probs_after: Vec<f64>,
    ) -> Self {
        let substitutions = original
            .iter()
            .zip(&adversarial)
            .enumerate()
            .filter(|(_, (o, a))| *o != *a)
            .map(|(i, (o, a))| (i, (o.0, a.0)))
            .collect();
        AttackResult {
            original_ids: original.iter().map(|t| t.0).collect(),
            adversarial_ids: adversarial.iter().map(|t| t.0).collect(),
            substitutions,
            success,
            skipped,
            queries,
            probs_before,
            probs_after,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Pwws,
    Ga,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackKind::Pwws => write!(f, "pwws"),
            AttackKind::Ga => write!(f, "ga"),
        }
    }
}

pub fn run_attack(
    kind: AttackKind,
    predict: &dyn Predict,
    ids: &[TokenId],
    gold: usize,
    synonyms: &SynonymGraph,
    budget: &AttackBudget,
) -> Result<AttackResult> {
    match kind {
        AttackKind::Pwws => pwws_attack(predict, ids, gold, synonyms, budget),
        AttackKind::Ga => genetic_attack(predict, ids, gold, synonyms, budget),
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExampleReport {
    pub index: usize,
    pub label: usize,
    pub clean_correct: bool,
    pub success: bool,
    pub skipped: bool,
    pub substitutions: usize,
    pub queries: u64,
    pub predicted_before: usize,
    pub predicted_after: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RobustnessReport {
    pub attack: AttackKind,
    pub examples: usize,
    pub clean_acc: f64,
    /// Fraction still correctly classified after the attack's best attempt;
    /// examples misclassified before the attack count as failures.
    pub robust_acc: f64,
    pub avg_substitutions: f64,
    pub avg_queries: f64,
    pub per_example: Vec<ExampleReport>,
}

/// Attacks every example in the slice and aggregates accuracy-under-attack.
pub fn evaluate_robustness(
    predict: &dyn Predict,
    examples: &[(Vec<TokenId>, usize)],
    kind: AttackKind,
    synonyms: &SynonymGraph,
    budget: &AttackBudget,
) -> Result<RobustnessReport> {
    budget.validate()?;
    let per_example: Result<Vec<ExampleReport>> = examples
        .par_iter()
        .enumerate()
        .map(|(index, (ids, label))| {
            let res = run_attack(kind, predict, ids, *label, synonyms, budget)?;
            let clean_correct = argmax(&res.probs_before) == *label;
            Ok(ExampleReport {
                index,
                label: *label,
                clean_correct,
                success: res.success,
                skipped: res.skipped,
                substitutions: res.substitutions.len(),
                queries: res.queries,
                predicted_before: argmax(&res.probs_before),
                predicted_after: argmax(&res.probs_after),
            })
        })
        .collect();
    let per_example = per_example?;
    let n = per_example.len().max(1) as f64;
    let clean_acc = per_example.iter().filter(|e| e.clean_correct).count() as f64 / n;
    let robust_acc = per_example
        .iter()
        .filter(|e| e.clean_correct && !e.success)
        .count() as f64
        / n;
    let attacked: Vec<&ExampleReport> = per_example.iter().filter(|e| !e.skipped).collect();
    let avg_substitutions = if attacked.is_empty() {
        0.0
    } else {
        attacked.iter().map(|e| e.substitutions as f64).sum::<f64>() / attacked.len() as f64
    };
    let avg_queries = per_example.iter().map(|e| e.queries as f64).sum::<f64>() / n;
    Ok(RobustnessReport {
        attack: kind,
        examples: per_example.len(),
        clean_acc,
        robust_acc,
        avg_substitutions,
        avg_queries,
        per_example,
    })
}
