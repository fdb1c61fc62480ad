//! Population-based substitution attack.
//!
//! Fitness is 1 - p_gold. Each generation keeps the best individual,
//! breeds the rest by per-position uniform crossover with parents sampled
//! proportional to fitness, and mutates children by re-substituting one
//! random position. The search stops on a label flip or at the generation
//! limit. Language-model candidate filtering is out of scope.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::{AttackBudget, AttackResult, Counting, Predict};
use crate::error::Result;
use crate::lexicon::{SynonymGraph, TokenId, PAD, UNK};
use crate::models::argmax;
use crate::seeding;

const MUTATION_RATE: f64 = 0.3;

struct Instance<'a> {
    original: &'a [TokenId],
    /// Positions that have at least one non-self substitute.
    positions: Vec<usize>,
    synonyms: &'a SynonymGraph,
    max_subs: usize,
}

impl Instance<'_> {
    /// Uniform member of S(original word) at `pos`, including the original.
    fn random_vertex(&self, pos: usize, rng: &mut ChaCha12Rng) -> TokenId {
        let s = self.synonyms.synonyms_with_self(self.original[pos]);
        s[rng.random_range(0..s.len())]
    }

    /// Uniform non-self substitute at `pos`.
    fn random_substitute(&self, pos: usize, rng: &mut ChaCha12Rng) -> TokenId {
        let s: Vec<TokenId> = self
            .synonyms
            .synonyms(self.original[pos])
            .filter(|t| *t != self.original[pos])
            .collect();
        s[rng.random_range(0..s.len())]
    }

    /// Randomly reverts substitutions past the budget.
    fn enforce_budget(&self, member: &mut [TokenId], rng: &mut ChaCha12Rng) {
        let mut changed: Vec<usize> = (0..member.len())
            .filter(|&i| member[i] != self.original[i])
            .collect();
        while changed.len() > self.max_subs {
            let k = rng.random_range(0..changed.len());
            let pos = changed.swap_remove(k);
            member[pos] = self.original[pos];
        }
    }
}

pub fn genetic_attack(
    predict: &dyn Predict,
    ids: &[TokenId],
    gold: usize,
    synonyms: &SynonymGraph,
    budget: &AttackBudget,
) -> Result<AttackResult> {
    budget.validate()?;
    let counter = Counting::new(predict);
    let probs0 = counter.probs(ids)?;
    if argmax(&probs0) != gold {
        return Ok(AttackResult::from_parts(
            ids,
            ids.to_vec(),
            true,
            true,
            counter.queries(),
            probs0.clone(),
            probs0,
        ));
    }
    let positions: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| **id != PAD && **id != UNK && synonyms.has_synonyms(**id))
        .map(|(i, _)| i)
        .collect();
    let max_subs = budget.max_substitutions(ids.len());
    if positions.is_empty() || max_subs == 0 {
        return Ok(AttackResult::from_parts(
            ids,
            ids.to_vec(),
            false,
            false,
            counter.queries(),
            probs0.clone(),
            probs0,
        ));
    }
    let inst = Instance {
        original: ids,
        positions,
        synonyms,
        max_subs,
    };
    let raw: Vec<u32> = ids.iter().map(|t| t.0).collect();
    let mut rng = seeding::rng(seeding::derive_idx(
        budget.seed,
        "ga",
        seeding::content_key(&raw),
    ));

    // Initial population: one random substitution each.
    let mut population: Vec<Vec<TokenId>> = (0..budget.ga_population)
        .map(|_| {
            let mut member = ids.to_vec();
            let pos = inst.positions[rng.random_range(0..inst.positions.len())];
            member[pos] = inst.random_substitute(pos, &mut rng);
            member
        })
        .collect();
    let mut fitness: Vec<f64> = Vec::with_capacity(population.len());
    let mut best_probs: Vec<Vec<f64>> = Vec::with_capacity(population.len());
    for member in &population {
        let p = counter.probs(member)?;
        if argmax(&p) != gold {
            return Ok(AttackResult::from_parts(
                ids,
                member.clone(),
                true,
                false,
                counter.queries(),
                probs0,
                p,
            ));
        }
        fitness.push(1.0 - p[gold]);
        best_probs.push(p);
    }

    for _gen in 0..budget.ga_generations {
        let elite = best_index(&fitness);
        let mut next: Vec<Vec<TokenId>> = vec![population[elite].clone()];
        let mut next_fitness = vec![fitness[elite]];
        let mut next_probs = vec![best_probs[elite].clone()];
        while next.len() < budget.ga_population {
            let pa = sample_by_fitness(&fitness, &mut rng);
            let pb = sample_by_fitness(&fitness, &mut rng);
            let mut child: Vec<TokenId> = population[pa]
                .iter()
                .zip(&population[pb])
                .map(|(a, b)| if rng.random::<bool>() { *a } else { *b })
                .collect();
            if rng.random::<f64>() < MUTATION_RATE {
                let pos = inst.positions[rng.random_range(0..inst.positions.len())];
                child[pos] = inst.random_vertex(pos, &mut rng);
            }
            inst.enforce_budget(&mut child, &mut rng);
            let p = counter.probs(&child)?;
            if argmax(&p) != gold {
                return Ok(AttackResult::from_parts(
                    ids,
                    child,
                    true,
                    false,
                    counter.queries(),
                    probs0,
                    p,
                ));
            }
            next_fitness.push(1.0 - p[gold]);
            next_probs.push(p);
            next.push(child);
        }
        population = next;
        fitness = next_fitness;
        best_probs = next_probs;
    }

    let best = best_index(&fitness);
    Ok(AttackResult::from_parts(
        ids,
        population[best].clone(),
        false,
        false,
        counter.queries(),
        probs0,
        best_probs[best].clone(),
    ))
}

fn best_index(fitness: &[f64]) -> usize {
    let mut best = 0;
    for (i, f) in fitness.iter().enumerate().skip(1) {
        if *f > fitness[best] {
            best = i;
        }
    }
    best
}

/// Index sampled proportional to fitness; uniform when all fitness is zero.
fn sample_by_fitness(fitness: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total: f64 = fitness.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..fitness.len());
    }
    let mut target = rng.random::<f64>() * total;
    for (i, f) in fitness.iter().enumerate() {
        target -= f;
        if target <= 0.0 {
            return i;
        }
    }
    fitness.len() - 1
}
