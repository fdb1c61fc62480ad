//! Greedy saliency-weighted substitution attack.
//!
//! A reconstruction of the probability-weighted word saliency scheme at desk
//! scale: position order combines word saliency (probability drop when the
//! word is blanked to UNK) with the best per-position substitution gain, and
//! the best substitutes are applied greedily until the label flips or the
//! budget runs out.

use super::{AttackBudget, AttackResult, Counting, Predict};
use crate::autodiff::softmax_slice;
use crate::error::Result;
use crate::lexicon::{SynonymGraph, TokenId, PAD, UNK};
use crate::models::argmax;

pub fn pwws_attack(
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
    let p_gold = probs0[gold];
    let max_subs = budget.max_substitutions(ids.len());

    // Candidate positions: substitutable words only.
    struct Candidate {
        pos: usize,
        saliency: f64,
        best_sub: TokenId,
        best_gain: f64,
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for (pos, &id) in ids.iter().enumerate() {
        if id == PAD || id == UNK || !synonyms.has_synonyms(id) {
            continue;
        }
        let mut blanked = ids.to_vec();
        blanked[pos] = UNK;
        let saliency = p_gold - counter.probs(&blanked)?[gold];
        let mut best_sub = id;
        let mut best_gain = f64::NEG_INFINITY;
        for sub in synonyms.synonyms(id) {
            if sub == id {
                continue;
            }
            let mut cand = ids.to_vec();
            cand[pos] = sub;
            let gain = p_gold - counter.probs(&cand)?[gold];
            if gain > best_gain {
                best_gain = gain;
                best_sub = sub;
            }
        }
        candidates.push(Candidate {
            pos,
            saliency,
            best_sub,
            best_gain,
        });
    }
    if candidates.is_empty() || max_subs == 0 {
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

    // Visit order: softmax of saliency times the best substitution gain.
    let saliencies: Vec<f64> = candidates.iter().map(|c| c.saliency).collect();
    let weights = softmax_slice(&saliencies);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let ha = weights[a] * candidates[a].best_gain;
        let hb = weights[b] * candidates[b].best_gain;
        hb.partial_cmp(&ha)
            .unwrap()
            .then(candidates[a].pos.cmp(&candidates[b].pos))
    });

    let mut current = ids.to_vec();
    let mut probs_after = probs0.clone();
    let mut applied = 0usize;
    for &ci in &order {
        if applied == max_subs {
            break;
        }
        let c = &candidates[ci];
        current[c.pos] = c.best_sub;
        applied += 1;
        probs_after = counter.probs(&current)?;
        if argmax(&probs_after) != gold {
            return Ok(AttackResult::from_parts(
                ids,
                current,
                true,
                false,
                counter.queries(),
                probs0,
                probs_after,
            ));
        }
    }
    Ok(AttackResult::from_parts(
        ids,
        current,
        false,
        false,
        counter.queries(),
        probs0,
        probs_after,
    ))
}
