use super::*;
use crate::harness::Split;
use crate::lexicon::EmbeddingMatrix;
use crate::models::{Arch, ClassifierConfig, P_DENSE1_B, P_DENSE1_W, P_OUT_B, P_OUT_W};

fn embeddings(rows: &[&[f64]]) -> EmbeddingMatrix {
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    EmbeddingMatrix::new(rows.len(), dim, flat).unwrap()
}

fn bow(dim: usize, hidden: usize, classes: usize, emb: &EmbeddingMatrix, seed: u64) -> Classifier {
    Classifier::new(
        ClassifierConfig {
            arch: Arch::Bow,
            embed_dim: dim,
            hidden,
            kernel: 3,
            classes,
            dropout_embed: 0.0,
            max_len: 16,
        },
        emb,
        seed,
    )
    .unwrap()
}

fn ring_graph(ids: &[u32]) -> SynonymGraph {
    let mut g = SynonymGraph::new();
    for (i, &a) in ids.iter().enumerate() {
        let b = ids[(i + 1) % ids.len()];
        g.insert(TokenId(a), TokenId(b));
        g.insert(TokenId(b), TokenId(a));
    }
    g
}

fn dataset(examples: Vec<(Vec<TokenId>, usize)>) -> Dataset {
    Dataset {
        examples,
        split: Split::Train,
        class_count: 2,
        oov_tokens: 0,
        dropped_empty: 0,
    }
}

#[test]
fn isolated_vocabulary_degenerates_to_discrete() {
    let graph = SynonymGraph::new();
    let ids = vec![TokenId(2), TokenId(3)];
    let mut rng = seeding::rng(4);
    let vs = make_virtual(
        &ids,
        &graph,
        DirichletParams::new(0.1, 0.1).unwrap(),
        true,
        &mut rng,
    );
    for (nbh, point) in vs.nbhs.iter().zip(&vs.points) {
        assert_eq!(nbh.len(), 1);
        assert_eq!(point.beta(), &[1.0]);
    }
}

#[test]
fn virtual_draw_replays_with_fixed_seed() {
    let graph = ring_graph(&[2, 3, 4, 5, 6]);
    let ids = vec![TokenId(2), TokenId(4)];
    let params = DirichletParams::new(0.1, 0.1).unwrap();
    let a = make_virtual(&ids, &graph, params, true, &mut seeding::rng(7));
    let b = make_virtual(&ids, &graph, params, true, &mut seeding::rng(7));
    for (pa, pb) in a.points.iter().zip(&b.points) {
        assert_eq!(pa.beta(), pb.beta());
    }
}

#[test]
fn expanded_position_has_full_cluster_support() {
    let graph = ring_graph(&[2, 3, 4, 5, 6]);
    let vs = make_virtual(
        &[TokenId(2)],
        &graph,
        DirichletParams::new(0.1, 0.1).unwrap(),
        true,
        &mut seeding::rng(1),
    );
    assert_eq!(vs.points[0].len(), 5);
    let sum: f64 = vs.points[0].beta().iter().sum();
    assert!((sum - 1.0).abs() <= 1e-9);
    assert!(vs.points[0].beta().iter().all(|b| *b >= 0.0));
}

#[test]
fn pad_positions_keep_the_trivial_point() {
    let graph = ring_graph(&[2, 3]);
    let vs = make_virtual(
        &[TokenId(2), PAD],
        &graph,
        DirichletParams::new(0.1, 0.1).unwrap(),
        true,
        &mut seeding::rng(1),
    );
    assert_eq!(vs.nbhs[1].one_hop, vec![PAD]);
    assert_eq!(vs.points[1].beta(), &[1.0]);
}

#[test]
fn uniform_scores_give_log_two_loss() {
    let emb = embeddings(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], &[3.0, -1.0]]);
    let mut model = bow(2, 4, 2, &emb, 3);
    for name in [P_DENSE1_W, P_DENSE1_B, P_OUT_W, P_OUT_B] {
        for v in model.params.get_mut(name).value.data_mut() {
            *v = 0.0;
        }
    }
    let vs = make_virtual(
        &[TokenId(2)],
        &SynonymGraph::new(),
        DirichletParams::new(0.1, 0.1).unwrap(),
        true,
        &mut seeding::rng(2),
    );
    let loss = virtual_loss(&model, &vs, 1).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "{}", loss);
}

#[test]
fn saturated_scores_give_vanishing_loss() {
    let g = Graph::new();
    let scores = g.leaf(crate::autodiff::Tensor::vector(vec![50.0, 0.0]));
    let loss = cross_entropy_node(&g, scores, 0).unwrap();
    assert!(g.value(loss).item() < 1e-20);
}

#[test]
fn center_vertex_virtual_loss_equals_discrete_cross_entropy() {
    let emb = embeddings(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], &[3.0, -1.0]]);
    let model = bow(2, 4, 2, &emb, 5);
    let graph = ring_graph(&[2, 3]);
    let nbh = crate::lexicon::neighborhood(&graph, TokenId(2), false);
    let m = nbh.len();
    let mut beta = vec![0.0; m];
    beta[0] = 1.0;
    let vs = VirtualSentence {
        ids: vec![TokenId(2)],
        nbhs: vec![nbh],
        points: vec![SimplexPoint::from_beta(beta).unwrap()],
    };
    let virtual_ce = virtual_loss(&model, &vs, 1).unwrap();
    let g = Graph::new();
    let sess = model.session(&g);
    let e = sess.embed_discrete(&[TokenId(2)], None).unwrap();
    let scores = sess.score(&e).unwrap();
    let discrete_ce = g.value(cross_entropy_node(&g, scores, 1).unwrap()).item();
    assert!((virtual_ce - discrete_ce).abs() < 1e-12);
}

#[test]
fn zero_gradient_search_returns_the_start_only() {
    let emb = embeddings(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], &[3.0, -1.0]]);
    let mut model = bow(2, 4, 2, &emb, 3);
    for name in [P_DENSE1_W, P_DENSE1_B, P_OUT_W, P_OUT_B] {
        for v in model.params.get_mut(name).value.data_mut() {
            *v = 0.0;
        }
    }
    let graph = ring_graph(&[2, 3]);
    let vs = make_virtual(
        &[TokenId(2)],
        &graph,
        DirichletParams::new(0.5, 0.1).unwrap(),
        true,
        &mut seeding::rng(8),
    );
    let iterates =
        adversarial_search(&model, &vs, 1, 3, 10.0, UpdateRule::Normalized, false).unwrap();
    assert_eq!(iterates.len(), 1);
    assert_eq!(iterates[0].points[0].beta(), vs.points[0].beta());
}

#[test]
fn search_iterates_stay_on_their_simplices() {
    use rand::Rng;
    let mut seeds = seeding::rng(909);
    for trial in 0..1000 {
        let emb_rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..2)
                    .map(|_| {
                        if i < 2 {
                            0.0
                        } else {
                            seeds.random_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = emb_rows.iter().map(|r| r.as_slice()).collect();
        let emb = embeddings(&refs);
        let model = bow(2, 3, 2, &emb, trial);
        let graph = ring_graph(&[2, 3, 4, 5]);
        let len = seeds.random_range(1..4usize);
        let ids: Vec<TokenId> = (0..len)
            .map(|_| TokenId(seeds.random_range(2..6)))
            .collect();
        let vs = make_virtual(
            &ids,
            &graph,
            DirichletParams::new(0.1, 0.1).unwrap(),
            true,
            &mut seeds,
        );
        let iterates =
            adversarial_search(&model, &vs, 0, 3, 10.0, UpdateRule::Normalized, false).unwrap();
        for it in &iterates {
            it.check().unwrap();
            for p in &it.points {
                assert!(p.beta().iter().all(|b| *b >= 0.0));
                let sum: f64 = p.beta().iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9);
                let sm = crate::autodiff::softmax_slice(p.eta());
                for (a, b) in sm.iter().zip(p.beta()) {
                    assert!((a - b).abs() <= 1e-9);
                }
            }
        }
    }
}

/// Linear 1-word model where the labeled class score strictly decreases in
/// beta_2: the search must push beta_2 up every step (closed-form gradient
/// direction).
#[test]
fn search_climbs_the_closed_form_direction() {
    let emb = embeddings(&[&[0.0], &[0.0], &[0.0], &[1.0]]);
    let mut model = Classifier::new(
        ClassifierConfig {
            arch: Arch::Bow,
            embed_dim: 1,
            hidden: 1,
            kernel: 3,
            classes: 2,
            dropout_embed: 0.0,
            max_len: 4,
        },
        &emb,
        1,
    )
    .unwrap();
    model.params.get_mut(P_DENSE1_W).value.data_mut()[0] = 1.0;
    model.params.get_mut(P_DENSE1_B).value.data_mut()[0] = 0.0;
    model
        .params
        .get_mut(P_OUT_W)
        .value
        .data_mut()
        .copy_from_slice(&[-3.0, 3.0]);
    for v in model.params.get_mut(P_OUT_B).value.data_mut() {
        *v = 0.0;
    }
    // score_0 = -3 * beta_2, score_1 = +3 * beta_2 (relu passthrough on [0,1]).
    let graph = ring_graph(&[2, 3]);
    let nbh = crate::lexicon::neighborhood(&graph, TokenId(2), false);
    let vs = VirtualSentence {
        ids: vec![TokenId(2)],
        nbhs: vec![nbh],
        points: vec![SimplexPoint::from_beta(vec![0.5, 0.5]).unwrap()],
    };
    let iterates =
        adversarial_search(&model, &vs, 0, 4, 0.5, UpdateRule::Normalized, false).unwrap();
    assert_eq!(iterates.len(), 4);
    let mut prev = vs.points[0].beta()[1];
    for it in &iterates {
        let b2 = it.points[0].beta()[1];
        assert!(b2 > prev, "beta_2 did not increase: {} -> {}", prev, b2);
        prev = b2;
    }
}

#[test]
fn search_never_touches_parameters() {
    let emb = embeddings(&[&[0.0, 0.0], &[0.0, 0.0], &[0.4, -0.2], &[0.1, 0.8]]);
    let model = bow(2, 4, 2, &emb, 17);
    let graph = ring_graph(&[2, 3]);
    let vs = make_virtual(
        &[TokenId(2), TokenId(3)],
        &graph,
        DirichletParams::new(0.1, 0.1).unwrap(),
        true,
        &mut seeding::rng(3),
    );
    let before = model.params.value_bits();
    let _ = adversarial_search(&model, &vs, 0, 3, 10.0, UpdateRule::Normalized, false).unwrap();
    assert_eq!(model.params.value_bits(), before);
}

fn separable_toy() -> (EmbeddingMatrix, Dataset) {
    let emb = embeddings(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.3], &[-1.0, -0.3]]);
    let mut examples = Vec::new();
    for _ in 0..10 {
        examples.push((vec![TokenId(2)], 1));
        examples.push((vec![TokenId(3)], 0));
    }
    (emb, dataset(examples))
}

#[test]
fn orig_fits_linearly_separable_data() {
    let (emb, data) = separable_toy();
    let mut model = bow(2, 4, 2, &emb, 21);
    let cfg = TrainConfig {
        mode: TrainMode::Orig,
        lr: 0.05,
        epochs: 20,
        batch: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let history = train(
        &mut model,
        &data,
        None,
        &SynonymGraph::new(),
        &cfg,
        |_, _| {},
    )
    .unwrap();
    let final_acc = history.last().unwrap().train_acc;
    assert_eq!(final_acc, 1.0, "history: {:?}", history.last());
}

#[test]
fn dne_on_isolated_vocabulary_matches_orig_exactly() {
    let (emb, data) = separable_toy();
    let mk = || {
        let mut m = bow(2, 4, 2, &emb, 33);
        m.config.dropout_embed = 0.3;
        m
    };
    let base = TrainConfig {
        lr: 0.01,
        epochs: 4,
        batch: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let empty = SynonymGraph::new();
    let mut orig_model = mk();
    let orig_cfg = TrainConfig {
        mode: TrainMode::Orig,
        ..base
    };
    let orig = train(&mut orig_model, &data, None, &empty, &orig_cfg, |_, _| {}).unwrap();
    let mut dne_model = mk();
    let dne_cfg = TrainConfig {
        mode: TrainMode::Dne,
        ..base
    };
    let dne = train(&mut dne_model, &data, None, &empty, &dne_cfg, |_, _| {}).unwrap();
    // The loss sequences agree (the DNE hull collapsed to a point); the only
    // slack is summation order, since DNE averages two identical copies.
    for (a, b) in orig.iter().zip(&dne) {
        assert!(
            (a.train_loss - b.train_loss).abs() <= 1e-12 * a.train_loss.abs().max(1.0),
            "epoch {}: {} vs {}",
            a.epoch,
            a.train_loss,
            b.train_loss
        );
        assert_eq!(a.train_acc, b.train_acc);
    }
    for (a, b) in orig_model
        .params
        .iter()
        .flat_map(|p| p.value.data())
        .zip(dne_model.params.iter().flat_map(|p| p.value.data()))
    {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn jensen_bound_holds_on_random_models() {
    use rand::Rng;
    let mut seeds = seeding::rng(2718);
    for trial in 0..1000 {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..2)
                    .map(|_| {
                        if i < 2 {
                            0.0
                        } else {
                            seeds.random_range(-1.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let emb = embeddings(&refs);
        let model = bow(2, 2, 2, &emb, 5000 + trial);
        let graph = ring_graph(&[2, 3, 4, 5]);
        let ids = vec![TokenId(seeds.random_range(2..6)), TokenId(seeds.random_range(2..6))];
        let label = seeds.random_range(0..2usize);
        let params = DirichletParams::new(0.3, 0.1).unwrap();
        let mut log_sum = 0.0;
        let mut p_sum = 0.0;
        let n = 64;
        for _ in 0..n {
            let vs = make_virtual(&ids, &graph, params, true, &mut seeds);
            let probs = model.forward_probs_virtual(&vs).unwrap();
            log_sum += probs[label].ln();
            p_sum += probs[label];
        }
        let mean_log = log_sum / n as f64;
        let log_mean = (p_sum / n as f64).ln();
        assert!(
            mean_log <= log_mean + 1e-9,
            "Jensen violated: {} > {}",
            mean_log,
            log_mean
        );
    }
}

#[test]
fn coordinated_update_moves_every_mixed_row() {
    let emb = embeddings(&[&[0.0, 0.0], &[0.0, 0.0], &[0.5, -0.1], &[0.2, 0.9]]);
    for (coordinated, expect_row3_moves) in [(true, true), (false, false)] {
        let mut model = bow(2, 4, 2, &emb, 55);
        // Keep the hidden layer active so gradient reaches the embeddings.
        for v in model.params.get_mut(P_DENSE1_B).value.data_mut() {
            *v = 1.0;
        }
        let vs = VirtualSentence {
            ids: vec![TokenId(2)],
            nbhs: vec![crate::lexicon::Neighborhood {
                center: TokenId(2),
                one_hop: vec![TokenId(2), TokenId(3)],
                two_hop_only: vec![],
            }],
            points: vec![SimplexPoint::from_beta(vec![0.6, 0.4]).unwrap()],
        };
        let before2 = model.embedding_row(TokenId(2)).to_vec();
        let before3 = model.embedding_row(TokenId(3)).to_vec();
        let mut opt = Adam::new(&model, 5e-4, 1e-4);
        let g = Graph::new();
        let sess = model.session(&g);
        let (e, _) = sess.embed_virtual(&vs, coordinated, None).unwrap();
        let scores = sess.score(&e).unwrap();
        let loss = cross_entropy_node(&g, scores, 0).unwrap();
        g.backward(loss).unwrap();
        sess.accumulate_grads(&mut model);
        opt.step(&mut model, (-1.0, 1.0));
        let moved2 = model.embedding_row(TokenId(2)) != before2.as_slice();
        let moved3 = model.embedding_row(TokenId(3)) != before3.as_slice();
        assert!(moved2, "center row must always move");
        assert_eq!(moved3, expect_row3_moves, "coordinated={}", coordinated);
    }
}

#[test]
fn random_substitution_stays_in_the_substitution_set() {
    let graph = ring_graph(&[2, 3, 4]);
    let ids = vec![TokenId(2), TokenId(3), PAD];
    let mut rng = seeding::rng(77);
    for _ in 0..100 {
        let out = substitute_random(&ids, &graph, &mut rng);
        assert_eq!(out.len(), ids.len());
        assert_eq!(out[2], PAD);
        for (orig, new) in ids.iter().zip(&out).take(2) {
            let s = graph.synonyms_with_self(*orig);
            assert!(s.contains(new));
        }
    }
}

#[test]
fn divergence_guard_reports_non_finite_loss() {
    let (emb, data) = separable_toy();
    let mut model = bow(2, 4, 2, &emb, 3);
    // Poison a parameter so the forward pass goes non-finite.
    model.params.get_mut(P_OUT_W).value.data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        mode: TrainMode::Orig,
        epochs: 1,
        batch: 4,
        seed: 1,
        ..TrainConfig::default()
    };
    let err = train(
        &mut model,
        &data,
        None,
        &SynonymGraph::new(),
        &cfg,
        |_, _| {},
    );
    assert!(matches!(err, Err(crate::error::Error::Diverged(_))));
}

#[test]
fn epsilon_validation_applies_only_when_searching() {
    let ok = TrainConfig {
        adv_steps: 0,
        adv_epsilon: 0.0,
        ..TrainConfig::default()
    };
    assert!(ok.validate().is_ok());
    let bad = TrainConfig {
        adv_steps: 2,
        adv_epsilon: 0.0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
}
