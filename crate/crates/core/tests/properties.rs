use proptest::prelude::*;

use b2mapo_core::oracle::max_tv;
use b2mapo_core::optimizer::{batch_ratio, distill_loss, distill_step_with, distill_targets_exact, samples_exact};
use b2mapo_core::rollout::{collect_rollouts, corrected_advantage, fit_value_table, gae};
use b2mapo_core::scheduler::{
    generator_objective_and_gradient, inclusion_prob, is_acyclic, layer_topological, min_batches_greedy, to_dag,
    AttentionScorer, GeneratorSample, IndependenceGraph, WeightedEdge, EDGE_PROB_MARGIN,
};
use b2mapo_core::{build_random_game, expected_return, BatchSequence, ObservationEncoder, PolicySet};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

/// Random batch sequence over `n` agents from a permutation key and cut
/// points.
fn sequence_from(n: usize, keys: &[u32], cuts: &[bool]) -> BatchSequence {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (keys[i], i));
    let mut batches = vec![vec![order[0]]];
    for (k, &i) in order.iter().enumerate().skip(1) {
        if cuts[k] {
            batches.push(Vec::new());
        }
        batches.last_mut().expect("nonempty").push(i);
    }
    BatchSequence::new(batches, n).expect("valid partition")
}

fn edges_strategy() -> impl Strategy<Value = (usize, Vec<WeightedEdge>)> {
    (2usize..9).prop_flat_map(|n| {
        let edge = (0..n, 0..n, 0.0f64..1.0);
        (Just(n), prop::collection::vec(edge, 0..20))
    })
}

fn clean(edges: Vec<WeightedEdge>) -> Vec<WeightedEdge> {
    let mut out: Vec<WeightedEdge> = Vec::new();
    for e in edges {
        if e.0 != e.1 && !out.iter().any(|f| (f.0, f.1) == (e.0, e.1)) {
            out.push(e);
        }
    }
    out
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn sequence_text_round_trips(keys in prop::collection::vec(0u32..100, 6), cuts in prop::collection::vec(any::<bool>(), 6)) {
        let seq = sequence_from(6, &keys, &cuts);
        prop_assert_eq!(BatchSequence::parse(&seq.compact(), 6).unwrap(), seq.clone());
        for k in 0..seq.len() {
            let pre = seq.preceding(k);
            prop_assert!(seq.batch(k).iter().all(|i| !pre.contains(i)));
            prop_assert_eq!(pre.len(), seq.batches()[..k].iter().map(Vec::len).sum::<usize>());
        }
    }

    #[test]
    fn dag_layering_respects_edges((n, edges) in edges_strategy()) {
        let edges = clean(edges);
        let dag = to_dag(n, &edges);
        prop_assert!(is_acyclic(n, &dag));
        let pairs: Vec<(usize, usize)> = dag.iter().map(|e| (e.0, e.1)).collect();
        let layers = layer_topological(n, &pairs).unwrap();
        prop_assert!(layers.respects(&pairs));
        let all: Vec<(usize, usize)> = edges.iter().map(|e| (e.0, e.1)).collect();
        let greedy = min_batches_greedy(&IndependenceGraph::from_directed(n, &all).unwrap()).unwrap();
        prop_assert!(greedy.is_independent(&all));
    }

    #[test]
    fn joint_policies_are_distributions(seed in 0u64..1000, keys in prop::collection::vec(0u32..10, 3), cuts in prop::collection::vec(any::<bool>(), 3)) {
        let game = build_random_game(3, 3, 2, 0.9, seed).unwrap();
        let mut set = PolicySet::new(&game, sequence_from(3, &keys, &cuts), false, ObservationEncoder::Current).unwrap();
        set.randomize(seed, 3.0);
        for pi in [set.joint_policy(&game).unwrap(), set.independent_joint_policy(&game).unwrap()] {
            for s in 0..game.n_states() {
                prop_assert!((pi.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let bound = game.reward_bound() / (1.0 - game.gamma());
            prop_assert!(expected_return(&game, &pi).unwrap().abs() <= bound + 1e-9);
        }
        let (a, b) = (set.joint_policy(&game).unwrap(), set.independent_joint_policy(&game).unwrap());
        let tv = max_tv(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&tv));
        prop_assert_eq!(tv, max_tv(&b, &a).unwrap());
    }

    #[test]
    fn batch_ratio_preceding_factor_stays_in_band(seed in 0u64..1000, clip in 0.05f64..0.5) {
        let game = build_random_game(3, 2, 2, 0.9, seed).unwrap();
        let seq = BatchSequence::new(vec![vec![0], vec![1, 2]], 3).unwrap();
        let mut old = PolicySet::new(&game, seq, false, ObservationEncoder::Current).unwrap();
        old.randomize(seed, 1.0);
        let mut new = old.clone();
        new.randomize(seed + 1, 1.0);
        for s in samples_exact(&game, &old).unwrap() {
            let own = batch_ratio(&new, &old, &s.keys, &s.actions, &[1, 2], &[], clip).unwrap();
            let l = batch_ratio(&new, &old, &s.keys, &s.actions, &[1, 2], &[0], clip).unwrap();
            let g = l / own;
            prop_assert!(g >= 1.0 - clip / 2.0 - 1e-12 && g <= 1.0 + clip / 2.0 + 1e-12);
        }
    }

    #[test]
    fn corrected_equals_gae_on_policy(seed in 0u64..1000, lambda in 0.0f64..=1.0) {
        let game = build_random_game(2, 3, 2, 0.8, seed).unwrap();
        let mut set = PolicySet::new(&game, BatchSequence::single(2), false, ObservationEncoder::Current).unwrap();
        set.randomize(seed, 1.0);
        let traj = collect_rollouts(&game, &set, set.sequence(), 3, 12, seed).unwrap();
        let v = fit_value_table(&traj, game.gamma());
        let a = gae(&traj, &v, game.gamma(), lambda).unwrap();
        let b = corrected_advantage(&traj, &v, &set, &set, game.gamma(), lambda).unwrap();
        for (x, y) in a.flat().zip(b.flat()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn distillation_steps_never_raise_the_loss(seed in 0u64..1000, coef in 0.05f64..1.0) {
        let game = build_random_game(3, 3, 3, 0.9, seed).unwrap();
        let seq = BatchSequence::singletons(&[2, 0, 1]).unwrap();
        let mut set = PolicySet::new(&game, seq, false, ObservationEncoder::Current).unwrap();
        set.randomize(seed, 2.0);
        let targets = distill_targets_exact(&set, &game).unwrap();
        let mut prev = distill_loss(&set, &targets).unwrap();
        for _ in 0..10 {
            distill_step_with(&mut set, &targets, coef).unwrap();
            let now = distill_loss(&set, &targets).unwrap();
            prop_assert!(now.iter().zip(&prev).all(|(a, b)| *a <= *b + 1e-15));
            prev = now;
        }
    }

    #[test]
    fn generator_stays_finite_when_scores_saturate(seed in 0u64..1000, scale in 1.0f64..200.0, advantage in -2.0f64..2.0) {
        let scorer = AttentionScorer::new(3, 2, scale, seed).unwrap();
        let x: Vec<Vec<f64>> = (0..4).map(|i| (0..3).map(|b| ((i * 3 + b) as f64 * 0.7).sin() * scale).collect()).collect();
        let g = scorer.raw_scores(&x).unwrap();
        let mask: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        // include every edge whose score is tiny and drop every saturated one
        let included: Vec<bool> = mask.iter().map(|&(i, j)| g[i * 4 + j] < 0.5).collect();
        let probs: Vec<f64> = mask.iter().map(|&(i, j)| inclusion_prob(g[i * 4 + j])).collect();
        let sample = GeneratorSample {
            features: x,
            mask,
            included,
            probs_old: probs.clone(),
            logp_old: b2mapo_core::scheduler::edge_set_logp(&probs, &[true; 12]),
            advantage,
        };
        let (obj, grad) = generator_objective_and_gradient(&scorer, &[sample], 0.2, 0.01).unwrap();
        prop_assert!(obj.is_finite() && grad.iter().all(|v| v.is_finite()));
        prop_assert!(probs.iter().all(|&p| (EDGE_PROB_MARGIN..=1.0 - EDGE_PROB_MARGIN).contains(&p)));
    }
}
