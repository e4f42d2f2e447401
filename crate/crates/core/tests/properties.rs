use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use connlab::attribution::{back_project, rank_features, ExpansionPolicy};
use connlab::bayesian::{
    build_subset_suite, mc_dropout_batch, mc_dropout_predict, DropoutPolicy, MixStage,
};
use connlab::connectivity::{generate_synthetic, SyntheticConfig};
use connlab::harness::{fold_assignment, CvConfig};
use connlab::network::{Network, NetworkSpec};
use connlab::rng::stream;

fn arb_hidden() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..12, 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ranking_is_a_permutation_sorted_by_magnitude(hidden in arb_hidden(), seed in any::<u64>()) {
        let last = *hidden.last().unwrap();
        let net = Network::init(NetworkSpec::new(15, hidden, 2, 0.2), seed).unwrap();
        let r = rank_features(&net).unwrap();
        let all: Vec<usize> = r.class0.iter().chain(&r.class1).map(|f| f.neuron_index).collect();
        prop_assert_eq!(all.len(), last);
        prop_assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), last);
        for list in [&r.class0, &r.class1] {
            for w in list.windows(2) {
                prop_assert!(w[0].magnitude >= w[1].magnitude);
            }
        }
        prop_assert!(r.class0.iter().all(|f| f.diff >= 0.0));
        prop_assert!(r.class1.iter().all(|f| f.diff < 0.0));
    }

    #[test]
    fn patterns_are_finite_and_symmetric(
        hidden in arb_hidden(),
        seed in any::<u64>(),
        pick in any::<prop::sample::Index>(),
        top in 1usize..6,
    ) {
        let net = Network::init(NetworkSpec::new(21, hidden.clone(), 2, 0.0), seed).unwrap();
        let layer = hidden.len();
        let neuron = pick.index(hidden[layer - 1]);
        for policy in [ExpansionPolicy::All, ExpansionPolicy::TopK(top)] {
            let p = back_project(&net, layer, neuron, policy).unwrap();
            prop_assert!(p.vector.iter().all(|v| v.is_finite()));
            let m = p.matrix_view().unwrap();
            for i in 0..7 {
                for j in 0..7 {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }
    }

    #[test]
    fn mc_means_lie_in_the_simplex(
        hidden in arb_hidden(),
        seed in any::<u64>(),
        rate in 0.0f64..0.95,
        retain in 1usize..3,
        passes in 1usize..40,
    ) {
        let net = Network::init(NetworkSpec::new(6, hidden.clone(), 2, 0.3), seed).unwrap();
        let mut rng = stream(seed, &[1]);
        let x = Array2::from_shape_simple_fn((4, 6), || rng.random_range(-3.0..3.0));
        let retain = retain.min(*hidden.last().unwrap());
        for policy in [DropoutPolicy::rate(rate), DropoutPolicy::retain_exact(retain)] {
            for p in mc_dropout_batch(&net, x.view(), passes, &policy, seed).unwrap() {
                prop_assert!((p.mean_probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(p.mean_probs.iter().all(|&q| (0.0..=1.0).contains(&q)));
                prop_assert!(p.variance.iter().all(|&v| v >= 0.0));
                prop_assert_eq!(p.passes, passes);
            }
        }
    }

    #[test]
    fn every_subject_is_tested_exactly_once(
        labels in prop::collection::vec(0usize..2, 8..120),
        folds in 2usize..5,
        seed in any::<u64>(),
        permutation in 0usize..50,
        stratified in any::<bool>(),
    ) {
        let cfg = CvConfig { n_permutations: 50, n_folds: folds, master_seed: seed, jobs: 1, stratified };
        let assign = fold_assignment(&labels, &cfg, permutation);
        prop_assert_eq!(assign.len(), labels.len());
        let mut sizes = vec![0usize; folds];
        for &k in &assign {
            prop_assert!(k < folds);
            sizes[k] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn subsets_never_reuse_a_source() {
    let cfg = SyntheticConfig {
        n_nodes: 8,
        n_subjects: 80,
        n_timepoints: 60,
        ..SyntheticConfig::default()
    };
    for seed in 0..5 {
        let data = generate_synthetic(&cfg, seed).unwrap();
        for stage in [MixStage::Normalized, MixStage::Raw] {
            let suite = build_subset_suite(&data, 30, seed, stage).unwrap();
            for s in &suite.subsets {
                let f: Vec<_> = s.sources.iter().filter_map(|(f, _)| f.clone()).collect();
                let m: Vec<_> = s.sources.iter().filter_map(|(_, m)| m.clone()).collect();
                assert_eq!(
                    f.iter().collect::<BTreeSet<_>>().len(),
                    f.len(),
                    "{}",
                    s.name
                );
                assert_eq!(
                    m.iter().collect::<BTreeSet<_>>().len(),
                    m.len(),
                    "{}",
                    s.name
                );
                assert_eq!(s.sources.len(), 30);
            }
        }
    }
}

/// Across-seed spread of the MC mean falls as passes grow (T = 400 vs 25).
#[test]
fn mc_mean_spread_shrinks_with_passes() {
    let net = Network::init(NetworkSpec::new(10, vec![16, 8], 2, 0.5), 3).unwrap();
    let mut rng = stream(99, &[]);
    for _ in 0..5 {
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spread = |passes: usize, offset: u64| {
            let means: Vec<f64> = (0..30)
                .map(|s| {
                    mc_dropout_predict(&net, &x, passes, &DropoutPolicy::rate(0.5), offset + s)
                        .unwrap()
                        .mean_probs[0]
                })
                .collect();
            let mu = means.iter().sum::<f64>() / 30.0;
            means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / 29.0
        };
        let (few, many) = (spread(25, 0), spread(400, 1000));
        assert!(
            many < few,
            "T=400 spread {many} not below T=25 spread {few}"
        );
    }
}
