//! Seed-level trends on the reference cohort. Each is a majority property
//! over ten master seeds, not a per-run guarantee.

use connlab::attribution::{CorrelationSummary, ExpansionPolicy};
use connlab::bayesian::{build_subset_suite, uncertainty_sweep, DropoutPolicy, MixStage};
use connlab::fixture;
use connlab::harness::{
    fit_dnn, holdout_split, repeatability_study, CvConfig, RepeatabilityReport,
};
use connlab::network::NetworkSpec;

const SEEDS: u64 = 10;

fn median_correlation(r: &RepeatabilityReport) -> f64 {
    let pooled: Vec<Option<f64>> = r
        .class0_pairs
        .iter()
        .chain(&r.class1_pairs)
        .cloned()
        .collect();
    CorrelationSummary::from_pairs(r.class0.n_patterns + r.class1.n_patterns, &pooled).median
}

#[test]
fn deeper_networks_give_more_repeatable_features() {
    let data = fixture::reference_data().unwrap().features().unwrap();
    let train = fixture::reference_train_config();
    let mut deeper_wins = 0;
    for seed in 0..SEEDS {
        let cv = CvConfig {
            n_permutations: 5,
            n_folds: 2,
            master_seed: seed,
            ..CvConfig::default()
        };
        let median = |layers: usize| {
            let hidden = NetworkSpec::halving_sizes(layers, 20);
            median_correlation(
                &repeatability_study(&data, &hidden, &train, ExpansionPolicy::All, &cv).unwrap(),
            )
        };
        if median(3) > median(1) {
            deeper_wins += 1;
        }
    }
    assert!(
        deeper_wins >= 7,
        "3 layers beat 1 layer in only {deeper_wins}/{SEEDS} seeds"
    );
}

#[test]
fn uncertainty_rises_toward_the_even_mix() {
    let data = fixture::reference_data().unwrap();
    let fs = data.features().unwrap();
    let mut ordered = 0;
    for seed in 0..SEEDS {
        let (train, test) = holdout_split(&fs.labels, seed);
        let net = fit_dnn(
            &fs.select(&train),
            &fixture::DEEP_SIZES,
            &fixture::reference_train_config(),
            seed,
        )
        .unwrap();
        let suite = build_subset_suite(
            &data.subset(&test).unwrap(),
            100,
            seed,
            MixStage::Normalized,
        )
        .unwrap();
        let sweep = uncertainty_sweep(
            &net,
            &suite,
            fixture::PASSES,
            &DropoutPolicy::rate(0.5),
            seed,
        )
        .unwrap();
        let u = |name: &str| sweep.get(name).unwrap().mean_uncertainty;
        let rising = |path: [&str; 3]| path.windows(2).all(|w| u(w[0]) <= u(w[1]));
        if rising(["F", "F1", "FM"]) && rising(["M", "M1", "FM"]) {
            ordered += 1;
        }
    }
    assert!(
        ordered >= 8,
        "ordering held in only {ordered}/{SEEDS} seeds"
    );
}
