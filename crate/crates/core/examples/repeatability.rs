//! How consistently independently trained networks find the same top
//! feature: pairwise correlation of back-projected patterns across CV folds,
//! for a shallow and a deep network.

use connlab::attribution::ExpansionPolicy;
use connlab::fixture;
use connlab::harness::{repeatability_study, CvConfig};
use connlab::network::NetworkSpec;

fn main() -> connlab::Result<()> {
    let fs = fixture::reference_data()?.features()?;
    let cfg = CvConfig {
        n_permutations: 5,
        master_seed: 2,
        ..CvConfig::default()
    };
    for layers in [1, 3] {
        let hidden = NetworkSpec::halving_sizes(layers, 20);
        let r = repeatability_study(
            &fs,
            &hidden,
            &fixture::reference_train_config(),
            ExpansionPolicy::All,
            &cfg,
        )?;
        println!("hidden {hidden:?}");
        for (class, s) in [(0, &r.class0), (1, &r.class1)] {
            println!(
                "  class {class}: {} patterns, {} pairs, median r {:.3} (q1 {:.3}, q3 {:.3})",
                s.n_patterns, s.n_pairs, s.median, s.q1, s.q3
            );
        }
    }
    Ok(())
}
