//! Permuted 2-fold cross-validation with per-fold records, and a check that
//! the thread count does not change a single byte of the report.

use connlab::fixture;
use connlab::harness::{permuted_cv_spec, CvConfig};

fn main() -> connlab::Result<()> {
    let fs = fixture::reference_data()?.features()?;
    let cfg = CvConfig {
        n_permutations: 10,
        master_seed: fixture::REFERENCE_SEED,
        ..CvConfig::default()
    };
    let report = permuted_cv_spec(&fs, &cfg, &fixture::reference_classifier())?;
    for p in &report.permutations {
        let folds: Vec<String> = p
            .folds
            .iter()
            .map(|f| format!("{}/{}", f.correct, f.n_test))
            .collect();
        println!(
            "permutation {:>2}: accuracy {:.4}  folds {}",
            p.permutation,
            p.accuracy.unwrap_or(f64::NAN),
            folds.join(" ")
        );
    }
    println!("mean {:.4}, sd {:.4}", report.mean_acc, report.std_acc);
    report.check_aggregates()?;

    let single = permuted_cv_spec(
        &fs,
        &CvConfig { jobs: 1, ..cfg },
        &fixture::reference_classifier(),
    )?;
    assert_eq!(single.to_json()?, report.to_json()?);
    println!("report identical with one worker thread");
    Ok(())
}
