//! Linear SVM baseline next to the 20-neuron network under the same
//! cross-validation splits.

use connlab::baselines::{linear_accuracy, train_linear_svm};
use connlab::fixture;
use connlab::harness::{holdout_split, permuted_cv_spec, CvConfig, ModelSpec};

fn main() -> connlab::Result<()> {
    let fs = fixture::reference_data()?.features()?;
    let (train_idx, test_idx) = holdout_split(&fs.labels, 1);
    let svm = train_linear_svm(&fs.select(&train_idx), &fixture::reference_svm())?;
    let trace = &svm.objective_trace;
    println!(
        "objective {:.4} -> {:.4} over {} epochs",
        trace[0],
        trace[trace.len() - 1],
        trace.len()
    );
    println!(
        "held-out accuracy {:.3}",
        linear_accuracy(&svm.model, &fs.select(&test_idx))?
    );

    let cv = CvConfig {
        n_permutations: 10,
        master_seed: fixture::REFERENCE_SEED,
        ..CvConfig::default()
    };
    for (name, spec) in [
        ("linear svm", ModelSpec::LinearSvm(fixture::reference_svm())),
        ("dnn 1x20", fixture::reference_classifier()),
    ] {
        let r = permuted_cv_spec(&fs, &cv, &spec)?;
        println!("{name:>10}: {:.4} +/- {:.4}", r.mean_acc, r.std_acc);
    }
    Ok(())
}
