//! Monte Carlo dropout on a held-out half: accuracy under several dropout
//! policies, then uncertainty on pure and mixed subjects.

use connlab::bayesian::{
    build_subset_suite, dropout_rate_sweep, mc_dropout_predict, uncertainty_sweep, DropoutPolicy,
    MixStage,
};
use connlab::fixture;
use connlab::harness::{fit_dnn, holdout_split};

fn main() -> connlab::Result<()> {
    let data = fixture::reference_data()?;
    let fs = data.features()?;
    let (train_idx, test_idx) = holdout_split(&fs.labels, 0);
    let test = fs.select(&test_idx);
    let net = fit_dnn(
        &fs.select(&train_idx),
        &fixture::DEEP_SIZES,
        &fixture::reference_train_config(),
        0,
    )?;

    let x0 = test.input(0).to_vec();
    let p = mc_dropout_predict(&net, &x0, fixture::PASSES, &DropoutPolicy::rate(0.5), 1)?;
    println!(
        "one subject: mean {:?}, uncertainty {:.2e}, label {} (truth {})",
        p.mean_probs, p.uncertainty, p.label, test.labels[0]
    );

    let policies: Vec<DropoutPolicy> = ["rate:0", "rate:0.2", "rate:0.5", "rate:0.8", "R2"]
        .iter()
        .map(|s| s.parse())
        .collect::<connlab::Result<_>>()?;
    let sweep = dropout_rate_sweep(
        &net,
        test.inputs.view(),
        &test.labels,
        &policies,
        fixture::PASSES,
        2,
    )?;
    println!(
        "\nweight averaging accuracy {:.3}",
        sweep.weight_avg_accuracy
    );
    for row in &sweep.rows {
        println!(
            "{:>9}  mc accuracy {:.3}",
            row.policy.to_string(),
            row.mc_accuracy
        );
    }

    let suite = build_subset_suite(&data.subset(&test_idx)?, 100, 3, MixStage::Normalized)?;
    let u = uncertainty_sweep(&net, &suite, fixture::PASSES, &DropoutPolicy::rate(0.5), 4)?;
    println!("\nsubset  accuracy  mean uncertainty");
    for s in &u.subsets {
        println!(
            "{:>6}  {:.3}     {:.2e}",
            s.subset, s.accuracy, s.mean_uncertainty
        );
    }
    Ok(())
}
