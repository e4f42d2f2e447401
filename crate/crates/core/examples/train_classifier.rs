//! Train the 20-neuron network on one half of the cohort and score the other.

use connlab::fixture;
use connlab::harness::holdout_split;
use connlab::network::{train, Network, NetworkSpec};

fn main() -> connlab::Result<()> {
    let fs = fixture::reference_data()?.features()?;
    let (train_idx, test_idx) = holdout_split(&fs.labels, fixture::REFERENCE_SEED);
    let (train_set, test) = (fs.select(&train_idx), fs.select(&test_idx));

    let cfg = fixture::reference_train_config();
    let spec = NetworkSpec::new(fs.input_dim(), vec![20], 2, cfg.dropout_rate);
    let out = train(&Network::init(spec, cfg.seed)?, &train_set, &cfg)?;
    for (i, loss) in out
        .loss_trace
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 50 == 0)
    {
        println!("iteration {:>3}  loss {loss:.4}", i + 1);
    }
    println!(
        "final loss {:.4} (target {} reached: {})",
        out.loss_trace.last().unwrap(),
        cfg.target_loss,
        out.reached_target
    );

    let net = out.network;
    let correct = (0..test.len())
        .filter(|&i| {
            net.predict(test.input(i).as_slice().unwrap())
                .map(|p| p.label == test.labels[i])
                .unwrap_or(false)
        })
        .count();
    println!(
        "held-out accuracy {:.3} on {} subjects",
        correct as f64 / test.len() as f64,
        test.len()
    );
    println!("model JSON is {} bytes", net.to_json()?.len());
    Ok(())
}
