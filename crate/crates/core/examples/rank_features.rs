//! Rank the last hidden layer of a deep network, test how much of the
//! decision the top feature pairs carry, and back-project the best pair to
//! connectivity patterns.

use connlab::attribution::{
    back_project_ranked, pair_loss, rank_features, truncated_metrics, ExpansionPolicy, KPairs,
};
use connlab::fixture;
use connlab::harness::{fit_dnn, holdout_split};

fn main() -> connlab::Result<()> {
    let fs = fixture::reference_data()?.features()?;
    let (train_idx, _) = holdout_split(&fs.labels, 0);
    let train = fs.select(&train_idx);
    let net = fit_dnn(
        &train,
        &fixture::DEEP_SIZES,
        &fixture::reference_train_config(),
        0,
    )?;

    let ranking = rank_features(&net)?;
    for class in 0..2 {
        let top: Vec<String> = ranking.class(class)[..5]
            .iter()
            .map(|f| format!("n{} ({:+.3})", f.neuron_index, f.diff))
            .collect();
        println!("class {class} top features: {}", top.join(", "));
    }

    println!("\nrank  pair loss");
    for rank in 1..=10 {
        println!("{rank:>4}  {:.4}", pair_loss(&net, &train, rank)?);
    }

    println!("\npairs  accuracy  cross-entropy");
    for k in [
        KPairs::Top(1),
        KPairs::Top(2),
        KPairs::Top(5),
        KPairs::Top(10),
        KPairs::All,
    ] {
        let (acc, ce) = truncated_metrics(&net, &train, k)?;
        println!("{:>5}  {acc:.3}     {ce:.4}", k.to_string());
    }

    for class in 0..2 {
        let feature = &ranking.class(class)[0];
        let pattern = back_project_ranked(&net, feature, ExpansionPolicy::All)?;
        let m = pattern.matrix_view()?;
        let n = m.n_nodes();
        let mut edges: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, m.get(i, j)))
            .collect();
        edges.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
        let strongest: Vec<String> = edges[..4]
            .iter()
            .map(|(i, j, v)| format!("{i}-{j} {v:+.2}"))
            .collect();
        println!(
            "\nclass {class} pattern, strongest edges: {}",
            strongest.join(", ")
        );
    }
    Ok(())
}
