//! The command-line pipeline driven in-process: generate data, train on one
//! half, then rank features and run the dropout sweeps on the other half.
//!
//! cargo run --release --example cli_pipeline -- [OUT_DIR]

use std::path::PathBuf;

use connlab::cli;

fn step(args: &[&str]) {
    let mut full = vec!["connlab"];
    full.extend_from_slice(args);
    println!("$ {}", full.join(" "));
    let code = cli::run(full);
    assert_eq!(code, 0, "step failed");
}

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "out/cli_pipeline".into());
    let dir = |name: &str| root.join(name).to_string_lossy().into_owned();
    let (data, train, rank, mc) = (dir("data"), dir("train"), dir("rank"), dir("mcdrop"));
    let model = format!("{train}/model.json");

    step(&["gen-data", "--seed", "7", "--out", &data]);
    step(&[
        "train",
        "--data",
        &data,
        "--split",
        "train",
        "--hidden",
        "200,100,100",
        "--out",
        &train,
    ]);
    step(&[
        "rank",
        "--data",
        &data,
        "--split",
        "train",
        "--model-file",
        &model,
        "--out",
        &rank,
    ]);
    step(&[
        "mcdrop",
        "--data",
        &data,
        "--split",
        "test",
        "--model-file",
        &model,
        "--out",
        &mc,
    ]);

    for file in [
        format!("{rank}/truncation.csv"),
        format!("{mc}/uncertainty.csv"),
    ] {
        println!(
            "\n{file}\n{}",
            std::fs::read_to_string(&file).expect("output exists")
        );
    }
}
