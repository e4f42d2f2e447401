//! Accuracy across depth and width, with an SVM row for reference.
//!
//! cargo run --release --example structure_sweep -- [OUT_DIR]

use std::path::PathBuf;

use connlab::fixture;
use connlab::harness::{structure_sweep, CvConfig};

fn main() -> connlab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "out/structure_sweep".into());
    let fs = fixture::reference_data()?.features()?;
    let cfg = CvConfig {
        n_permutations: 4,
        master_seed: 1,
        ..CvConfig::default()
    };
    let sweep = structure_sweep(
        &fs,
        &[1, 2, 3],
        &[10, 40],
        &fixture::reference_train_config(),
        Some(&fixture::reference_svm()),
        &cfg,
    )?;
    print!("{}", sweep.summary().to_csv()?);
    sweep.write(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
