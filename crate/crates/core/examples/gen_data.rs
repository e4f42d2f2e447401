//! Generate the synthetic reference cohort, write it to disk and look at one
//! subject before and after preprocessing.
//!
//! cargo run --release --example gen_data -- [OUT_DIR]

use std::path::PathBuf;

use connlab::connectivity::{load_dataset, save_dataset};
use connlab::fixture;

fn main() -> connlab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "out/gen_data".into());
    let cfg = fixture::reference_config();
    let data = fixture::reference_data()?;
    println!(
        "{} subjects, {} nodes ({} input features), classes {:?} with counts {:?}",
        data.len(),
        data.n_nodes(),
        data.input_dim(),
        data.class_names(),
        data.class_counts()
    );
    println!(
        "effect {} over {} blocks, noise sd {}",
        cfg.class_effect_size, cfg.n_effect_blocks, cfg.noise_sd
    );

    let first = &data.records()[0];
    let raw = first.matrix.vectorize();
    let z = first.matrix.preprocess()?;
    println!("subject {} (label {})", first.subject_id, first.label);
    println!("  raw r[0..4]  {:?}", &raw[..4]);
    println!("  model input  {:?}", &z[..4]);

    let manifest = save_dataset(&data, &out)?;
    let back = load_dataset(&manifest, None)?;
    assert_eq!(back, data);
    println!("wrote {} and read it back unchanged", manifest.display());
    Ok(())
}
