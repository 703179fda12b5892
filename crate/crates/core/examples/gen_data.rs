//! Generates the default synthetic dataset and writes the three splits as
//! JSON lines into the directory given as the first argument (default:
//! `synthetic-data`).

use std::path::PathBuf;

use fairfuse::data::{generate_synthetic, save_dataset, SynthSpec};

fn main() -> fairfuse::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic-data".into()));
    std::fs::create_dir_all(&dir)?;
    let spec = SynthSpec::default();
    for w in spec.warnings() {
        eprintln!("warning: {w}");
    }
    let splits = generate_synthetic(&spec)?;
    for (name, ds) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let path = dir.join(format!("{name}.jsonl"));
        save_dataset(ds, &path)?;
        println!("{name}: {} samples -> {}", ds.len(), path.display());
        for (group, n) in ds.subgroup_counts() {
            println!("  {group:<6} {n}");
        }
    }
    Ok(())
}
