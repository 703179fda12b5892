//! Trains a short baseline, saves it in both checkpoint formats, reloads it
//! and confirms parameters and predictions are unchanged.

use fairfuse::data::{generate_synthetic, load_checkpoint, save_checkpoint, SynthSpec};
use fairfuse::training::{infer, train, Strategy, TrainConfig};

fn main() -> fairfuse::Result<()> {
    let mut spec = SynthSpec::default();
    for g in &mut spec.subgroups {
        g.count /= 10;
    }
    let splits = generate_synthetic(&spec)?;
    let cfg = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        ..TrainConfig::default()
    };
    let model = train(Strategy::Baseline, &splits.train, &splits.val, &cfg)?.model;
    let images = splits.test.all_images()?;
    let preds = infer(&model, &images)?;

    let dir = std::env::temp_dir().join(format!("fairfuse-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    for file in ["baseline.ckpt", "baseline.json"] {
        let path = dir.join(file);
        save_checkpoint(&model, &path)?;
        let back = load_checkpoint(&path)?;
        let bit_exact = back
            .params
            .iter()
            .zip(model.params.iter())
            .all(|((na, a), (nb, b))| na == nb && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let same = infer(&back, &images)? == preds;
        let size = std::fs::metadata(&path)?.len();
        println!("{file:<14} {size:>7} bytes  bit-exact {bit_exact}  predictions unchanged {same}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
