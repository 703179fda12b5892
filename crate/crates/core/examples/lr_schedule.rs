//! Learning-rate schedule: linear warmup followed by cosine decay.

use fairfuse::training::{lr_at, TrainConfig};

fn main() -> fairfuse::Result<()> {
    let cfg = TrainConfig::default();
    println!("warmup {} epochs, {} epochs total", cfg.warmup_epochs, cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, &cfg)?;
        let bar = "#".repeat((lr / cfg.lr_peak * 50.0).round() as usize);
        println!("{epoch:>3} {lr:>10.3e} {bar}");
    }
    Ok(())
}
