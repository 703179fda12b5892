//! Trains the image-only baseline classifier on the default synthetic dataset and
//! prints the per-epoch history and the test fairness report.

use fairfuse::data::{generate_synthetic, SynthSpec};
use fairfuse::faireval::{render_report, DobMode, NamedReport};
use fairfuse::study::evaluate;
use fairfuse::training::{train, Strategy, TrainConfig};

fn main() -> fairfuse::Result<()> {
    let splits = generate_synthetic(&SynthSpec::default())?;
    let cfg = TrainConfig::default();
    let out = train(Strategy::Baseline, &splits.train, &splits.val, &cfg)?;
    for r in &out.history {
        let parts: Vec<String> = r.components.iter().map(|c| format!("{}={:.4}", c.name, c.value)).collect();
        println!(
            "epoch {:>2} lr {:.2e} loss {:.4} [{}] train {:.1}% val {:.1}%",
            r.epoch,
            r.lr,
            r.total_loss,
            parts.join(" "),
            r.train_accuracy,
            r.val_accuracy
        );
    }
    println!("best epoch {}, stopped early: {}\n", out.best_epoch, out.stopped_early);
    let (_, report) = evaluate(&out.model, &splits.test)?;
    let rows = [NamedReport {
        model: Strategy::Baseline.to_string(),
        report,
    }];
    print!("{}", render_report(&rows, DobMode::Population)?.table);
    Ok(())
}
