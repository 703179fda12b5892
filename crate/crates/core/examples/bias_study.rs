//! Full comparison: for each seed, generate data, train baseline, ITM and
//! fusion, evaluate image-only, and print per-seed and mean tables plus the
//! per-seed verdicts against the baseline. The optional first argument sets
//! the number of seeds (default 5); FAIRFUSE_THREADS caps parallelism.

use fairfuse::faireval::DobMode;
use fairfuse::study::{run_study, thread_cap, StudyConfig};
use fairfuse::training::Strategy;

fn main() -> fairfuse::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let config = StudyConfig {
        seeds: (0..n).collect(),
        ..StudyConfig::default()
    };
    let outcome = run_study(&config, thread_cap()?)?;
    print!("{}", outcome.render(DobMode::Population)?);
    println!();
    for s in [Strategy::Itm, Strategy::Fusion] {
        for v in outcome.verdicts(s) {
            println!(
                "{s:<7} seed {} ΔDoB {:+.3} Δmicro {:+.2} {}",
                v.seed,
                v.dob_delta,
                v.micro_delta,
                if v.holds() { "holds" } else { "does not hold" }
            );
        }
    }
    Ok(())
}
