//! Caption attribute ablation: trains fusion with only a subset of caption
//! attributes visible and compares the image-only fairness of each run.

use fairfuse::data::{generate_synthetic, SynthSpec};
use fairfuse::faireval::{render_report, DobMode, NamedReport};
use fairfuse::study::evaluate;
use fairfuse::training::{train, Strategy, TrainConfig};

fn main() -> fairfuse::Result<()> {
    let splits = generate_synthetic(&SynthSpec::default())?;
    let subsets: [(&str, Option<Vec<String>>); 4] = [
        ("all", None),
        ("none", Some(vec![])),
        ("smiling", Some(vec!["smiling".into()])),
        ("hair", Some(vec!["bangs".into(), "wavy_hair".into()])),
    ];
    let mut rows = Vec::new();
    for (name, keep) in subsets {
        let cfg = TrainConfig {
            attribute_keep: keep,
            ..TrainConfig::default()
        };
        let model = train(Strategy::Fusion, &splits.train, &splits.val, &cfg)?.model;
        let (_, report) = evaluate(&model, &splits.test)?;
        rows.push(NamedReport { model: format!("fusion/{name}"), report });
    }
    print!("{}", render_report(&rows, DobMode::Population)?.table);
    Ok(())
}
