//! Fairness metrics on hand-written subgroup accuracies and on a prediction
//! log: degree of bias in both modes, max/min ratio, micro/macro accuracy,
//! and the rendered comparison table.

use fairfuse::faireval::{
    degree_of_bias, max_min_ratio, render_report, DobMode, FairnessReport, NamedReport, PredictionLog,
    PredictionRecord,
};

fn main() -> fairfuse::Result<()> {
    let accs = [68.79, 93.513, 98.268, 83.640, 91.150, 88.304, 90.494, 84.130];
    println!("accuracies {accs:?}");
    println!("  DoB (population) {:.3}", degree_of_bias(&accs, DobMode::Population)?);
    println!("  DoB (sample)     {:.3}", degree_of_bias(&accs, DobMode::Sample)?);
    println!("  Max/Min          {:.3}\n", max_min_ratio(&accs)?);

    let log = |correct: &[(&str, usize, usize)]| {
        let mut records = Vec::new();
        for &(group, n, right) in correct {
            for i in 0..n {
                records.push(PredictionRecord {
                    id: format!("{group}-{i}"),
                    subgroup: group.into(),
                    true_class: 0,
                    predicted_class: usize::from(i >= right),
                });
            }
        }
        PredictionLog::new(records)
    };
    let a = FairnessReport::from_log(&log(&[("young", 200, 190), ("old", 50, 35)])?)?;
    let b = FairnessReport::from_log(&log(&[("young", 200, 180), ("old", 50, 42)])?)?;
    let rows = [
        NamedReport { model: "model_a".into(), report: a },
        NamedReport { model: "model_b".into(), report: b },
    ];
    let rendered = render_report(&rows, DobMode::Population)?;
    print!("{}", rendered.table);
    println!("\nmachine-readable record:\n{}", rendered.record);
    Ok(())
}
