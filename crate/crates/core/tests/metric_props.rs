use proptest::prelude::*;

use fairfuse::faireval::{
    degree_of_bias, max_min_ratio, overall_accuracy, subgroup_accuracy, DobMode, FairnessReport, PredictionLog,
    PredictionRecord,
};

fn accuracies() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0f64..100.0, 2..12)
}

fn log_from(groups: &[(usize, usize)]) -> PredictionLog {
    let mut records = Vec::new();
    for (g, &(n, right)) in groups.iter().enumerate() {
        for i in 0..n {
            records.push(PredictionRecord {
                id: format!("{g}-{i}"),
                subgroup: format!("g{g}"),
                true_class: 1,
                predicted_class: usize::from(i < right),
            });
        }
    }
    PredictionLog::new(records).unwrap()
}

fn groups() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((1usize..60).prop_flat_map(|n| (Just(n), 0..=n)), 2..8)
}

proptest! {
    #[test]
    fn dob_is_translation_invariant(accs in accuracies(), shift in -50.0f64..50.0) {
        for mode in [DobMode::Population, DobMode::Sample] {
            let shifted: Vec<f64> = accs.iter().map(|a| a + shift).collect();
            let a = degree_of_bias(&accs, mode).unwrap();
            let b = degree_of_bias(&shifted, mode).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }
    }

    #[test]
    fn dob_scales_linearly(accs in accuracies(), c in 0.01f64..10.0) {
        let scaled: Vec<f64> = accs.iter().map(|a| a * c).collect();
        let a = degree_of_bias(&accs, DobMode::Population).unwrap();
        let b = degree_of_bias(&scaled, DobMode::Population).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b));
    }

    #[test]
    fn dob_is_zero_for_equal_accuracies(v in 0.0f64..100.0, n in 2usize..10) {
        prop_assert!(degree_of_bias(&vec![v; n], DobMode::Population).unwrap().abs() < 1e-12);
    }

    #[test]
    fn max_min_is_scale_invariant_and_at_least_one(accs in accuracies(), c in 0.01f64..10.0) {
        let r = max_min_ratio(&accs).unwrap();
        let scaled: Vec<f64> = accs.iter().map(|a| a * c).collect();
        prop_assert!(r >= 1.0);
        prop_assert!((max_min_ratio(&scaled).unwrap() - r).abs() <= 1e-9 * r);
    }

    #[test]
    fn micro_is_size_weighted_mean_of_subgroups(gs in groups()) {
        let log = log_from(&gs);
        let (micro, macro_) = overall_accuracy(&log).unwrap();
        let per = subgroup_accuracy(&log).unwrap();
        let total: usize = gs.iter().map(|g| g.0).sum();
        let weighted: f64 = gs
            .iter()
            .enumerate()
            .map(|(i, &(n, _))| per[&format!("g{i}")] * n as f64)
            .sum::<f64>() / total as f64;
        let mean = per.values().sum::<f64>() / per.len() as f64;
        prop_assert!((micro - weighted).abs() < 1e-9);
        prop_assert!((macro_ - mean).abs() < 1e-9);
    }

    #[test]
    fn report_round_trips_through_json(gs in groups()) {
        let report = FairnessReport::from_log(&log_from(&gs)).unwrap();
        let back: FairnessReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        prop_assert_eq!(back, report);
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(degree_of_bias(&[], DobMode::Population).is_err());
    assert!(degree_of_bias(&[80.0], DobMode::Sample).is_err());
    assert!(max_min_ratio(&[0.0, 50.0]).is_err());
    let report = FairnessReport::from_log(&log_from(&[(10, 0), (10, 10)])).unwrap();
    assert_eq!(report.max_min_ratio, None);
}
