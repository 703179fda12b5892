use fairfuse::data::{generate_synthetic, SubgroupSpec, SynthSpec};
use fairfuse::training::{
    accuracy, component_names, load_history, lr_at, save_history, train, Strategy, TrainConfig,
};

fn easy_spec() -> SynthSpec {
    let subgroups = ["x", "y"]
        .iter()
        .flat_map(|g| {
            (0..2).map(move |c| SubgroupSpec {
                name: format!("{g}{c}"),
                count: 300,
                class_prior: if c == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                separation: 4.0,
                noise: 0.3,
                offset: 0.0,
                flip_prob: 0.0,
            })
        })
        .collect();
    SynthSpec {
        subgroups,
        ..SynthSpec::default()
    }
}

#[test]
fn every_strategy_learns_a_separable_problem() {
    let splits = generate_synthetic(&easy_spec()).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        warmup_epochs: 2,
        batch_size: 32,
        ..TrainConfig::default()
    };
    for s in Strategy::ALL {
        let out = train(s, &splits.train, &splits.val, &cfg).unwrap();
        let acc = accuracy(&out.model, &splits.test).unwrap();
        assert!(acc >= 95.0, "{s}: {acc}");
        let first = &out.history[0];
        assert!(out.history.last().unwrap().total_loss < first.total_loss, "{s}");
        let names: Vec<&str> = first.components.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, component_names(s), "{s}");
    }
}

#[test]
fn early_stopping_returns_the_best_epoch() {
    let splits = generate_synthetic(&easy_spec()).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        warmup_epochs: 1,
        batch_size: 16,
        early_stop_patience: 2,
        ..TrainConfig::default()
    };
    let out = train(Strategy::Baseline, &splits.train, &splits.val, &cfg).unwrap();
    let best = out
        .history
        .iter()
        .map(|r| r.val_accuracy)
        .fold(f64::MIN, f64::max);
    assert_eq!(out.history[out.best_epoch].val_accuracy, best);
    assert!((accuracy(&out.model, &splits.val).unwrap() - best).abs() < 1e-9);
    if out.stopped_early {
        assert!(out.history.len() < cfg.epochs);
    }
}

#[test]
fn history_round_trips_through_jsonl() {
    let splits = generate_synthetic(&easy_spec()).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 1,
        ..TrainConfig::default()
    };
    let out = train(Strategy::Fusion, &splits.train, &splits.val, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.jsonl");
    save_history(&out.history, &path).unwrap();
    assert_eq!(load_history(&path).unwrap(), out.history);
}

#[test]
fn schedule_is_monotone_in_each_phase() {
    let cfg = TrainConfig::default();
    let lrs: Vec<f64> = (0..cfg.epochs).map(|e| lr_at(e, &cfg).unwrap()).collect();
    assert!(lrs[..=cfg.warmup_epochs].windows(2).all(|w| w[0] < w[1]));
    assert!(lrs[cfg.warmup_epochs..].windows(2).all(|w| w[0] > w[1]));
    assert!(lr_at(cfg.epochs, &cfg).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let splits = generate_synthetic(&easy_spec()).unwrap();
    for cfg in [
        TrainConfig { warmup_epochs: 40, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { attribute_keep: Some(vec!["no_such_attribute".into()]), ..TrainConfig::default() },
    ] {
        let e = train(Strategy::Baseline, &splits.train, &splits.val, &cfg).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{e}");
    }
}
