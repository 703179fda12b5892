use std::fs;
use std::path::Path;

use fairfuse::cli::{run, RunConfig};
use fairfuse::data::SynthSpec;
use fairfuse::training::TrainConfig;

fn invoke(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("fairfuse").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn small_config(dir: &Path) -> String {
    let mut synth = SynthSpec::default();
    for g in &mut synth.subgroups {
        g.count = 60;
    }
    let mut cfg = RunConfig {
        synth,
        train: TrainConfig {
            epochs: 3,
            warmup_epochs: 1,
            batch_size: 32,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.attribute_masks.insert("smile".into(), vec!["smiling".into()]);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn full_pipeline_gen_train_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    let runs = tmp.path().join("runs");
    let (data, runs) = (data.to_str().unwrap(), runs.to_str().unwrap());

    let (code, out, _) = invoke(&["gen-data", "--config", &cfg, "--out", data]);
    assert_eq!(code, 0);
    assert!(out.contains("train.jsonl"));

    let mut records = Vec::new();
    for strategy in ["baseline", "itm", "fusion"] {
        let (code, out, err) = invoke(&["train", "--config", &cfg, "--strategy", strategy, "--data", data, "--out", runs]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("best epoch"));
        let ckpt = Path::new(runs).join(format!("{strategy}.ckpt"));
        assert!(ckpt.exists());
        assert!(Path::new(runs).join(format!("{strategy}.history.jsonl")).exists());

        let (code, out, err) = invoke(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data, "--out", runs]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("DoB"));
        let preds = fs::read_to_string(Path::new(runs).join(format!("{strategy}.predictions.jsonl"))).unwrap();
        assert_eq!(preds.lines().count(), 6 * 60 * 15 / 100);
        records.push(Path::new(runs).join(format!("{strategy}.report.jsonl")).to_str().unwrap().to_owned());
    }

    let mut args = vec!["report", "--dob-mode", "sample"];
    args.extend(records.iter().map(String::as_str));
    let (code, out, err) = invoke(&args);
    assert_eq!(code, 0, "{err}");
    for name in ["baseline", "itm", "fusion", "Max/Min"] {
        assert!(out.contains(name), "{out}");
    }
}

#[test]
fn gen_data_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let dirs = ["a", "b", "c"].map(|d| tmp.path().join(d).to_str().unwrap().to_owned());
    for (dir, seed) in dirs.iter().zip(["5", "5", "6"]) {
        assert_eq!(invoke(&["gen-data", "--config", &cfg, "--seed", seed, "--out", dir]).0, 0);
    }
    let read = |d: &str| fs::read(Path::new(d).join("train.jsonl")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    assert_ne!(read(&dirs[0]), read(&dirs[2]));
}

#[test]
fn attribute_mask_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data").to_str().unwrap().to_owned();
    let runs = tmp.path().join("runs").to_str().unwrap().to_owned();
    assert_eq!(invoke(&["gen-data", "--config", &cfg, "--out", &data]).0, 0);
    for mask in ["all", "none", "smile"] {
        let (code, _, err) = invoke(&[
            "train", "--config", &cfg, "--strategy", "fusion", "--attr-mask", mask, "--data", &data, "--out", &runs,
        ]);
        assert_eq!(code, 0, "{mask}: {err}");
    }
    let (code, _, err) = invoke(&["train", "--config", &cfg, "--strategy", "fusion", "--attr-mask", "nope", "--data", &data, "--out", &runs]);
    assert_eq!(code, 2);
    assert!(err.contains("nope"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(invoke(&["frobnicate"]).0, 2);
    assert_eq!(invoke(&[]).0, 2);
    assert_eq!(invoke(&["train", "--strategy", "sideways"]).0, 2);
    assert_eq!(invoke(&["train", "--data", "x", "--out", "y"]).0, 2);

    let mut cfg = RunConfig::default();
    cfg.synth.subgroups[0].flip_prob = 0.6;
    let path = tmp.path().join("bad.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = invoke(&["gen-data", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("flip_prob"), "{err}");

    fs::write(&path, r#"{"train": {"epochs": 5, "bogus": 1}}"#).unwrap();
    assert_eq!(invoke(&["gen-data", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 2);
}

#[test]
fn missing_files_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("nowhere").to_str().unwrap().to_owned();
    let out = tmp.path().join("out").to_str().unwrap().to_owned();
    let (code, _, err) = invoke(&["train", "--strategy", "baseline", "--data", &nowhere, "--out", &out]);
    assert_eq!(code, 3);
    assert!(err.contains("train.jsonl"), "{err}");
    let ckpt = tmp.path().join("missing.ckpt").to_str().unwrap().to_owned();
    assert_eq!(invoke(&["eval", "--checkpoint", &ckpt, "--data", &nowhere, "--out", &out]).0, 3);
    let garbage = tmp.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(invoke(&["eval", "--checkpoint", garbage.to_str().unwrap(), "--data", &nowhere, "--out", &out]).0, 3);
}

#[test]
fn gradcheck_passes_and_names_an_injected_fault() {
    let (code, out, _) = invoke(&["gradcheck", "--points", "1"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("PASS"));
    let (code, out, _) = invoke(&["gradcheck", "--points", "1", "--inject-fault", "sigmoid"]);
    assert_eq!(code, 4);
    assert!(out.contains("suspect backward rule: sigmoid"), "{out}");
    assert_eq!(invoke(&["gradcheck", "--inject-fault", "nonsense"]).0, 2);
}

#[test]
fn compare_writes_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("cmp").to_str().unwrap().to_owned();
    let (code, text, err) = invoke(&["compare", "--config", &cfg, "--seeds", "2", "--out", &out]);
    assert_eq!(code, 0, "{err}");
    assert!(text.contains("mean over 2 seeds"), "{text}");
    for f in ["seeds.jsonl", "compare.report.jsonl", "compare.txt"] {
        assert!(Path::new(&out).join(f).exists(), "{f}");
    }
    let (code, table, _) = invoke(&["report", Path::new(&out).join("compare.report.jsonl").to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(table.contains("fusion"));
}
