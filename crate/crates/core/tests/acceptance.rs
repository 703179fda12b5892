//! End-to-end acceptance checks, one line per criterion. Runs as a plain
//! binary so every verdict is printed; exits non-zero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairfuse::data::{generate_synthetic, read_checkpoint, write_checkpoint, CheckpointFormat, SynthSpec};
use fairfuse::faireval::{degree_of_bias, max_min_ratio, DobMode};
use fairfuse::fusion::{self, AttentionParams, TextGenParams};
use fairfuse::gradsuite::{run_grad_suite, SuiteOptions};
use fairfuse::losses::{cross_entropy, focal_loss, info_nce};
use fairfuse::params::ParamStore;
use fairfuse::study::{run_study, thread_cap, StudyConfig};
use fairfuse::tensor::{Graph, Tensor};
use fairfuse::training::{infer, lr_at, train, write_history, Strategy, TrainConfig};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracles() -> Verdict {
    let t5 = [68.79, 93.513, 98.268, 83.640, 91.150, 88.304, 90.494, 84.130];
    let t4 = [96.374, 96.231, 97.675, 86.670, 99.116, 92.426];
    let t3 = [97.33, 99.151];
    let checks = [
        ("8-group DoB", degree_of_bias(&t5, DobMode::Population).unwrap(), 8.300),
        ("8-group Max/Min", max_min_ratio(&t5).unwrap(), 1.428),
        ("6-group DoB", degree_of_bias(&t4, DobMode::Population).unwrap(), 4.147),
        ("6-group Max/Min", max_min_ratio(&t4).unwrap(), 1.143),
        ("2-group Max/Min", max_min_ratio(&t3).unwrap(), 1.019),
        ("2-group sample DoB", degree_of_bias(&t3, DobMode::Sample).unwrap(), 1.288),
    ];
    let worst = checks.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let detail: Vec<String> = checks.iter().map(|(n, got, _)| format!("{n} {got:.4}")).collect();
    ensure(worst <= 0.002, format!("{}; worst deviation {worst:.5}", detail.join(", ")))
}

fn grad_suite() -> Verdict {
    let report = run_grad_suite(&SuiteOptions {
        points: 4,
        seed: 2024,
        eps: 1e-5,
        tolerance: 1e-4,
        fault: None,
    })
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "{} cases, {} random points, max rel err {:.2e}",
        report.cases.len(),
        report.total_points(),
        report.max_error()
    );
    ensure(report.passed() && report.total_points() >= 100, detail)
}

fn loss_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut focal_gap: f64 = 0.0;
    for _ in 0..1000 {
        let p: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
        let y: u8 = rng.gen_range(0..2);
        let p_t = if y == 1 { p } else { 1.0 - p };
        focal_gap = focal_gap.max((focal_loss(p_t, 0.0).unwrap() - cross_entropy(p, y).unwrap()).abs());
    }
    let mut nce_gap: f64 = 0.0;
    for k in 1..=127usize {
        let s: f64 = rng.gen_range(-3.0..3.0);
        let t: f64 = rng.gen_range(0.1..2.0);
        nce_gap = nce_gap.max((info_nce(s, &vec![s; k], t).unwrap() - ((k + 1) as f64).ln()).abs());
    }
    let splits = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        ..TrainConfig::default()
    };
    let mut history_gap: f64 = 0.0;
    for s in Strategy::ALL {
        let out = train(s, &splits.train, &splits.val, &cfg).map_err(|e| e.to_string())?;
        for r in &out.history {
            history_gap = history_gap.max((r.total_loss - r.recomputed_total()).abs());
        }
    }
    ensure(
        focal_gap <= 1e-12 && nce_gap <= 1e-12 && history_gap <= 1e-10,
        format!("focal(γ=0) vs CE {focal_gap:.1e}, uniform InfoNCE vs ln(K+1) {nce_gap:.1e}, history totals {history_gap:.1e}"),
    )
}

fn architectural_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    fusion::init_attention(&mut store, "attn", 8, 2, &mut rng).unwrap();
    fusion::init_text_gen(&mut store, "gen", 8, &mut rng);
    for name in ["gen.layer3.weight", "gen.layer3.bias"] {
        let t = store.get_mut(name).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let a = Tensor::uniform(&[3, 5, 8], 2.0, &mut rng);
    let g = Graph::new();
    let p = store.bind(&g, false);
    let attn = AttentionParams::bind(&p, "attn", 2).unwrap();
    let x = g.constant(a.clone());
    let mmr = fusion::mmr(&attn, x, x).unwrap().value();
    let (single, weights) = fusion::attention_with_weights(&attn, x, x, x).unwrap();
    let twice = single.value();
    let mmr_gap = mmr.data().iter().zip(twice.data()).map(|(m, s)| (m - 2.0 * s).abs()).fold(0.0, f64::max);
    let mut row_gap: f64 = 0.0;
    for w in &weights {
        let w = w.value();
        for row in w.data().chunks(w.shape()[w.ndim() - 1]) {
            row_gap = row_gap.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let generator = TextGenParams::bind(&p, "gen").unwrap();
    let flat = g.constant(a.reshape(&[15, 8]).unwrap());
    let out = fusion::text_feat_gen(&generator, flat).unwrap().value();
    let identity = out.data().iter().zip(flat.value().data()).all(|(o, i)| o.to_bits() == i.to_bits());
    ensure(
        mmr_gap <= 1e-12 && row_gap <= 1e-12 && identity,
        format!("mmr(a,a) − 2·attention {mmr_gap:.1e}, attention row sums {row_gap:.1e}, zero-residual generator bit-exact {identity}"),
    )
}

fn bias_reduction() -> Verdict {
    let start = Instant::now();
    let threads = thread_cap().map_err(|e| e.to_string())?;
    let outcome = run_study(&StudyConfig::default(), threads).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let gap = outcome.min_baseline_gap().unwrap_or(0.0);
    let mut ok = gap >= 5.0 && elapsed < Duration::from_secs(30 * 60);
    let mut parts = vec![format!("min baseline gap {gap:.1}")];
    for s in [Strategy::Itm, Strategy::Fusion] {
        let v = outcome.verdicts(s);
        let holds = v.iter().filter(|v| v.holds()).count();
        ok &= holds >= 4;
        let deltas: Vec<String> = v
            .iter()
            .map(|v| format!("{:+.2}/{:+.1}", v.dob_delta, v.micro_delta))
            .collect();
        parts.push(format!("{s} holds on {holds}/5 (ΔDoB/Δacc {})", deltas.join(" ")));
    }
    parts.push(format!("{:.0?} on {threads} threads", elapsed));
    ensure(ok, parts.join("; "))
}

fn text_independence() -> Verdict {
    let splits = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        ..TrainConfig::default()
    };
    let model = train(Strategy::Fusion, &splits.train, &splits.val, &cfg)
        .map_err(|e| e.to_string())?
        .model;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = infer(&model, &splits.test.all_images().unwrap()).unwrap();
    let zeroed = splits.test.map_text(|_| 0.0);
    let randomized = splits.test.map_text(|_| rng.gen());
    let mut changed = 0;
    for ds in [&zeroed, &randomized] {
        let preds = infer(&model, &ds.all_images().unwrap()).unwrap();
        changed += preds.iter().zip(&base).filter(|(a, b)| a != b).count();
    }
    ensure(changed == 0, format!("{changed} of {} fusion predictions changed", 2 * base.len()))
}

fn determinism() -> Verdict {
    let splits = generate_synthetic(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 4,
        warmup_epochs: 1,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut identical = true;
    let mut roundtrip = true;
    let mut preserved = true;
    let probe = splits.test.image_matrix(&(0..100).collect::<Vec<_>>()).unwrap();
    for s in Strategy::ALL {
        let runs: Vec<_> = (0..2)
            .map(|_| train(s, &splits.train, &splits.val, &cfg).unwrap())
            .collect();
        let bytes: Vec<Vec<u8>> = runs
            .iter()
            .map(|r| {
                let mut b = Vec::new();
                write_history(&r.history, &mut b).unwrap();
                b
            })
            .collect();
        identical &= bytes[0] == bytes[1];
        for format in [CheckpointFormat::Binary, CheckpointFormat::Json] {
            let mut buf = Vec::new();
            write_checkpoint(&runs[0].model, format, &mut buf).unwrap();
            let back = read_checkpoint(&buf[..], format).unwrap();
            roundtrip &= back
                .params
                .iter()
                .zip(runs[0].model.params.iter())
                .all(|((na, a), (nb, b))| na == nb && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            preserved &= infer(&back, &probe).unwrap() == infer(&runs[0].model, &probe).unwrap();
        }
    }
    ensure(
        identical && roundtrip && preserved,
        format!("identical histories {identical}, bit-exact checkpoints {roundtrip}, probe predictions preserved {preserved}"),
    )
}

fn schedule() -> Verdict {
    let cfg = TrainConfig::default();
    let (first, peak, last) = (
        lr_at(0, &cfg).unwrap(),
        lr_at(cfg.warmup_epochs, &cfg).unwrap(),
        lr_at(cfg.epochs - 1, &cfg).unwrap(),
    );
    ensure(
        first == 1e-5 && (peak - 1e-4).abs() <= 1e-18 && (last - 1e-5).abs() <= 1e-12,
        format!("epoch 0 {first:e}, epoch {} {peak:e}, epoch {} {last:e}", cfg.warmup_epochs, cfg.epochs - 1),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("metric oracles", metric_oracles),
        ("gradient suite", grad_suite),
        ("loss identities", loss_identities),
        ("architectural identities", architectural_identities),
        ("bias reduction", bias_reduction),
        ("image-only inference", text_independence),
        ("determinism", determinism),
        ("learning-rate schedule", schedule),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = check();
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(verdict.is_err());
        println!("criterion {} {tag} {name}: {detail} [{:.1?}]", i + 1, start.elapsed());
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
