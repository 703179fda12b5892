//! Multi-seed comparison of the training strategies: generate, train,
//! evaluate image-only, and summarize per seed and across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::faireval::{render_report, DobMode, FairnessReport, NamedReport, PredictionLog};
use crate::training::{infer, train, EpochRecord, Model, Strategy, TrainConfig};

/// Environment variable capping how many seeds run at once.
pub const THREADS_ENV: &str = "FAIRFUSE_THREADS";

/// Image-only predictions over `dataset` and their fairness report. Every
/// subgroup named in the header must appear in the dataset.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<(PredictionLog, FairnessReport)> {
    if dataset.header.d_img != model.config.d_img {
        return Err(Error::Dimension {
            context: "dataset image width vs checkpoint".into(),
            expected: model.config.d_img,
            found: dataset.header.d_img,
        });
    }
    let preds = infer(model, &dataset.all_images()?)?;
    let log = PredictionLog::from_predictions(dataset, &preds)?;
    let report = FairnessReport::from_log_with(&log, &dataset.header.subgroup_names)?;
    Ok((log, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    /// Each seed drives both data generation and training.
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub report: FairnessReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub runs: Vec<StrategyRun>,
}

impl SeedOutcome {
    pub fn run(&self, strategy: Strategy) -> Option<&StrategyRun> {
        self.runs.iter().find(|r| r.strategy == strategy)
    }

    /// Strategies ordered by population DoB, lowest first.
    pub fn dob_ordering(&self) -> Vec<Strategy> {
        let mut order: Vec<&StrategyRun> = self.runs.iter().collect();
        order.sort_by(|a, b| a.report.dob_population.total_cmp(&b.report.dob_population));
        order.iter().map(|r| r.strategy).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOutcome {
    pub seeds: Vec<SeedOutcome>,
}

/// How a strategy fared against the baseline on one seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedVerdict {
    pub seed: u64,
    pub dob_delta: f64,
    pub micro_delta: f64,
}

impl SeedVerdict {
    /// DoB no worse than baseline and micro accuracy at most 2 points lower.
    pub fn holds(&self) -> bool {
        self.dob_delta <= 0.0 && self.micro_delta >= -2.0
    }
}

impl StudyOutcome {
    pub fn verdicts(&self, strategy: Strategy) -> Vec<SeedVerdict> {
        self.seeds
            .iter()
            .filter_map(|s| {
                let base = s.run(Strategy::Baseline)?;
                let other = s.run(strategy)?;
                Some(SeedVerdict {
                    seed: s.seed,
                    dob_delta: other.report.dob_population - base.report.dob_population,
                    micro_delta: other.report.overall_micro - base.report.overall_micro,
                })
            })
            .collect()
    }

    /// Smallest baseline subgroup gap (max − min accuracy) over seeds.
    pub fn min_baseline_gap(&self) -> Option<f64> {
        self.seeds
            .iter()
            .filter_map(|s| s.run(Strategy::Baseline))
            .map(|r| r.report.gap())
            .reduce(f64::min)
    }

    /// Mean of every metric over seeds, one row per strategy.
    pub fn aggregate(&self) -> Vec<NamedReport> {
        let Some(first) = self.seeds.first() else {
            return Vec::new();
        };
        first
            .runs
            .iter()
            .map(|r| r.strategy)
            .map(|strategy| {
                let reports: Vec<&FairnessReport> =
                    self.seeds.iter().filter_map(|s| s.run(strategy)).map(|r| &r.report).collect();
                let n = reports.len() as f64;
                let mean = |f: &dyn Fn(&FairnessReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
                let mean_opt = |f: &dyn Fn(&FairnessReport) -> Option<f64>| {
                    let v: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
                    v.map(|v| v.iter().sum::<f64>() / n)
                };
                let mut per: BTreeMap<String, f64> = BTreeMap::new();
                for r in &reports {
                    for (g, a) in &r.per_subgroup_accuracy {
                        *per.entry(g.clone()).or_default() += a / n;
                    }
                }
                NamedReport {
                    model: strategy.to_string(),
                    report: FairnessReport {
                        per_subgroup_accuracy: per,
                        overall_micro: mean(&|r| r.overall_micro),
                        overall_macro: mean(&|r| r.overall_macro),
                        dob_population: mean(&|r| r.dob_population),
                        dob_sample: mean_opt(&|r| r.dob_sample),
                        max_min_ratio: mean_opt(&|r| r.max_min_ratio),
                    },
                }
            })
            .collect()
    }

    /// Per-seed tables, the across-seed table, and DoB orderings.
    pub fn render(&self, mode: DobMode) -> Result<String> {
        let mut out = String::new();
        for s in &self.seeds {
            let rows: Vec<NamedReport> = s
                .runs
                .iter()
                .map(|r| NamedReport {
                    model: r.strategy.to_string(),
                    report: r.report.clone(),
                })
                .collect();
            writeln!(out, "seed {}", s.seed).unwrap();
            out += &render_report(&rows, mode)?.table;
            let order: Vec<&str> = s.dob_ordering().iter().map(|s| s.as_str()).collect();
            writeln!(out, "DoB ordering: {}\n", order.join(" < ")).unwrap();
        }
        let agg = self.aggregate();
        writeln!(out, "mean over {} seeds", self.seeds.len()).unwrap();
        out += &render_report(&agg, mode)?.table;
        let mut order: Vec<&NamedReport> = agg.iter().collect();
        order.sort_by(|a, b| a.report.dob_population.total_cmp(&b.report.dob_population));
        let names: Vec<&str> = order.iter().map(|r| r.model.as_str()).collect();
        writeln!(out, "DoB ordering: {}", names.join(" < ")).unwrap();
        Ok(out)
    }
}

pub fn run_seed(config: &StudyConfig, seed: u64) -> Result<SeedOutcome> {
    let synth = SynthSpec {
        seed,
        ..config.synth.clone()
    };
    let tc = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let splits = generate_synthetic(&synth)?;
    let mut runs = Vec::with_capacity(config.strategies.len());
    for &strategy in &config.strategies {
        let outcome = train(strategy, &splits.train, &splits.val, &tc)?;
        let (_, report) = evaluate(&outcome.model, &splits.test)?;
        runs.push(StrategyRun {
            strategy,
            report,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
            history: outcome.history,
        });
    }
    Ok(SeedOutcome { seed, runs })
}

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every seed, at most `threads` at a time. Each seed is single-threaded
/// and results are returned in seed order, so output does not depend on
/// `threads`.
pub fn run_study(config: &StudyConfig, threads: usize) -> Result<StudyOutcome> {
    config.synth.validate()?;
    config.train.validate()?;
    if config.seeds.is_empty() || config.strategies.is_empty() {
        return Err(Error::Config("a study needs at least one seed and one strategy".into()));
    }
    let threads = threads.max(1).min(config.seeds.len());
    let mut results: Vec<Option<Result<SeedOutcome>>> = (0..config.seeds.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= config.seeds.len() {
                            break done;
                        }
                        done.push((i, run_seed(config, config.seeds[i])));
                    }
                })
            })
            .collect();
        for w in workers {
            for (i, r) in w.join().expect("study worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let seeds = results
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyOutcome { seeds })
}
