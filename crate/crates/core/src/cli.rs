//! Command-line front end. One JSON config file plus flag overrides; flags
//! win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_checkpoint, load_dataset, save_checkpoint, save_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::faireval::{parse_report_record, render_report, DobMode, NamedReport};
use crate::gradsuite::{run_grad_suite, SuiteOptions};
use crate::study::{evaluate, run_study, thread_cap, StudyConfig};
use crate::tensor::OP_NAMES;
use crate::training::{save_history, train, Strategy, TrainConfig};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Everything a command may read from the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub strategy: Option<Strategy>,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Name of the attribute subset to keep in captions.
    pub attr_mask: Option<String>,
    /// Named attribute subsets selectable with `--attr-mask`.
    pub attribute_masks: BTreeMap<String, Vec<String>>,
    /// Seeds for `compare`; empty means 0..5.
    pub seeds: Vec<u64>,
    pub dob_mode: DobMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Caption attributes selected by `name`. `all` keeps everything and
    /// `none` keeps only the class slots.
    pub fn resolve_mask(&self, name: &str) -> Result<Option<Vec<String>>> {
        match name {
            "all" => Ok(None),
            "none" => Ok(Some(Vec::new())),
            _ => self
                .attribute_masks
                .get(name)
                .cloned()
                .map(Some)
                .ok_or_else(|| Error::Config(format!("unknown attribute mask `{name}`"))),
        }
    }
}

#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// JSON run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,
    /// Attribute subset kept in captions: `all`, `none`, or a name from the config.
    #[arg(long = "attr-mask", global = true)]
    pub attr_mask: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test splits of the synthetic dataset.
    GenData,
    /// Train one strategy; writes a checkpoint and a per-epoch history.
    Train {
        /// Directory holding the dataset splits.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Image-only evaluation of a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render report records as one comparison table.
    Report {
        /// Report record files written by `eval` or `compare`.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, value_enum)]
        dob_mode: Option<DobModeArg>,
    },
    /// Finite-difference check of every primitive and model composite.
    Gradcheck {
        /// Random points per case.
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Break one primitive's backward rule (self-test of the checker).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Generate, train every strategy, and evaluate over several seeds.
    Compare {
        /// Number of seeds, starting at `--seed` (default 0).
        #[arg(long)]
        seeds: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum DobModeArg {
    Population,
    Sample,
}

impl From<DobModeArg> for DobMode {
    fn from(m: DobModeArg) -> Self {
        match m {
            DobModeArg::Population => DobMode::Population,
            DobModeArg::Sample => DobMode::Sample,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fairfuse", version, about = "Text-guided fair image classification")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let inv = match Cli::try_parse_from(args) {
        Ok(inv) => inv,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&inv.common, &inv.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.synth.seed = s;
        cfg.train.seed = s;
    }
    if common.out.is_some() {
        cfg.out_dir = common.out.clone();
    }
    if common.strategy.is_some() {
        cfg.strategy = common.strategy;
    }
    if common.attr_mask.is_some() {
        cfg.attr_mask = common.attr_mask.clone();
    }
    if let Some(name) = cfg.attr_mask.clone() {
        cfg.train.attribute_keep = cfg.resolve_mask(&name)?;
    }
    Ok(cfg)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match path {
        Some(p) if !p.as_os_str().is_empty() => Ok(p),
        _ => Err(Error::Config(format!("{what} is required (flag or config)"))),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = required(cfg.out_dir.clone(), "--out")?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_split(dir: &Path, file: &str) -> Result<Dataset> {
    let path = dir.join(file);
    load_dataset(&path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn execute(common: &Common, command: &Command, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(common)?;
    match command {
        Command::GenData => cmd_gen_data(&cfg, out),
        Command::Train { data } => cmd_train(&cfg, data.clone(), out),
        Command::Eval { checkpoint, data } => cmd_eval(&cfg, checkpoint.clone(), data.clone(), out),
        Command::Report { records, dob_mode } => {
            cmd_report(records, dob_mode.map_or(cfg.dob_mode, DobMode::from), out)
        }
        Command::Gradcheck { points, inject_fault } => cmd_gradcheck(*points, cfg.train.seed, inject_fault.as_deref(), out),
        Command::Compare { seeds } => cmd_compare(&cfg, common.seed.unwrap_or(0), *seeds, out),
    }
}

fn cmd_gen_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    cfg.synth.validate()?;
    for w in cfg.synth.warnings() {
        writeln!(out, "warning: {w}")?;
    }
    let dir = out_dir(cfg)?;
    let splits = generate_synthetic(&cfg.synth)?;
    for (file, ds) in [(TRAIN_FILE, &splits.train), (VAL_FILE, &splits.val), (TEST_FILE, &splits.test)] {
        save_dataset(ds, &dir.join(file))?;
        let counts: Vec<String> = ds.subgroup_counts().iter().map(|(g, n)| format!("{g}={n}")).collect();
        writeln!(out, "{file}: {} samples ({})", ds.len(), counts.join(", "))?;
    }
    Ok(0)
}

fn cmd_train(cfg: &RunConfig, data: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let strategy = cfg.strategy.ok_or_else(|| Error::Config("--strategy is required".into()))?;
    cfg.train.validate()?;
    let data = required(data.or_else(|| cfg.data_dir.clone()), "--data")?;
    let trainset = load_split(&data, TRAIN_FILE)?;
    let valset = load_split(&data, VAL_FILE)?;
    let dir = out_dir(cfg)?;
    let outcome = train(strategy, &trainset, &valset, &cfg.train)?;
    let ckpt = dir.join(format!("{strategy}.ckpt"));
    let hist = dir.join(format!("{strategy}.history.jsonl"));
    save_checkpoint(&outcome.model, &ckpt)?;
    save_history(&outcome.history, &hist)?;
    for r in &outcome.history {
        writeln!(
            out,
            "epoch {:>2}  lr {:.3e}  loss {:.5}  train {:.2}%  val {:.2}%",
            r.epoch, r.lr, r.total_loss, r.train_accuracy, r.val_accuracy
        )?;
    }
    writeln!(
        out,
        "best epoch {}{}; wrote {} and {}",
        outcome.best_epoch,
        if outcome.stopped_early { " (stopped early)" } else { "" },
        ckpt.display(),
        hist.display()
    )?;
    Ok(0)
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<PathBuf>, data: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let ckpt = required(checkpoint.or_else(|| cfg.checkpoint.clone()), "--checkpoint")?;
    let data = required(data.or_else(|| cfg.data_dir.clone()), "--data")?;
    let model = load_checkpoint(&ckpt)?;
    let testset = load_split(&data, TEST_FILE)?;
    let (log, report) = evaluate(&model, &testset)?;
    let dir = out_dir(cfg)?;
    let name = model.strategy.to_string();
    let mut preds = Vec::new();
    for r in &log.records {
        serde_json::to_writer(&mut preds, r)?;
        preds.push(b'\n');
    }
    let pred_path = dir.join(format!("{name}.predictions.jsonl"));
    let report_path = dir.join(format!("{name}.report.jsonl"));
    fs::write(&pred_path, preds)?;
    let named = vec![NamedReport { model: name, report }];
    let rendered = render_report(&named, cfg.dob_mode)?;
    fs::write(&report_path, &rendered.record)?;
    write!(out, "{}", rendered.table)?;
    writeln!(out, "wrote {} and {}", pred_path.display(), report_path.display())?;
    Ok(0)
}

fn cmd_report(records: &[PathBuf], mode: DobMode, out: &mut dyn Write) -> Result<i32> {
    let mut reports = Vec::new();
    for path in records {
        let text = fs::read_to_string(path)?;
        reports.extend(parse_report_record(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?);
    }
    write!(out, "{}", render_report(&reports, mode)?.table)?;
    Ok(0)
}

fn cmd_gradcheck(points: usize, seed: u64, fault: Option<&str>, out: &mut dyn Write) -> Result<i32> {
    let fault = match fault {
        None => None,
        Some(name) => Some(
            *OP_NAMES
                .iter()
                .find(|&&op| op == name)
                .ok_or_else(|| Error::Config(format!("unknown primitive `{name}`; one of {}", OP_NAMES.join(", "))))?,
        ),
    };
    if points == 0 {
        return Err(Error::Config("--points must be ≥ 1".into()));
    }
    let report = run_grad_suite(&SuiteOptions {
        points,
        seed,
        fault,
        ..SuiteOptions::default()
    })?;
    write!(out, "{}", report.summary())?;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(
        out,
        "{verdict}: {} points, max rel err {:.3e} (tolerance {:.0e})",
        report.total_points(),
        report.max_error(),
        report.tolerance
    )?;
    Ok(if report.passed() { 0 } else { 4 })
}

fn cmd_compare(cfg: &RunConfig, base: u64, count: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    let seeds = match count {
        Some(n) => (base..base + n).collect(),
        None if cfg.seeds.is_empty() => (base..base + 5).collect(),
        None => cfg.seeds.clone(),
    };
    let study = StudyConfig {
        synth: cfg.synth.clone(),
        train: cfg.train.clone(),
        seeds,
        strategies: Strategy::ALL.to_vec(),
    };
    let outcome = run_study(&study, thread_cap()?)?;
    let text = outcome.render(cfg.dob_mode)?;
    write!(out, "{text}")?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        let mut records = String::new();
        for s in &outcome.seeds {
            records += &serde_json::to_string(s)?;
            records.push('\n');
        }
        fs::write(dir.join("seeds.jsonl"), records)?;
        fs::write(dir.join("compare.report.jsonl"), render_report(&outcome.aggregate(), cfg.dob_mode)?.record)?;
        fs::write(dir.join("compare.txt"), &text)?;
    }
    writeln!(out)?;
    for s in [Strategy::Itm, Strategy::Fusion] {
        let v = outcome.verdicts(s);
        let holds = v.iter().filter(|v| v.holds()).count();
        writeln!(out, "{s}: DoB ≤ baseline with accuracy within 2 points on {holds} of {} seeds", v.len())?;
    }
    Ok(0)
}
