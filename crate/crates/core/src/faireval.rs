//! Fairness metrics over per-subgroup accuracies and comparative tables.
//! Accuracies are percents throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub subgroup: String,
    pub true_class: usize,
    pub predicted_class: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub records: Vec<PredictionRecord>,
}

impl PredictionLog {
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if r.subgroup.is_empty() {
                return Err(Error::InvalidArgument(format!("record `{}` has an empty subgroup", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate record id `{}`", r.id)));
            }
        }
        Ok(Self { records })
    }

    /// Pairs each sample of `dataset` with the matching prediction.
    pub fn from_predictions(dataset: &Dataset, predictions: &[usize]) -> Result<Self> {
        if predictions.len() != dataset.len() {
            return Err(Error::Dimension {
                context: "predictions".into(),
                expected: dataset.len(),
                found: predictions.len(),
            });
        }
        Self::new(
            dataset
                .samples
                .iter()
                .zip(predictions)
                .map(|(s, &p)| PredictionRecord {
                    id: s.id.clone(),
                    subgroup: s.subgroup.clone(),
                    true_class: s.class_label,
                    predicted_class: p,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DobMode {
    /// Divides by n.
    #[default]
    Population,
    /// Divides by n − 1.
    Sample,
}

/// `(correct, total)` per subgroup.
fn tally(log: &PredictionLog) -> BTreeMap<&str, (usize, usize)> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &log.records {
        let c = counts.entry(r.subgroup.as_str()).or_default();
        c.0 += usize::from(r.true_class == r.predicted_class);
        c.1 += 1;
    }
    counts
}

/// `100 · correct / total` for every subgroup present in the log, and for
/// each of `expected` (which must all be present).
pub fn subgroup_accuracy_with(log: &PredictionLog, expected: &[String]) -> Result<BTreeMap<String, f64>> {
    let counts = tally(log);
    for name in expected {
        if !counts.contains_key(name.as_str()) {
            return Err(Error::InvalidArgument(format!("subgroup `{name}` has no records")));
        }
    }
    Ok(counts
        .into_iter()
        .map(|(g, (c, n))| (g.to_string(), 100.0 * c as f64 / n as f64))
        .collect())
}

pub fn subgroup_accuracy(log: &PredictionLog) -> Result<BTreeMap<String, f64>> {
    subgroup_accuracy_with(log, &[])
}

pub fn degree_of_bias(accuracies: &[f64], mode: DobMode) -> Result<f64> {
    let n = accuracies.len();
    let denom = match mode {
        DobMode::Population if n >= 1 => n as f64,
        DobMode::Sample if n >= 2 => (n - 1) as f64,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{mode:?} degree of bias needs more than {n} accuracies"
            )))
        }
    };
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let ss: f64 = accuracies.iter().map(|a| (a - mean).powi(2)).sum();
    Ok((ss / denom).sqrt())
}

pub fn max_min_ratio(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::InvalidArgument("max/min of no accuracies".into()));
    }
    let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::InvalidArgument(format!("max/min undefined with minimum accuracy {min}")));
    }
    Ok(max / min)
}

/// `(micro, macro)`: pooled accuracy and the unweighted subgroup mean.
pub fn overall_accuracy(log: &PredictionLog) -> Result<(f64, f64)> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty prediction log".into()));
    }
    let correct = log.records.iter().filter(|r| r.true_class == r.predicted_class).count();
    let micro = 100.0 * correct as f64 / log.len() as f64;
    let per = subgroup_accuracy(log)?;
    let macro_ = per.values().sum::<f64>() / per.len() as f64;
    Ok((micro, macro_))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub per_subgroup_accuracy: BTreeMap<String, f64>,
    pub overall_micro: f64,
    pub overall_macro: f64,
    pub dob_population: f64,
    pub dob_sample: Option<f64>,
    /// `None` when some subgroup is at 0%.
    pub max_min_ratio: Option<f64>,
}

impl FairnessReport {
    pub fn from_log(log: &PredictionLog) -> Result<Self> {
        Self::from_log_with(log, &[])
    }

    /// Like [`FairnessReport::from_log`], but every subgroup in `expected`
    /// must have at least one record.
    pub fn from_log_with(log: &PredictionLog, expected: &[String]) -> Result<Self> {
        let per = subgroup_accuracy_with(log, expected)?;
        let (micro, macro_) = overall_accuracy(log)?;
        let accs: Vec<f64> = per.values().copied().collect();
        Ok(Self {
            overall_micro: micro,
            overall_macro: macro_,
            dob_population: degree_of_bias(&accs, DobMode::Population)?,
            dob_sample: degree_of_bias(&accs, DobMode::Sample).ok(),
            max_min_ratio: max_min_ratio(&accs).ok(),
            per_subgroup_accuracy: per,
        })
    }

    pub fn dob(&self, mode: DobMode) -> Option<f64> {
        match mode {
            DobMode::Population => Some(self.dob_population),
            DobMode::Sample => self.dob_sample,
        }
    }

    /// Largest minus smallest subgroup accuracy.
    pub fn gap(&self) -> f64 {
        let v = self.per_subgroup_accuracy.values();
        v.clone().copied().fold(f64::NEG_INFINITY, f64::max) - v.copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub model: String,
    pub report: FairnessReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedReport {
    pub table: String,
    /// One JSON line per model.
    pub record: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Fixed-width comparison table plus a lossless machine record. `*` marks
/// the best value of each metric column.
pub fn render_report(reports: &[NamedReport], mode: DobMode) -> Result<RenderedReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to render".into()))?;
    let groups: Vec<&String> = first.report.per_subgroup_accuracy.keys().collect();
    for r in &reports[1..] {
        let other: Vec<&String> = r.report.per_subgroup_accuracy.keys().collect();
        if other != groups {
            return Err(Error::InvalidArgument(format!(
                "model `{}` reports subgroups {other:?}, expected {groups:?}",
                r.model
            )));
        }
    }

    let best = |vals: Vec<Option<f64>>, lower: bool| -> Option<f64> {
        vals.into_iter()
            .flatten()
            .reduce(|a, b| if (b < a) == lower && b != a { b } else { a })
    };
    let best_maxmin = best(reports.iter().map(|r| r.report.max_min_ratio).collect(), true);
    let best_overall = best(reports.iter().map(|r| Some(r.report.overall_micro)).collect(), false);
    let best_dob = best(reports.iter().map(|r| r.report.dob(mode)).collect(), true);
    let cell = |v: Option<f64>, b: Option<f64>| {
        let flag = if v.is_some() && v == b { "*" } else { " " };
        format!("{}{flag}", fmt_opt(v))
    };

    let name_w = reports.iter().map(|r| r.model.chars().count()).max().unwrap_or(0).max(5);
    let col_w = groups.iter().map(|g| g.chars().count()).max().unwrap_or(0).max(9);
    let mut table = String::new();
    write!(table, "{:<name_w$}", "model").unwrap();
    for g in &groups {
        write!(table, " {g:>col_w$}").unwrap();
    }
    writeln!(table, " {:>col_w$} {:>col_w$} {:>col_w$}", "Max/Min ↓", "Overall ↑", "DoB ↓").unwrap();
    for r in reports {
        write!(table, "{:<name_w$}", r.model).unwrap();
        for acc in r.report.per_subgroup_accuracy.values() {
            write!(table, " {:>col_w$}", format!("{acc:.3} ")).unwrap();
        }
        writeln!(
            table,
            " {:>col_w$} {:>col_w$} {:>col_w$}",
            cell(r.report.max_min_ratio, best_maxmin),
            cell(Some(r.report.overall_micro), best_overall),
            cell(r.report.dob(mode), best_dob),
        )
        .unwrap();
    }

    let mut record = String::new();
    for r in reports {
        record.push_str(&serde_json::to_string(r)?);
        record.push('\n');
    }
    Ok(RenderedReport { table, record })
}

pub fn parse_report_record(record: &str) -> Result<Vec<NamedReport>> {
    record
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
