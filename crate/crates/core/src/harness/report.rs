use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::run::{RunResult, METRICS_FILE, RESULT_FILE};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::train::MetricsRecord;
use crate::verify::{run_suite, standard_cases, GradRow};

/// Parses a metrics CSV written by `train`.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MetricsRecord::CSV_HEADER) {
        return Err(Error::format(path, "line 1", format!("expected header {}", MetricsRecord::CSV_HEADER)));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = |what: &str| Error::format(path, format!("line {}", n + 2), format!("bad {what}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("column count"));
            }
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(|_| bad("epoch"))?,
                split: f[1].parse().map_err(|_| bad("split"))?,
                task: f[2].parse().map_err(|_| bad("task"))?,
                loss: f[3].parse().map_err(|_| bad("loss"))?,
                accuracy: f[4].parse().map_err(|_| bad("accuracy"))?,
            })
        })
        .collect()
}

pub fn read_result(run_dir: &Path) -> Result<RunResult> {
    let path = run_dir.join(RESULT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("line {}", e.line()), e.to_string()))
}

/// Run directories among `inputs`, looking one level down for directories
/// that are not runs themselves.
pub fn find_runs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for input in inputs {
        if input.join(RESULT_FILE).is_file() {
            runs.push(input.clone());
            continue;
        }
        let entries = fs::read_dir(input).map_err(|e| Error::io(input, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(RESULT_FILE).is_file())
            .collect();
        found.sort();
        runs.extend(found);
    }
    if runs.is_empty() {
        return Err(Error::Data("no run directories with a result.json found".into()));
    }
    Ok(runs)
}

/// Mean test accuracy per task under single-task and multitask training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonRow {
    pub single: Option<f64>,
    pub single_runs: usize,
    pub mtl: Option<f64>,
    pub mtl_runs: usize,
}

impl ComparisonRow {
    pub fn delta(&self) -> Option<f64> {
        Some(self.mtl? - self.single?)
    }
}

pub struct Report {
    pub runs: usize,
    pub comparison: BTreeMap<Task, ComparisonRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<6} {:>10} {:>10} {:>10}\n", "task", "single", "mtl", "delta");
        for (task, row) in &self.comparison {
            let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let delta = row.delta().map_or_else(|| "-".to_string(), |d| format!("{d:+.4}"));
            let _ = writeln!(out, "{:<6} {:>10} {:>10} {:>10}", task, show(row.single), show(row.mtl), delta);
        }
        out
    }
}

/// Writes `curves.csv` (every metrics row, tagged by run) and `summary.csv`
/// (single-task vs multitask test accuracy) into `out`.
pub fn export_report(inputs: &[PathBuf], out: &Path) -> Result<Report> {
    let runs = find_runs(inputs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut curves = String::from("run,mode,epoch,split,task,loss,accuracy\n");
    let mut sums: BTreeMap<(Task, bool), (f64, usize)> = BTreeMap::new();
    for run in &runs {
        let result = read_result(run)?;
        let mode: Mode = result.mode.parse()?;
        let name = run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned());
        for r in read_metrics(&run.join(METRICS_FILE))? {
            curves.push_str(&format!("{name},{mode},{}\n", r.csv_row()));
        }
        for (task, score) in &result.test {
            let task: Task = task.parse()?;
            let e = sums.entry((task, mode == Mode::Mtl)).or_default();
            e.0 += score.accuracy;
            e.1 += 1;
        }
    }
    let mut comparison: BTreeMap<Task, ComparisonRow> = BTreeMap::new();
    for ((task, mtl), (sum, n)) in sums {
        let row = comparison.entry(task).or_default();
        if mtl {
            row.mtl = Some(sum / n as f64);
            row.mtl_runs = n;
        } else {
            row.single = Some(sum / n as f64);
            row.single_runs = n;
        }
    }
    let mut summary = String::from("task,single_accuracy,mtl_accuracy,delta,single_runs,mtl_runs\n");
    for (task, row) in &comparison {
        let _ = writeln!(
            summary,
            "{task},{},{},{},{},{}",
            cell(row.single),
            cell(row.mtl),
            cell(row.delta()),
            row.single_runs,
            row.mtl_runs
        );
    }
    for (file, body) in [("curves.csv", curves), ("summary.csv", summary)] {
        let path = out.join(file);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(Report { runs: runs.len(), comparison })
}

pub struct GradReport {
    pub rows: Vec<GradRow>,
    pub elapsed: Duration,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(GradRow::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradRow> {
        self.rows.iter().filter(|r| !r.passed())
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>11}  {:>9}  {:>6}  status\n", "case", "max rel err", "tolerance", "coords");
        for r in &self.rows {
            let status = match (&r.error, r.passed()) {
                (Some(e), _) => format!("ERROR {e}"),
                (None, true) => "pass".to_string(),
                (None, false) => "FAIL".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>11.3e}  {:>9.0e}  {:>6}  {status}",
                r.name, r.max_rel_error, r.tolerance, r.coordinates
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(out, "{} of {} rows passed in {:.1?}", self.rows.len() - failed, self.rows.len(), self.elapsed);
        for r in self.failures() {
            let at = r.worst.as_ref().map_or_else(String::new, |(name, i)| format!(" at {name}[{i}]"));
            let _ = writeln!(
                out,
                "failed: {} max rel error {:.3e}{at} (analytic {:.6e}, numeric {:.6e})",
                r.name, r.max_rel_error, r.worst_values.0, r.worst_values.1
            );
        }
        out
    }
}

/// Runs the 64-bit finite-difference suite.
pub fn cmd_gradcheck(seed: u64) -> Result<GradReport> {
    let start = Instant::now();
    let rows = run_suite(standard_cases(seed)?);
    Ok(GradReport { rows, elapsed: start.elapsed() })
}
