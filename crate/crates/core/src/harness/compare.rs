//! Paired A/B runs and improvement tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::pipeline::{execute, output_dir, write_artifacts, RunOptions, RunSummary};
use super::scenario::{PlannerMode, Scenario};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantStats {
    pub name: String,
    pub planner_mode: PlannerMode,
    pub mean_rms: f64,
    pub std_rms: f64,
    pub max_error: f64,
    pub collisions: usize,
    pub diverged: bool,
}

impl From<&RunSummary> for VariantStats {
    fn from(s: &RunSummary) -> Self {
        VariantStats {
            name: s.name.clone(),
            planner_mode: s.planner_mode,
            mean_rms: s.mean_rms,
            std_rms: s.std_rms,
            max_error: s.worst_max_error,
            collisions: s.collisions,
            diverged: s.diverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub ours: VariantStats,
    pub baseline: VariantStats,
    /// Percent; `None` when the baseline error is zero.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub mean_improvement: Option<f64>,
}

/// `(baseline − ours) / baseline × 100`.
pub fn improvement(baseline: f64, ours: f64) -> Option<f64> {
    (baseline > 0.0).then(|| (baseline - ours) / baseline * 100.0)
}

pub fn compare_row(label: &str, ours: &RunSummary, baseline: &RunSummary) -> ComparisonRow {
    ComparisonRow {
        label: label.to_string(),
        ours: ours.into(),
        baseline: baseline.into(),
        improvement: improvement(baseline.mean_rms, ours.mean_rms),
    }
}

impl ComparisonReport {
    pub fn new(rows: Vec<ComparisonRow>) -> Self {
        let imp: Vec<f64> = rows.iter().filter_map(|r| r.improvement).collect();
        let mean_improvement =
            (!imp.is_empty() && imp.len() == rows.len()).then(|| imp.iter().sum::<f64>() / imp.len() as f64);
        ComparisonReport {
            rows,
            mean_improvement,
        }
    }

    /// Plain-text table: one line per configuration plus the average.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(13);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>11}  {:>10}",
            "configuration", "baseline", "ours", "improvement", "collisions"
        );
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.1}%"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>11}  {:>4} / {:<4}",
                r.label,
                r.baseline.mean_rms,
                r.ours.mean_rms,
                pct(r.improvement),
                r.baseline.collisions,
                r.ours.collisions
            );
        }
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>11}", "average", "", "", pct(self.mean_improvement));
        out
    }
}

/// Paired scenarios must fly the same assembly with the same faults.
pub fn check_pair(ours: &Scenario, baseline: &Scenario) -> Result<(), HarnessError> {
    if ours.layout != baseline.layout || ours.faults != baseline.faults || ours.events != baseline.events {
        return Err(HarnessError::Config(format!(
            "{} and {} differ in layout, faults or events",
            ours.name, baseline.name
        )));
    }
    Ok(())
}

pub(crate) fn toml_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let rd = std::fs::read_dir(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Pairs of `(label, ours, baseline)`: two files, or two directories whose
/// scenario files are matched by file name.
pub fn pair_paths(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, HarnessError> {
    if a.is_dir() && b.is_dir() {
        let mut pairs = Vec::new();
        for pa in toml_files(a)? {
            let file = pa.file_name().expect("listed file has a name");
            let pb = b.join(file);
            if !pb.is_file() {
                return Err(HarnessError::Config(format!(
                    "{} has no counterpart in {}",
                    pa.display(),
                    b.display()
                )));
            }
            let label = pa.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            pairs.push((label, pa, pb));
        }
        if pairs.is_empty() {
            return Err(HarnessError::Config(format!("no scenario files in {}", a.display())));
        }
        Ok(pairs)
    } else if a.is_file() && b.is_file() {
        let label = a.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        Ok(vec![(label, a.to_path_buf(), b.to_path_buf())])
    } else {
        Err(HarnessError::Config(
            "compare needs two scenario files or two directories".into(),
        ))
    }
}

/// Runs `a` (ours) against `b` (baseline) and tabulates the improvement of
/// mean rms error.
pub fn compare(a: &Path, b: &Path, opts: &RunOptions) -> Result<ComparisonReport, HarnessError> {
    let pairs = pair_paths(a, b)?;
    let rows = pairs
        .par_iter()
        .map(|(label, pa, pb)| {
            let sa = Scenario::load(pa)?;
            let sb = Scenario::load(pb)?;
            check_pair(&sa, &sb)?;
            let ea = execute(&sa, opts.dt)?;
            let eb = execute(&sb, opts.dt)?;
            if opts.write {
                write_artifacts(&sa, &ea, &output_dir(&sa, opts))?;
                write_artifacts(&sb, &eb, &output_dir(&sb, opts))?;
            }
            Ok(compare_row(label, &ea.summary, &eb.summary))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(ComparisonReport::new(rows))
}
