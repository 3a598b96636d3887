//! Evaluation reports and the method-by-scenario comparison table.
//!
//! A report is a TOML document: one method evaluated on an ordered list of
//! scenarios, each entry carrying its config fingerprint, the seeds used and
//! the per-episode results. Reruns with identical inputs reproduce every
//! field byte for byte except `wall_time_s`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    /// The command that produced the report.
    pub command: String,
    /// Row label in comparison tables, e.g. "FixTime-30" or "rnn-policy".
    pub method: String,
    /// Elapsed wall clock seconds; the only field that varies across reruns.
    pub wall_time_s: f64,
    #[serde(default)]
    pub scenarios: Vec<ScenarioReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioReport {
    pub scenario: String,
    pub config_sha256: String,
    pub eval_seed_base: u64,
    pub episodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_wait_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wait_ci95_s: Option<f64>,
    pub mean_raw_return: f64,
    pub mean_steps: f64,
    #[serde(default)]
    pub episode: Vec<EpisodeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeReport {
    pub seed: u64,
    pub steps: u64,
    pub raw_return: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_wait_s: Option<f64>,
    pub arrivals: u64,
    pub departures: u64,
    pub changes: u64,
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<(), HarnessError> {
    let text = toml::to_string_pretty(report).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Drops the wall clock line so two runs of the same command can be compared
/// byte for byte.
pub fn determinism_view(report_text: &str) -> String {
    report_text
        .lines()
        .filter(|line| !line.trim_start().starts_with("wall_time_s"))
        .map(|line| format!("{line}\n"))
        .collect()
}

/// Renders reports as a delimited table: one row per report's method, one
/// column per scenario, waiting-time cells, the lowest value per column
/// flagged with `*`. All reports must list the same scenarios in the same
/// order, with matching fingerprints and evaluation seeds.
pub fn compare(reports: &[RunReport]) -> Result<String, HarnessError> {
    if reports.len() < 2 {
        return Err(HarnessError::ReportMismatch(format!(
            "need at least two reports, got {}",
            reports.len()
        )));
    }
    let first = &reports[0];
    for other in &reports[1..] {
        if other.scenarios.len() != first.scenarios.len() {
            return Err(HarnessError::ReportMismatch(format!(
                "'{}' lists {} scenarios but '{}' lists {}",
                first.method,
                first.scenarios.len(),
                other.method,
                other.scenarios.len()
            )));
        }
        for (a, b) in first.scenarios.iter().zip(&other.scenarios) {
            if a.scenario != b.scenario {
                return Err(HarnessError::ReportMismatch(format!(
                    "scenario order differs: '{}' has '{}' where '{}' has '{}'",
                    first.method, a.scenario, other.method, b.scenario
                )));
            }
            if a.config_sha256 != b.config_sha256 {
                return Err(HarnessError::ReportMismatch(format!(
                    "config fingerprints differ on scenario '{}'",
                    a.scenario
                )));
            }
            if a.eval_seed_base != b.eval_seed_base || a.episodes != b.episodes {
                return Err(HarnessError::ReportMismatch(format!(
                    "evaluation seeds differ on scenario '{}': {}x{} vs {}x{}",
                    a.scenario, a.episodes, a.eval_seed_base, b.episodes, b.eval_seed_base
                )));
            }
        }
    }

    let columns: Vec<&str> = first.scenarios.iter().map(|s| s.scenario.as_str()).collect();
    let cells: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            r.scenarios
                .iter()
                .map(|s| match s.mean_wait_s {
                    Some(w) => format!("{w:.2}"),
                    None => "n/a".to_string(),
                })
                .collect()
        })
        .collect();

    let mut best = vec![None::<f64>; columns.len()];
    for report in reports {
        for (j, s) in report.scenarios.iter().enumerate() {
            if let Some(w) = s.mean_wait_s {
                if best[j].map_or(true, |b| w < b) {
                    best[j] = Some(w);
                }
            }
        }
    }
    let flagged = |i: usize, j: usize| match (reports[i].scenarios[j].mean_wait_s, best[j]) {
        (Some(w), Some(b)) => w == b,
        _ => false,
    };

    let method_width = reports
        .iter()
        .map(|r| r.method.len())
        .chain(["method".len()])
        .max()
        .unwrap();
    let col_widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            cells
                .iter()
                .map(|row| row[j].len() + 1)
                .chain([name.len()])
                .max()
                .unwrap()
        })
        .collect();

    let mut out = String::new();
    out.push_str(&format!("{:<method_width$}", "method"));
    for (j, name) in columns.iter().enumerate() {
        out.push_str(&format!(" | {:>w$}", name, w = col_widths[j]));
    }
    out.push('\n');
    out.push_str(&"-".repeat(method_width));
    for w in &col_widths {
        out.push_str(&format!("-+-{}", "-".repeat(*w)));
    }
    out.push('\n');
    for (i, report) in reports.iter().enumerate() {
        out.push_str(&format!("{:<method_width$}", report.method));
        for (j, cell) in cells[i].iter().enumerate() {
            let marked = if flagged(i, j) {
                format!("*{cell}")
            } else {
                cell.clone()
            };
            out.push_str(&format!(" | {:>w$}", marked, w = col_widths[j]));
        }
        out.push('\n');
    }
    Ok(out)
}
