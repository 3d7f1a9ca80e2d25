//! Metrics over run records and tabular report emission.
//!
//! Cumulative accuracy at iteration `t` counts a task solved if its
//! first-correct iteration is at most `t` (S1), or if the synthesized
//! answer at `t` grades correct under post-hoc scoring (S2, not
//! necessarily monotone). Final accuracy is the fraction of runs whose
//! final answer is correct.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Resolution, RunRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to report on")]
    Empty,
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: u32,
    pub cumulative_accuracy: f64,
}

/// Per-iteration accuracy for one strategy on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub strategy: String,
    pub benchmark: String,
    pub resolution: Resolution,
    pub points: Vec<SeriesPoint>,
    pub final_accuracy: f64,
    pub n_tasks: usize,
}

/// One grid entry: a pattern spec or named strategy with its final accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub pattern_spec: String,
    pub final_accuracy: f64,
    pub n_tasks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn solved_at(record: &RunRecord, t: u32) -> bool {
    match record.resolution {
        Resolution::S1Oracle => record
            .first_correct_iteration
            .is_some_and(|first| first <= t),
        Resolution::S2Synthesis => {
            if t == 0 {
                record.baseline_correct
            } else {
                record
                    .iterations
                    .get(t as usize - 1)
                    .and_then(|it| it.resolved_correct)
                    .unwrap_or(false)
            }
        }
    }
}

/// Fraction of tasks solved at iteration `t`.
pub fn cumulative_accuracy(records: &[&RunRecord], t: u32) -> Result<f64, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let solved = records.iter().filter(|r| solved_at(r, t)).count();
    Ok(solved as f64 / records.len() as f64)
}

/// Fraction of tasks whose final answer is correct. Errored runs count as
/// incorrect; filter them out beforehand to exclude them instead.
pub fn final_accuracy(records: &[&RunRecord]) -> Result<f64, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let correct = records.iter().filter(|r| r.final_correct).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Builds one series per (strategy, benchmark) pair, in first-seen order.
pub fn build_series(records: &[RunRecord], max_iterations: u32) -> Result<Vec<MetricSeries>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut groups: Vec<((String, String), Vec<&RunRecord>)> = Vec::new();
    for record in records {
        let key = (record.strategy.clone(), record.benchmark.name().to_string());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(record),
            None => groups.push((key, vec![record])),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((strategy, benchmark), members) in groups {
        let points = (0..=max_iterations)
            .map(|t| {
                Ok(SeriesPoint {
                    t,
                    cumulative_accuracy: cumulative_accuracy(&members, t)?,
                })
            })
            .collect::<Result<Vec<_>, ReportError>>()?;
        out.push(MetricSeries {
            strategy,
            benchmark,
            resolution: members[0].resolution,
            final_accuracy: final_accuracy(&members)?,
            n_tasks: members.len(),
            points,
        });
    }
    Ok(out)
}

/// Descending by accuracy; ties and errors pinned by spec for stable output.
pub fn sort_cells(cells: &mut [AblationCell]) {
    cells.sort_by(|a, b| {
        b.error
            .is_none()
            .cmp(&a.error.is_none())
            .then(b.final_accuracy.total_cmp(&a.final_accuracy))
            .then(a.pattern_spec.cmp(&b.pattern_spec))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json" => Ok(ReportFormat::Jsonl),
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format '{other}'")),
        }
    }
}

fn pct(value: f64) -> String {
    format!("{:.2}%", value * 100.0)
}

/// Renders per-iteration series. CSV carries fractions; markdown shows
/// percentages with two decimals.
pub fn render_series(series: &[MetricSeries], format: ReportFormat) -> Result<String, ReportError> {
    if series.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["strategy", "benchmark", "t", "cumulative_accuracy"])
                .map_err(|e| ReportError::Csv(e.to_string()))?;
            for s in series {
                for p in &s.points {
                    w.write_record([
                        s.strategy.as_str(),
                        s.benchmark.as_str(),
                        &p.t.to_string(),
                        &format!("{:.6}", p.cumulative_accuracy),
                    ])
                    .map_err(|e| ReportError::Csv(e.to_string()))?;
                }
            }
            let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Jsonl => {
            let mut out = String::new();
            for s in series {
                out.push_str(&serde_json::to_string(s).expect("series serializes"));
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let n = series.iter().map(|s| s.points.len()).max().unwrap_or(0);
            let mut out = String::from("| Strategy | Benchmark |");
            for t in 0..n {
                out.push_str(&format!(" t={t} |"));
            }
            out.push_str(" Final |\n|---|---|");
            out.push_str(&"---|".repeat(n + 1));
            out.push('\n');
            for s in series {
                out.push_str(&format!("| {} | {} |", s.strategy, s.benchmark));
                for p in &s.points {
                    out.push_str(&format!(" {} |", pct(p.cumulative_accuracy)));
                }
                out.push_str(&format!(" {} |\n", pct(s.final_accuracy)));
            }
            Ok(out)
        }
    }
}

/// Renders ablation cells, already sorted by the caller.
pub fn render_cells(cells: &[AblationCell], format: ReportFormat) -> Result<String, ReportError> {
    if cells.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["pattern", "final_accuracy", "n_tasks", "error"])
                .map_err(|e| ReportError::Csv(e.to_string()))?;
            for c in cells {
                w.write_record([
                    c.pattern_spec.as_str(),
                    &format!("{:.6}", c.final_accuracy),
                    &c.n_tasks.to_string(),
                    c.error.as_deref().unwrap_or(""),
                ])
                .map_err(|e| ReportError::Csv(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Jsonl => {
            let mut out = String::new();
            for c in cells {
                out.push_str(&serde_json::to_string(c).expect("cell serializes"));
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| Strategy | Final Accuracy |\n|---|---|\n");
            for c in cells {
                match &c.error {
                    Some(e) => out.push_str(&format!("| {} | error: {e} |\n", c.pattern_spec)),
                    None => out.push_str(&format!("| {} | {} |\n", c.pattern_spec, pct(c.final_accuracy))),
                }
            }
            Ok(out)
        }
    }
}

/// Plain two-column `t,cumulative_accuracy` files, one per series, for
/// plotting tools. The harness itself carries no plotting dependency.
pub fn plot_series_files(series: &[MetricSeries]) -> Result<Vec<(String, String)>, ReportError> {
    if series.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(series
        .iter()
        .map(|s| {
            let mut body = String::from("t,cumulative_accuracy\n");
            for p in &s.points {
                body.push_str(&format!("{},{:.6}\n", p.t, p.cumulative_accuracy));
            }
            let name = format!("{}__{}.csv", sanitize(&s.benchmark), sanitize(&s.strategy));
            (name, body)
        })
        .collect())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

pub fn write_report(path: impl AsRef<Path>, content: &str) -> Result<(), ReportError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, content).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Benchmark;
    use crate::protocol::IterationRecord;

    fn s1_record(task_id: &str, first_correct: Option<u32>) -> RunRecord {
        let n_iter = match first_correct {
            Some(0) => 0,
            Some(t) => t,
            None => 4,
        };
        RunRecord {
            task_id: task_id.to_string(),
            benchmark: Benchmark::Simpleqa,
            strategy: "heart:hsur->sa->hsur->sa".to_string(),
            resolution: Resolution::S1Oracle,
            baseline_answer: String::new(),
            baseline_correct: first_correct == Some(0),
            iterations: (1..=n_iter)
                .map(|t| IterationRecord {
                    t,
                    pool: "hsur".to_string(),
                    candidates: vec![],
                    resolved_text: String::new(),
                    resolved_correct: Some(first_correct == Some(t)),
                })
                .collect(),
            first_correct_iteration: first_correct,
            final_correct: first_correct.is_some(),
            request_count: 1,
            error: None,
        }
    }

    #[test]
    fn cumulative_accuracy_fixture() {
        // First-correct at {0, 2, 2, never}: brute-force counts give
        // 1/4 at t<2 and 3/4 from t=2 on.
        let records = [s1_record("a", Some(0)),
            s1_record("b", Some(2)),
            s1_record("c", Some(2)),
            s1_record("d", None)];
        let refs: Vec<&RunRecord> = records.iter().collect();
        let series: Vec<f64> = (0..=4)
            .map(|t| cumulative_accuracy(&refs, t).unwrap())
            .collect();
        assert_eq!(series, vec![0.25, 0.25, 0.75, 0.75, 0.75]);
    }

    #[test]
    fn final_accuracy_counts_final_correct() {
        let records = [s1_record("a", Some(0)),
            s1_record("b", Some(1)),
            s1_record("c", Some(4)),
            s1_record("d", None)];
        let refs: Vec<&RunRecord> = records.iter().collect();
        assert_eq!(final_accuracy(&refs).unwrap(), 0.75);
        // S1: final accuracy equals cumulative accuracy at N.
        assert_eq!(
            final_accuracy(&refs).unwrap(),
            cumulative_accuracy(&refs, 4).unwrap()
        );
    }

    #[test]
    fn empty_records_error() {
        assert!(matches!(cumulative_accuracy(&[], 0), Err(ReportError::Empty)));
        assert!(matches!(final_accuracy(&[]), Err(ReportError::Empty)));
        assert!(matches!(build_series(&[], 4), Err(ReportError::Empty)));
    }

    fn s2_record(task_id: &str, per_iteration: [bool; 4], baseline: bool) -> RunRecord {
        RunRecord {
            task_id: task_id.to_string(),
            benchmark: Benchmark::Hle,
            strategy: "wait".to_string(),
            resolution: Resolution::S2Synthesis,
            baseline_answer: String::new(),
            baseline_correct: baseline,
            iterations: per_iteration
                .iter()
                .enumerate()
                .map(|(i, &ok)| IterationRecord {
                    t: i as u32 + 1,
                    pool: "wait".to_string(),
                    candidates: vec![],
                    resolved_text: String::new(),
                    resolved_correct: Some(ok),
                })
                .collect(),
            first_correct_iteration: None,
            final_correct: per_iteration[3],
            request_count: 1,
            error: None,
        }
    }

    #[test]
    fn s2_series_can_regress() {
        // Correct at t=1, wrong after: per-iteration scoring is not monotone.
        let records = [s2_record("a", [true, false, false, false], false)];
        let refs: Vec<&RunRecord> = records.iter().collect();
        assert_eq!(cumulative_accuracy(&refs, 1).unwrap(), 1.0);
        assert_eq!(cumulative_accuracy(&refs, 2).unwrap(), 0.0);
    }

    #[test]
    fn series_grouping_and_rendering_are_deterministic() {
        let records = vec![
            s1_record("a", Some(0)),
            s1_record("b", None),
        ];
        let series = build_series(&records, 4).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].n_tasks, 2);
        let csv1 = render_series(&series, ReportFormat::Csv).unwrap();
        let csv2 = render_series(&series, ReportFormat::Csv).unwrap();
        assert_eq!(csv1, csv2);
        assert!(csv1.starts_with("strategy,benchmark,t,cumulative_accuracy\n"));
        let md = render_series(&series, ReportFormat::Markdown).unwrap();
        assert!(md.contains("50.00%"));
    }

    #[test]
    fn plot_files_are_two_column() {
        let records = vec![s1_record("a", Some(0)), s1_record("b", Some(2))];
        let series = build_series(&records, 4).unwrap();
        let files = plot_series_files(&series).unwrap();
        assert_eq!(files.len(), 1);
        let (name, body) = &files[0];
        assert_eq!(name, "simpleqa__heart-hsur--sa--hsur--sa.csv");
        let mut lines = body.lines();
        assert_eq!(lines.next(), Some("t,cumulative_accuracy"));
        assert_eq!(lines.next(), Some("0,0.500000"));
        assert_eq!(body.lines().count(), 6);
    }

    #[test]
    fn cells_sort_descending_with_errors_last() {
        let mut cells = vec![
            AblationCell {
                pattern_spec: "xq->h".to_string(),
                final_accuracy: 0.0,
                n_tasks: 0,
                error: Some("unknown code".to_string()),
            },
            AblationCell {
                pattern_spec: "wait".to_string(),
                final_accuracy: 0.5,
                n_tasks: 10,
                error: None,
            },
            AblationCell {
                pattern_spec: "hsur->hsur->sd->sd".to_string(),
                final_accuracy: 0.9,
                n_tasks: 10,
                error: None,
            },
        ];
        sort_cells(&mut cells);
        assert_eq!(cells[0].pattern_spec, "hsur->hsur->sd->sd");
        assert_eq!(cells[1].pattern_spec, "wait");
        assert!(cells[2].error.is_some());
        let md = render_cells(&cells, ReportFormat::Markdown).unwrap();
        let first = md.lines().nth(2).unwrap();
        assert!(first.contains("hsur->hsur->sd->sd"));
        assert!(first.contains("90.00%"));
    }
}
