//! Markdown tables in the shape of the line-count and timing tables.

use std::fmt::Write;

use serde::Serialize;

use minisched::check::CheckReport;
use minisched::emit::MetricsRow;

#[derive(Serialize)]
pub struct Row {
    pub pipeline: String,
    pub schedule: String,
    #[serde(flatten)]
    pub metrics: MetricsRow,
    pub seeds: usize,
    pub passed: bool,
    pub findings: usize,
    /// Summed wall-clock checker time over all seeds, not verifier time.
    pub seconds: f64,
}

impl Row {
    pub fn new(pipeline: &str, schedule: &str, metrics: MetricsRow, reports: &[CheckReport]) -> Row {
        Row {
            pipeline: pipeline.to_string(),
            schedule: schedule.to_string(),
            metrics,
            seeds: reports.len(),
            passed: reports.iter().all(CheckReport::passed),
            findings: reports.iter().map(|r| r.findings.len()).sum(),
            seconds: reports.iter().map(|r| r.stats.millis).sum::<u64>() as f64 / 1000.0,
        }
    }
}

pub fn markdown(rows: &[Row]) -> String {
    let mut s = String::from(
        "| Pipeline | Schedule | LoC | LoA | Loops | userLoA | annIncr | Verdict | Check T.(s) |\n\
         |---|---|---:|---:|---:|---:|---:|---|---:|\n",
    );
    for r in rows {
        let m = &r.metrics;
        let verdict = if r.passed { "pass".to_string() } else { format!("fail ({})", r.findings) };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {:.1} | {verdict} | {:.2} |",
            r.pipeline, r.schedule, m.loc, m.loa, m.loops, m.user_loa, m.ann_incr, r.seconds
        );
    }
    let sum = |f: fn(&Row) -> usize| rows.iter().map(f).sum::<usize>();
    let secs: f64 = rows.iter().map(|r| r.seconds).sum();
    let passed = rows.iter().filter(|r| r.passed).count();
    let _ = writeln!(
        s,
        "| **Total** | {} runs | {} | {} | {} | {} | | {passed}/{} pass | {secs:.2} |",
        rows.len(),
        sum(|r| r.metrics.loc),
        sum(|r| r.metrics.loa),
        sum(|r| r.metrics.loops),
        sum(|r| r.metrics.user_loa),
        rows.len()
    );
    s
}
