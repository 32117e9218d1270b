use std::fs;
use std::path::Path;

use crate::error::{Error, FormatErrorKind, Result};

pub const METRICS_MAGIC: &str = "FLOQMETRICS1";

const COLUMNS: [&str; 9] = [
    "step",
    "critic_loss",
    "mean_q",
    "oracle_gap",
    "curvature",
    "policy_score",
    "success_rate",
    "distill_loss",
    "online_return",
];

/// One evaluation row. Empty cells (`None`) mean the metric does not apply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub critic_loss: Option<f64>,
    pub mean_q: Option<f64>,
    /// Max |Q - Q*| over non-terminal state-action pairs (tabular only).
    pub oracle_gap: Option<f64>,
    pub curvature: Option<f64>,
    /// Mean undiscounted evaluation return.
    pub policy_score: Option<f64>,
    pub success_rate: Option<f64>,
    pub distill_loss: Option<f64>,
    pub online_return: Option<f64>,
}

impl MetricsRow {
    fn cells(&self) -> [Option<f64>; 8] {
        [
            self.critic_loss,
            self.mean_q,
            self.oracle_gap,
            self.curvature,
            self.policy_score,
            self.success_rate,
            self.distill_loss,
            self.online_return,
        ]
    }
}

pub type TrainingMetrics = Vec<MetricsRow>;

pub(crate) fn header() -> String {
    COLUMNS.join(",")
}

pub(crate) fn format_row(row: &MetricsRow) -> String {
    let mut out = row.step.to_string();
    for cell in row.cells() {
        out.push(',');
        if let Some(v) = cell {
            out.push_str(&format!("{v:.12e}"));
        }
    }
    out
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut text = format!("# {METRICS_MAGIC}\n{}\n", header());
    for row in rows {
        text.push_str(&format_row(row));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<TrainingMetrics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(&format!("# {METRICS_MAGIC}")) {
        return Err(Error::format(
            path,
            1,
            FormatErrorKind::BadMagic,
            "missing metrics magic line",
        ));
    }
    if lines.next().map(str::trim) != Some(header().as_str()) {
        return Err(Error::format(
            path,
            2,
            FormatErrorKind::BadHeader,
            "unexpected metrics columns",
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(Error::format(
                path,
                lineno,
                FormatErrorKind::DimensionMismatch,
                format!("expected {} columns, got {}", COLUMNS.len(), fields.len()),
            ));
        }
        let bad = |m: String| Error::format(path, lineno, FormatErrorKind::BadRecord, m);
        let step = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(e.to_string()))?;
        let mut cells = [None; 8];
        for (cell, f) in cells.iter_mut().zip(&fields[1..]) {
            let f = f.trim();
            if !f.is_empty() {
                *cell = Some(f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}")))?);
            }
        }
        let [critic_loss, mean_q, oracle_gap, curvature, policy_score, success_rate, distill_loss, online_return] =
            cells;
        rows.push(MetricsRow {
            step,
            critic_loss,
            mean_q,
            oracle_gap,
            curvature,
            policy_score,
            success_rate,
            distill_loss,
            online_return,
        });
    }
    Ok(rows)
}
