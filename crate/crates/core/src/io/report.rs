//! Evaluation reports in JSON, CSV and Markdown.
//!
//! Tabular outputs share one column layout:
//! `method, DSC, HD_mm, RVD, outliers, false_communicating_IHDs,
//! false_non_communicating_IHDs`. Summary cells read `mean ±std`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::stats::AnovaResult;

pub const COLUMNS: [&str; 7] = [
    "method",
    "DSC",
    "HD_mm",
    "RVD",
    "outliers",
    "false_communicating_IHDs",
    "false_non_communicating_IHDs",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    /// DSC, HD and RVD: three decimals on both parts.
    Continuous,
    /// Per-case counts: one decimal on the mean, two on the spread.
    Count,
}

pub fn format_cell(mean: f64, std: f64, kind: CellKind) -> String {
    match kind {
        CellKind::Continuous => format!("{mean:.3} ±{std:.3}"),
        CellKind::Count => format!("{mean:.1} ±{std:.2}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub cases: usize,
    pub dsc: MeanStd,
    pub hd_mm: MeanStd,
    pub rvd: MeanStd,
    pub outliers: MeanStd,
    pub false_communicating: MeanStd,
    pub false_non_communicating: MeanStd,
}

impl SummaryRow {
    fn cells(&self) -> [String; 6] {
        let c = |m: &MeanStd, k| format_cell(m.mean, m.std, k);
        [
            c(&self.dsc, CellKind::Continuous),
            c(&self.hd_mm, CellKind::Continuous),
            c(&self.rvd, CellKind::Continuous),
            c(&self.outliers, CellKind::Count),
            c(&self.false_communicating, CellKind::Count),
            c(&self.false_non_communicating, CellKind::Count),
        ]
    }
}

/// Omnibus test for one metric column. `result` is absent when the test is
/// undefined (e.g. zero within-group variance); `note` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAnova {
    pub metric: String,
    pub result: Option<AnovaResult>,
    pub note: Option<String>,
}

impl MetricAnova {
    fn cell(&self) -> String {
        match &self.result {
            Some(r) => format!("p={:.4}{}", r.p_value, if r.significant { "*" } else { "" }),
            None => "n/a".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    /// One entry per metric column, in column order.
    pub anova: Vec<MetricAnova>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Single { method: String, metrics: MetricsReport },
    Summary(SummaryTable),
}

#[derive(Serialize)]
struct SingleJson<'a> {
    method: &'a str,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    columns: [&'static str; 7],
    rows: Vec<SummaryRowJson<'a>>,
    anova: &'a [MetricAnova],
}

#[derive(Serialize)]
struct SummaryRowJson<'a> {
    #[serde(flatten)]
    row: &'a SummaryRow,
    cells: [String; 6],
}

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String> {
    let out = match (report, format) {
        (Report::Single { method, metrics }, ReportFormat::Json) => {
            to_json(&SingleJson { method, metrics })?
        }
        (Report::Summary(t), ReportFormat::Json) => to_json(&SummaryJson {
            columns: COLUMNS,
            rows: t
                .rows
                .iter()
                .map(|row| SummaryRowJson { row, cells: row.cells() })
                .collect(),
            anova: &t.anova,
        })?,
        (Report::Single { method, metrics }, fmt) => {
            let cells = single_cells(metrics);
            table(fmt, &[(method.clone(), cells.to_vec())])
        }
        (Report::Summary(t), fmt) => {
            let mut rows: Vec<(String, Vec<String>)> = t
                .rows
                .iter()
                .map(|r| (r.method.clone(), r.cells().to_vec()))
                .collect();
            if !t.rows.is_empty() && !t.anova.is_empty() {
                rows.push(("ANOVA".to_string(), t.anova.iter().map(MetricAnova::cell).collect()));
            }
            table(fmt, &rows)
        }
    };
    Ok(out)
}

/// Renders `report` and writes it atomically to `path`.
pub fn write_report(report: &Report, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = render_report(report, format)?;
    super::write_atomic(path.as_ref(), text.as_bytes())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn single_cells(m: &MetricsReport) -> [String; 6] {
    [
        format!("{:.6}", m.dsc),
        format!("{:.6}", m.hd_mm),
        format!("{:.6}", m.rvd),
        m.outliers.to_string(),
        m.false_communicating.to_string(),
        m.false_non_communicating.to_string(),
    ]
}

fn table(format: ReportFormat, rows: &[(String, Vec<String>)]) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for (method, cells) in rows {
                out.push_str(&csv_field(method));
                for c in cells {
                    out.push(',');
                    out.push_str(&csv_field(c));
                }
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(COLUMNS.len()));
            for (method, cells) in rows {
                let _ = writeln!(out, "| {} | {} |", method.replace('|', "\\|"), cells.join(" | "));
            }
        }
        ReportFormat::Json => unreachable!("JSON is rendered through serde"),
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
