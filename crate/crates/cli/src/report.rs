//! Coverage report serialization.

use std::fmt::Write as _;

use ate_core::numfmt::sig17;
use ate_core::sim::{CoverageReport, CoverageRow};

use crate::CliError;

pub const REPORT_COLUMNS: [&str; 8] = [
    "scenario",
    "n",
    "method",
    "time",
    "coverage",
    "mc_se",
    "mean_width",
    "elapsed_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One report line as written to disk. `time` is `None` for band rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub n: usize,
    pub method: String,
    pub time: Option<f64>,
    pub coverage: f64,
    pub mc_se: f64,
    pub mean_width: f64,
    pub elapsed_ms: f64,
}

impl From<&CoverageRow> for ReportRow {
    fn from(r: &CoverageRow) -> Self {
        ReportRow {
            scenario: r.scenario.clone(),
            n: r.n,
            method: r.method.label().to_string(),
            time: r.time,
            coverage: r.coverage,
            mc_se: r.mc_se,
            mean_width: r.mean_width,
            elapsed_ms: r.elapsed_ms,
        }
    }
}

fn time_cell(t: Option<f64>) -> String {
    t.map_or_else(|| "band".to_string(), sig17)
}

pub fn emit_report(report: &CoverageReport, format: ReportFormat) -> Vec<u8> {
    let rows: Vec<ReportRow> = report.rows.iter().map(ReportRow::from).collect();
    match format {
        ReportFormat::Csv => rows_to_csv(&rows),
        ReportFormat::Json => rows_to_json(&rows),
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.n.to_string(),
            r.method.clone(),
            time_cell(r.time),
            sig17(r.coverage),
            sig17(r.mc_se),
            sig17(r.mean_width),
            sig17(r.elapsed_ms),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// JSON array of row objects with the CSV's fields; numbers at 17 significant digits.
pub fn rows_to_json(rows: &[ReportRow]) -> Vec<u8> {
    let mut out = String::from("[");
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let time = r.time.map_or_else(|| "\"band\"".to_string(), sig17);
        write!(
            out,
            "\n  {{\"scenario\": {}, \"n\": {}, \"method\": {}, \"time\": {}, \"coverage\": {}, \"mc_se\": {}, \"mean_width\": {}, \"elapsed_ms\": {}}}",
            serde_json::to_string(&r.scenario).expect("string"),
            r.n,
            serde_json::to_string(&r.method).expect("string"),
            time,
            sig17(r.coverage),
            sig17(r.mc_se),
            sig17(r.mean_width),
            sig17(r.elapsed_ms),
        )
        .expect("string write");
    }
    if !rows.is_empty() {
        out.push('\n');
    }
    out.push_str("]\n");
    out.into_bytes()
}

fn num(field: &str, s: &str) -> Result<f64, CliError> {
    s.parse()
        .map_err(|_| CliError::Data(format!("report column `{field}`: `{s}` is not a number")))
}

pub fn parse_report_csv(bytes: &[u8]) -> Result<Vec<ReportRow>, CliError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != REPORT_COLUMNS {
        return Err(CliError::Data(format!("unexpected report header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
            Ok(ReportRow {
                scenario: rec[0].to_string(),
                n: rec[1]
                    .parse()
                    .map_err(|_| CliError::Data(format!("report column `n`: `{}`", &rec[1])))?,
                method: rec[2].to_string(),
                time: if &rec[3] == "band" { None } else { Some(num("time", &rec[3])?) },
                coverage: num("coverage", &rec[4])?,
                mc_se: num("mc_se", &rec[5])?,
                mean_width: num("mean_width", &rec[6])?,
                elapsed_ms: num("elapsed_ms", &rec[7])?,
            })
        })
        .collect()
}

pub fn parse_report_json(bytes: &[u8]) -> Result<Vec<ReportRow>, CliError> {
    let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| CliError::Data(e.to_string()))?;
    let bad = |what: &str| CliError::Data(format!("report JSON: {what}"));
    v.as_array()
        .ok_or_else(|| bad("expected an array"))?
        .iter()
        .map(|o| {
            let f = |k: &str| o.get(k).and_then(serde_json::Value::as_f64).ok_or_else(|| bad(k));
            let s = |k: &str| o.get(k).and_then(serde_json::Value::as_str).map(str::to_string).ok_or_else(|| bad(k));
            Ok(ReportRow {
                scenario: s("scenario")?,
                n: o.get("n").and_then(serde_json::Value::as_u64).ok_or_else(|| bad("n"))? as usize,
                method: s("method")?,
                time: match o.get("time") {
                    Some(serde_json::Value::String(b)) if b == "band" => None,
                    _ => Some(f("time")?),
                },
                coverage: f("coverage")?,
                mc_se: f("mc_se")?,
                mean_width: f("mean_width")?,
                elapsed_ms: f("elapsed_ms")?,
            })
        })
        .collect()
}
