//! CSV output: experiment report rows and min-max scaled attention heatmaps.
//!
//! All files use `,` separators, `.` decimals, LF line endings and a
//! mandatory header. Floats are written in Rust's shortest round-trip form.

use std::io::Write;

use crate::error::Result;
use crate::numerics::Matrix;

/// Header comment written above every heatmap.
pub const HEATMAP_COMMENT: &str = "# scaling=row-minmax constant_row=0";

/// Column order of experiment reports.
pub const REPORT_HEADER: [&str; 7] = ["experiment", "estimator", "seed", "n", "bandwidth", "metric", "value"];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub estimator: String,
    /// `None` for rows aggregated over seeds.
    pub seed: Option<u64>,
    pub n: usize,
    pub bandwidth: Option<f64>,
    pub metric: String,
    pub value: f64,
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in rows {
        out.write_record([
            r.experiment.clone(),
            r.estimator.clone(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.n.to_string(),
            fmt_opt(r.bandwidth),
            r.metric.clone(),
            r.value.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Generic table with a header row; every record must match its width.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Scales each row to `[0, 1]`; a constant row becomes all zeros.
pub fn minmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for v in row.iter_mut() {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    out
}

/// Writes an attention matrix, one row per query, after [`minmax_rows`].
pub fn write_heatmap<W: Write>(mut w: W, attn: &Matrix) -> Result<()> {
    writeln!(w, "{HEATMAP_COMMENT}")?;
    let scaled = minmax_rows(attn);
    let mut header = vec!["query".to_string()];
    header.extend((0..attn.cols()).map(|j| format!("k{j}")));
    let rows: Vec<Vec<String>> = (0..scaled.rows())
        .map(|i| std::iter::once(i.to_string()).chain(scaled.row(i).iter().map(|v| v.to_string())).collect())
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(w, &header, &rows)
}
