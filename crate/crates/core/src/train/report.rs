//! Result tables: one row per model kind, one column per seeded test,
//! then the mean and the difference from the baseline mean.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::train::experiment::EvalReport;

/// AUC as a percentage with two decimals, the table's precision.
pub fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Signed percentage-point difference; `+0.00` for the baseline.
pub fn signed_percent(v: f64) -> String {
    let s = format!("{:+.2}", 100.0 * v);
    if s == "-0.00" { "+0.00".into() } else { s }
}

pub fn header(tests: usize) -> Vec<String> {
    let mut h = vec!["Model".to_string()];
    h.extend((1..=tests).map(|i| format!("Test {i}")));
    h.push("Mean AUC-ROC".into());
    h.push("Delta".into());
    h
}

pub fn rows(reports: &[EvalReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let mut row = vec![r.kind.display_name().to_string()];
            row.extend(r.aucs.iter().map(|&a| percent(a)));
            row.push(percent(r.mean));
            row.push(signed_percent(r.delta));
            row
        })
        .collect()
}

pub fn to_csv(reports: &[EvalReport]) -> Result<String> {
    let tests = reports.first().map_or(0, |r| r.aucs.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header(tests)).map_err(io)?;
    for row in rows(reports) {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

/// Fixed-width text rendering for terminals and docs.
pub fn to_markdown(reports: &[EvalReport]) -> String {
    let tests = reports.first().map_or(0, |r| r.aucs.len());
    let mut out = format!("| {} |\n", header(tests).join(" | "));
    out += &format!("|{}\n", "---|".repeat(tests + 3));
    for row in rows(reports) {
        out += &format!("| {} |\n", row.join(" | "));
    }
    out
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config_hash: &'a str,
    seeds: &'a [u64],
    rows: &'a [EvalReport],
}

/// Machine-readable variant carrying raw fractions, seeds and the hash of
/// the configuration that produced them.
pub fn to_json(reports: &[EvalReport], config_hash: &str) -> Result<String> {
    let seeds = reports.first().map_or(&[][..], |r| &r.seeds[..]);
    let mut s = serde_json::to_string_pretty(&JsonReport { config_hash, seeds, rows: reports })?;
    s.push('\n');
    Ok(s)
}
