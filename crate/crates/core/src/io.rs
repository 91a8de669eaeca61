//! Deterministic CSV emission.
//!
//! Floats are written with 17 significant digits in scientific notation,
//! rows end with LF, and the column order of each schema is fixed.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::experiments::{ConcentrationRecord, ExperimentRecord};
use crate::model::Mu;

pub const RATIO_HEADER: &str = "experiment,n,d,lambda,mu,replicates,ratio_mean,ratio_sd,flag";
pub const SWEEP_HEADER: &str = "experiment,n,d,lambda,mu,tau,risk_mean,risk_sd";
pub const CONCENTRATION_HEADER: &str = "n,d,stat,median,q90,bound_value";
pub const FIT_HEADER: &str = "n,d,lambda,mu,excess_risk,iterations,converged,objective";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordSchema {
    Ratio,
    Sweep,
}

/// 17 significant digits; `inf`/`-inf`/`nan` for non-finite values.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn fmt_mu(mu: Option<Mu>) -> String {
    match mu {
        Some(Mu::Finite(v)) => fmt_float(v),
        Some(Mu::Infinite) => "inf".to_string(),
        None => String::new(),
    }
}

/// Quotes a text field when it contains a separator or quote.
fn text_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn ratio_row(r: &ExperimentRecord) -> String {
    [
        text_field(&r.experiment),
        r.params.n.map(|n| n.to_string()).unwrap_or_default(),
        r.params.d.to_string(),
        opt_float(r.params.lambda),
        fmt_mu(r.params.mu),
        r.replicates.to_string(),
        opt_float(r.statistic_mean),
        opt_float(r.statistic_sd),
        r.flag.as_deref().map(text_field).unwrap_or_default(),
    ]
    .join(",")
}

fn sweep_row(r: &ExperimentRecord) -> String {
    [
        text_field(&r.experiment),
        r.params.n.map(|n| n.to_string()).unwrap_or_default(),
        r.params.d.to_string(),
        opt_float(r.params.lambda),
        fmt_mu(r.params.mu),
        opt_float(r.params.tau),
        opt_float(r.statistic_mean),
        opt_float(r.statistic_sd),
    ]
    .join(",")
}

fn concentration_row(r: &ConcentrationRecord) -> String {
    [
        r.n.map(|n| n.to_string()).unwrap_or_default(),
        r.d.to_string(),
        text_field(&r.stat),
        opt_float(r.median),
        opt_float(r.q90),
        opt_float(r.bound_value),
    ]
    .join(",")
}

fn render(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::with_capacity(256);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn render_records(records: &[ExperimentRecord], schema: RecordSchema) -> String {
    match schema {
        RecordSchema::Ratio => render(RATIO_HEADER, records.iter().map(ratio_row)),
        RecordSchema::Sweep => render(SWEEP_HEADER, records.iter().map(sweep_row)),
    }
}

pub fn render_concentration(records: &[ConcentrationRecord]) -> String {
    render(CONCENTRATION_HEADER, records.iter().map(concentration_row))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub mu: Mu,
    pub excess_risk: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

pub fn render_fit(rows: &[FitSummary]) -> String {
    render(
        FIT_HEADER,
        rows.iter().map(|r| {
            [
                r.n.to_string(),
                r.d.to_string(),
                fmt_float(r.lambda),
                fmt_mu(Some(r.mu)),
                fmt_float(r.excess_risk),
                r.iterations.to_string(),
                r.converged.to_string(),
                fmt_float(r.objective),
            ]
            .join(",")
        }),
    )
}

pub fn write_text(path: &Path, text: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()
}

pub fn write_records(records: &[ExperimentRecord], schema: RecordSchema, path: &Path) -> io::Result<()> {
    write_text(path, &render_records(records, schema))
}

pub fn write_concentration(records: &[ConcentrationRecord], path: &Path) -> io::Result<()> {
    write_text(path, &render_concentration(records))
}
