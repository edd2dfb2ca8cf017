//! CSV tables written by the CLI and their parsers.
//!
//! Floats are written with 17 significant digits so that parsing a table
//! returns exactly the values that were written.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
}

/// 17 significant digits, round-trip exact for `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub shape: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub mode: String,
    pub eps: f64,
    pub dt: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub theta1: f64,
    pub theta2: f64,
    #[serde(rename = "S11")]
    pub s11: f64,
    #[serde(rename = "S12")]
    pub s12: f64,
    #[serde(rename = "S22")]
    pub s22: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub degree: u32,
    pub shape: String,
    pub residual: f64,
}

/// One histogram bin of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub method: String,
    pub shape: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub mode: String,
    pub dt: f64,
    pub axis: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub density: f64,
}

/// One bin of a `Z` histogram; `point` indexes the (θ, n, mode) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZHistRow {
    pub point: usize,
    pub n: usize,
    pub mode: String,
    pub axis: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub density: f64,
}

/// Moment summary of `Z` draws: `mean{j}`, `cov{ij}`, `ks{j}`, or
/// `singular` (value = smallest eigenvalue of `Σ_x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZMomentRow {
    pub point: usize,
    pub n: usize,
    pub mode: String,
    pub metric: String,
    pub value: f64,
}

const METRICS_HEADER: [&str; 10] = [
    "method", "shape", "K", "n", "mode", "eps", "dt", "metric", "value", "stderr",
];
const FIELD_HEADER: [&str; 5] = ["theta1", "theta2", "S11", "S12", "S22"];
const PROJECTION_HEADER: [&str; 4] = ["K", "degree", "shape", "residual"];
const HISTOGRAM_HEADER: [&str; 11] = [
    "method", "shape", "K", "n", "mode", "dt", "axis", "bin_lo", "bin_hi", "count", "density",
];
const ZHIST_HEADER: [&str; 8] = ["point", "n", "mode", "axis", "bin_lo", "bin_hi", "count", "density"];
const ZMOMENT_HEADER: [&str; 5] = ["point", "n", "mode", "metric", "value"];

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<(), CsvError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(METRICS_HEADER)?;
    for r in rows {
        wr.write_record([
            r.method.clone(),
            r.shape.clone(),
            r.k.to_string(),
            r.n.to_string(),
            r.mode.clone(),
            fmt_f64(r.eps),
            fmt_f64(r.dt),
            r.metric.clone(),
            fmt_f64(r.value),
            fmt_f64(r.stderr),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_field<W: Write>(w: W, rows: &[FieldRow]) -> Result<(), CsvError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(FIELD_HEADER)?;
    for r in rows {
        wr.write_record([r.theta1, r.theta2, r.s11, r.s12, r.s22].map(fmt_f64))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_projection<W: Write>(w: W, rows: &[ProjectionRow]) -> Result<(), CsvError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(PROJECTION_HEADER)?;
    for r in rows {
        wr.write_record([
            r.k.to_string(),
            r.degree.to_string(),
            r.shape.clone(),
            fmt_f64(r.residual),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_histograms<W: Write>(w: W, rows: &[HistogramRow]) -> Result<(), CsvError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(HISTOGRAM_HEADER)?;
    for r in rows {
        wr.write_record([
            r.method.clone(),
            r.shape.clone(),
            r.k.to_string(),
            r.n.to_string(),
            r.mode.clone(),
            fmt_f64(r.dt),
            r.axis.to_string(),
            fmt_f64(r.bin_lo),
            fmt_f64(r.bin_hi),
            r.count.to_string(),
            fmt_f64(r.density),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_zhist<W: Write>(w: W, rows: &[ZHistRow]) -> Result<(), CsvError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(ZHIST_HEADER)?;
    for r in rows {
        wr.write_record([
            r.point.to_string(),
            r.n.to_string(),
            r.mode.clone(),
            r.axis.to_string(),
            fmt_f64(r.bin_lo),
            fmt_f64(r.bin_hi),
            r.count.to_string(),
            fmt_f64(r.density),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_zmoments<W: Write>(w: W, rows: &[ZMomentRow]) -> Result<(), CsvError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(ZMOMENT_HEADER)?;
    for r in rows {
        wr.write_record([
            r.point.to_string(),
            r.n.to_string(),
            r.mode.clone(),
            r.metric.clone(),
            fmt_f64(r.value),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn parse_table<T: serde::de::DeserializeOwned, R: Read>(
    r: R,
    required: &[&str],
) -> Result<Vec<T>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(CsvError::MissingColumn((*col).to_string()));
        }
    }
    rdr.deserialize().map(|r| r.map_err(CsvError::from)).collect()
}

pub fn parse_metrics<R: Read>(r: R) -> Result<Vec<MetricsRow>, CsvError> {
    parse_table(r, &METRICS_HEADER)
}

pub fn parse_field<R: Read>(r: R) -> Result<Vec<FieldRow>, CsvError> {
    parse_table(r, &FIELD_HEADER)
}

pub fn parse_projection<R: Read>(r: R) -> Result<Vec<ProjectionRow>, CsvError> {
    parse_table(r, &PROJECTION_HEADER)
}

pub fn parse_histograms<R: Read>(r: R) -> Result<Vec<HistogramRow>, CsvError> {
    parse_table(r, &HISTOGRAM_HEADER)
}

pub fn parse_zhist<R: Read>(r: R) -> Result<Vec<ZHistRow>, CsvError> {
    parse_table(r, &ZHIST_HEADER)
}

pub fn parse_zmoments<R: Read>(r: R) -> Result<Vec<ZMomentRow>, CsvError> {
    parse_table(r, &ZMOMENT_HEADER)
}
