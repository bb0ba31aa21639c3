//! CSV row types shared by the command-line tool and the acceptance suite.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lowerbound::FloorReport;
use crate::net::FeedForwardNet;
use crate::sampling::{DistributionSpec, ErrorEstimate, ProportionEstimate};
use crate::spectral::{direction_floor, SpectralPoint};
use crate::train::SweepCell;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub d: usize,
    pub depth: usize,
    pub width: usize,
    /// Largest weight magnitude of the evaluated net.
    pub alpha: f64,
    pub dist: String,
    pub n: u64,
    pub mse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

impl ErrorRow {
    pub fn new(net: &FeedForwardNet, dist: &DistributionSpec, est: &ErrorEstimate) -> Self {
        let s = net.stats();
        Self {
            d: net.input_dim(),
            depth: s.depth,
            width: s.width,
            alpha: s.max_abs_weight,
            dist: dist.label(),
            n: est.n_samples,
            mse: est.mean_sq_error,
            ci_low: est.ci95.0,
            ci_high: est.ci95.1,
            seed: dist.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub depth: usize,
    pub width: usize,
    pub d: usize,
    pub seed: u64,
    pub final_train_mse: f64,
    pub test_mse: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl From<&SweepCell> for SweepRow {
    fn from(c: &SweepCell) -> Self {
        Self {
            depth: c.depth,
            width: c.width,
            d: c.d,
            seed: c.seed,
            final_train_mse: c.final_train_mse,
            test_mse: c.test.map(|t| t.mean_sq_error),
            ci_low: c.test.map(|t| t.ci95.0),
            ci_high: c.test.map(|t| t.ci95.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViolationRow {
    pub d: usize,
    pub delta: f64,
    pub n: u64,
    pub proportion: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `2 d^2 delta`.
    pub bound: f64,
    pub seed: u64,
}

impl ViolationRow {
    pub fn new(d: usize, delta: f64, est: &ProportionEstimate, seed: u64) -> Self {
        Self {
            d,
            delta,
            n: est.n_samples,
            proportion: est.proportion,
            std_error: est.std_error,
            ci_low: est.ci95.0,
            ci_high: est.ci95.1,
            bound: 2.0 * (d * d) as f64 * delta,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FloorRow {
    pub d: usize,
    pub label: String,
    pub first_width: usize,
    pub v1: f64,
    pub abs_det: f64,
    pub floor: f64,
    pub mse: f64,
    pub std_error: f64,
    pub constancy_deviation: f64,
    pub seed: u64,
}

impl FloorRow {
    pub fn new(net: &FeedForwardNet, label: &str, report: &FloorReport, seed: u64) -> Self {
        Self {
            d: net.input_dim(),
            label: label.to_string(),
            first_width: net.layers()[0].out_width(),
            v1: report.parallelotope.v[0],
            abs_det: report.parallelotope.abs_det(),
            floor: report.floor,
            mse: report.empirical.mean_sq_error,
            std_error: report.empirical.std_error,
            constancy_deviation: report.constancy_deviation,
            seed,
        }
    }
}

/// Serializes rows with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    write_rows(rows, true)
}

/// Serializes rows, optionally without the header line.
pub fn write_rows<T: Serialize>(rows: &[T], header: bool) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(header)
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    finish(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(format!("csv: {e}")))
}

/// Spectral grid rows `xi_1..xi_d, re, im, abs, floor`. The floor column is
/// the direction floor, left empty unless every coordinate is positive.
pub fn spectral_csv(points: &[SpectralPoint]) -> Result<String> {
    let d = points.first().map_or(0, |p| p.xi.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=d).map(|i| format!("xi_{i}")).collect();
    header.extend(["re", "im", "abs", "floor"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        let mut rec: Vec<String> = p.xi.iter().map(|x| x.to_string()).collect();
        rec.push(p.value.re.to_string());
        rec.push(p.value.im.to_string());
        rec.push(p.value.norm().to_string());
        rec.push(if p.xi.iter().all(|&x| x > 0.0) {
            direction_floor(&p.xi).to_string()
        } else {
            String::new()
        });
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}
