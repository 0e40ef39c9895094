//! Per-column normalization and the training CSV format.
//!
//! The default scaler maps a raw value `x` against its fitted column minimum
//! `m` as `log2((x - m) / (x + m) + 1)`, which lies in `[0, 1]` for
//! `x >= m >= 0`. Any column whose fitted minimum is 0 collapses to `{0, 1}`
//! under this map. A plain min-max scaler is available as an alternative.
//!
//! CSV layout: header of the nine feature names plus `label`, one row per
//! account, values in fixed 6-decimal notation, label `0` (human) or `1`
//! (bot), LF line endings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, COLUMN_NAMES, NUM_FEATURES};
use crate::ingest::Class;

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("cannot fit normalization statistics on zero rows")]
    EmptyFit,
    #[error("value {value} is below the fitted minimum {min}")]
    BelowFittedMin { value: f64, min: f64 },
    #[error("row {0} has no label")]
    UnlabeledRow(usize),
    #[error("malformed CSV {path}: {message}")]
    MalformedCsv { path: PathBuf, message: String },
    #[error("malformed statistics file {path}: {message}")]
    MalformedStats { path: PathBuf, message: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = NormalizeError> = std::result::Result<T, E>;

/// Which per-column map to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// `log2((x - min) / (x + min) + 1)`.
    #[default]
    LogRatio,
    /// `(x - min) / (max - min)`, 0 for a constant column.
    MinMax,
}

/// What to do with values outside the fitted range at transform time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutOfRangePolicy {
    /// Clamp into `[0, 1]` and count the event.
    #[default]
    Clamp,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub column_mins: [f64; NUM_FEATURES],
    /// Only consulted by [`Scaling::MinMax`].
    pub column_maxs: [f64; NUM_FEATURES],
    pub fitted_on: usize,
    #[serde(default)]
    pub scaling: Scaling,
}

pub fn fit(rows: &[FeatureVector], scaling: Scaling) -> Result<NormalizationStats> {
    let first = rows.first().ok_or(NormalizeError::EmptyFit)?.to_array();
    let mut mins = first;
    let mut maxs = first;
    for row in &rows[1..] {
        for (j, v) in row.to_array().into_iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    Ok(NormalizationStats {
        column_mins: mins,
        column_maxs: maxs,
        fitted_on: rows.len(),
        scaling,
    })
}

/// `log2((x - min) / (x + min) + 1)`, with the `x = min = 0` case defined as 0.
///
/// Evaluated as `log2(2 - 2 * min / (x + min))`, the same quantity written so
/// that each floating-point step is monotone in `x`; this keeps `x = min` at
/// exactly 0 and `min = 0, x > 0` at exactly 1.
pub fn transform_value(x: f64, min: f64) -> Result<f64> {
    if x < min {
        return Err(NormalizeError::BelowFittedMin { value: x, min });
    }
    let sum = x + min;
    if sum == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 - 2.0 * min / sum).log2())
}

fn min_max_value(x: f64, min: f64, max: f64) -> Result<f64> {
    if x < min {
        return Err(NormalizeError::BelowFittedMin { value: x, min });
    }
    if max <= min {
        return Ok(0.0);
    }
    Ok(((x - min) / (max - min)).min(1.0))
}

/// A normalized row plus how many of its columns had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedRow {
    pub values: [f64; NUM_FEATURES],
    pub clamped: usize,
}

pub fn transform_row(v: &FeatureVector, stats: &NormalizationStats, policy: OutOfRangePolicy) -> Result<NormalizedRow> {
    let mut values = [0.0; NUM_FEATURES];
    let mut clamped = 0;
    for (j, x) in v.to_array().into_iter().enumerate() {
        let min = stats.column_mins[j];
        let result = match stats.scaling {
            Scaling::LogRatio => transform_value(x, min),
            Scaling::MinMax => {
                if x > stats.column_maxs[j] && stats.column_maxs[j] > min {
                    clamped += 1;
                }
                min_max_value(x, min, stats.column_maxs[j])
            }
        };
        values[j] = match (result, policy) {
            (Ok(value), _) => value,
            (Err(NormalizeError::BelowFittedMin { .. }), OutOfRangePolicy::Clamp) => {
                clamped += 1;
                0.0
            }
            (Err(e), _) => return Err(e),
        };
    }
    Ok(NormalizedRow { values, clamped })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NormalizeError + '_ {
    move |source| NormalizeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Totals from writing one CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitSummary {
    pub rows: usize,
    pub clamped_values: usize,
}

pub fn csv_header() -> String {
    let mut header = COLUMN_NAMES.join(",");
    header.push_str(",label");
    header
}

/// Normalizes every row with `stats` and writes the training CSV.
pub fn emit_csv(
    rows: &[(FeatureVector, Option<Class>)],
    stats: &NormalizationStats,
    policy: OutOfRangePolicy,
    path: &Path,
) -> Result<EmitSummary> {
    let mut lines = Vec::with_capacity(rows.len());
    let mut clamped_values = 0;
    for (i, (features, label)) in rows.iter().enumerate() {
        let label = label.ok_or(NormalizeError::UnlabeledRow(i))?;
        let row = transform_row(features, stats, policy)?;
        clamped_values += row.clamped;
        lines.push((row.values, label));
    }

    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{}", csv_header())?;
        for (values, label) in &lines {
            for v in values {
                write!(out, "{v:.6},")?;
            }
            writeln!(out, "{}", label.as_target())?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))?;
    if clamped_values > 0 {
        log::warn!("{clamped_values} values fell outside the fitted range and were clamped");
    }
    Ok(EmitSummary {
        rows: lines.len(),
        clamped_values,
    })
}

/// One parsed CSV row: nine normalized values and a 0/1 target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub values: Vec<f64>,
    pub target: u8,
}

pub fn read_csv(path: &Path) -> Result<Vec<Sample>> {
    let malformed = |message: String| NormalizeError::MalformedCsv {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let expected = csv_header();
    let found = header.iter().collect::<Vec<_>>().join(",");
    if found != expected {
        return Err(malformed(format!("unexpected header `{found}`")));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(format!("line {line}: {e}")))?;
        let mut values = Vec::with_capacity(NUM_FEATURES);
        for field in record.iter().take(NUM_FEATURES) {
            let v: f64 = field
                .parse()
                .map_err(|_| malformed(format!("line {line}: bad number `{field}`")))?;
            values.push(v);
        }
        let target = match record.get(NUM_FEATURES) {
            Some("0") => 0,
            Some("1") => 1,
            other => return Err(malformed(format!("line {line}: bad label {other:?}"))),
        };
        rows.push(Sample { values, target });
    }
    Ok(rows)
}

/// `data.csv` -> `data.stats.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("stats.json")
}

pub fn save_stats(stats: &NormalizationStats, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(stats).expect("stats serialize");
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn load_stats(path: &Path) -> Result<NormalizationStats> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| NormalizeError::MalformedStats {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
