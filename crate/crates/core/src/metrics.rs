//! Confusion matrix and accuracy / precision / recall / F1, with `Bot` as
//! the positive class.
//!
//! Precision, recall and F1 are `None` when their denominator is zero rather
//! than a made-up 0.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Class;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("predictions ({predictions}) and truth ({truth}) differ in length")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predictions: &[Class], truth: &[Class]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut m = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truth) {
        match (p, t) {
            (Class::Bot, Class::Bot) => m.tp += 1,
            (Class::Bot, Class::Human) => m.fp += 1,
            (Class::Human, Class::Human) => m.tn += 1,
            (Class::Human, Class::Bot) => m.fn_ += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; `None` if `p + r == 0`.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

pub fn evaluate(matrix: &ConfusionMatrix) -> Result<EvalReport, MetricsError> {
    let total = matrix.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let precision = ratio(matrix.tp, matrix.tp + matrix.fp);
    let recall = ratio(matrix.tp, matrix.tp + matrix.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_score(p, r),
        _ => None,
    };
    Ok(EvalReport {
        confusion: *matrix,
        accuracy: (matrix.tp + matrix.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
    })
}

fn pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:>8.2}%", v * 100.0),
        None => format!("{:>9}", "undefined"),
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(f, "                 predicted bot  predicted human")?;
        writeln!(f, "  actual bot     {:>13}  {:>15}", c.tp, c.fn_)?;
        writeln!(f, "  actual human   {:>13}  {:>15}", c.fp, c.tn)?;
        writeln!(f)?;
        writeln!(f, "  accuracy   {}", pct(Some(self.accuracy)))?;
        writeln!(f, "  precision  {}", pct(self.precision))?;
        writeln!(f, "  recall     {}", pct(self.recall))?;
        write!(f, "  f1         {}", pct(self.f1))
    }
}
