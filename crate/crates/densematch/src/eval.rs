//! Disparity accuracy metrics and cross-evaluation reports.
//!
//! The n-point error is the percentage of pixels with valid ground truth
//! whose prediction is missing or off by more than the threshold. Counts
//! are integers and the single division happens in f64, so repeated runs
//! produce bit-identical numbers.

use crate::error::{Error, Result};
use crate::matcher::DisparityMap;
use std::fmt::Write;

/// Default thresholds, in disparity pixels.
pub const DEFAULT_THRESHOLDS: [f32; 6] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0];

/// Error rate at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub threshold: f32,
    pub bad_count: u64,
    pub valid_count: u64,
    pub bad_percent: f64,
}

impl EvalResult {
    fn from_counts(threshold: f32, bad_count: u64, valid_count: u64) -> EvalResult {
        EvalResult {
            threshold,
            bad_count,
            valid_count,
            bad_percent: 100.0 * bad_count as f64 / valid_count as f64,
        }
    }
}

/// Percentage of valid-ground-truth pixels predicted more than `threshold`
/// pixels off. Pixels without valid ground truth are ignored entirely; an
/// invalid prediction at a valid ground-truth pixel always counts as bad.
pub fn n_point_error(
    prediction: &DisparityMap,
    ground_truth: &DisparityMap,
    threshold: f32,
) -> Result<EvalResult> {
    let (bad, valid) = error_counts(prediction, ground_truth, threshold)?;
    if valid == 0 {
        return Err(Error::Degenerate(
            "ground truth has no valid pixels to evaluate against".into(),
        ));
    }
    Ok(EvalResult::from_counts(threshold, bad, valid))
}

fn error_counts(
    prediction: &DisparityMap,
    ground_truth: &DisparityMap,
    threshold: f32,
) -> Result<(u64, u64)> {
    if prediction.width() != ground_truth.width()
        || prediction.height() != ground_truth.height()
    {
        return Err(Error::Shape(format!(
            "prediction {}×{} does not match ground truth {}×{}",
            prediction.width(),
            prediction.height(),
            ground_truth.width(),
            ground_truth.height()
        )));
    }
    let mut bad = 0u64;
    let mut valid = 0u64;
    for y in 0..ground_truth.height() {
        for x in 0..ground_truth.width() {
            if !ground_truth.is_valid(x, y) {
                continue;
            }
            valid += 1;
            let wrong = !prediction.is_valid(x, y)
                || (prediction.get(x, y) - ground_truth.get(x, y)).abs() > threshold;
            if wrong {
                bad += 1;
            }
        }
    }
    Ok((bad, valid))
}

/// The n-point error at each threshold, in the given order.
pub fn threshold_sweep(
    prediction: &DisparityMap,
    ground_truth: &DisparityMap,
    thresholds: &[f32],
) -> Result<Vec<EvalResult>> {
    thresholds
        .iter()
        .map(|t| n_point_error(prediction, ground_truth, *t))
        .collect()
}

/// Error rates for several prediction/ground-truth pairs pooled together:
/// counts are summed over all pairs before the percentage is taken.
pub fn pooled_errors(
    pairs: &[(&DisparityMap, &DisparityMap)],
    thresholds: &[f32],
) -> Result<Vec<EvalResult>> {
    let mut out = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let mut bad = 0u64;
        let mut valid = 0u64;
        for (pred, gt) in pairs {
            let (b, v) = error_counts(pred, gt, *t)?;
            bad += b;
            valid += v;
        }
        if valid == 0 {
            return Err(Error::Degenerate(
                "ground truth has no valid pixels to evaluate against".into(),
            ));
        }
        out.push(EvalResult::from_counts(*t, bad, valid));
    }
    Ok(out)
}

/// A weights-by-datasets grid of pooled error percentages.
#[derive(Debug, Clone)]
pub struct CrossEvalMatrix {
    weights_names: Vec<String>,
    dataset_names: Vec<String>,
    /// Row-major: `values[w * datasets + d]`.
    values: Vec<f64>,
}

impl CrossEvalMatrix {
    pub fn new(weights_names: Vec<String>, dataset_names: Vec<String>) -> CrossEvalMatrix {
        let values = vec![f64::NAN; weights_names.len() * dataset_names.len()];
        CrossEvalMatrix {
            weights_names,
            dataset_names,
            values,
        }
    }

    pub fn set(&mut self, weights_index: usize, dataset_index: usize, percent: f64) {
        self.values[weights_index * self.dataset_names.len() + dataset_index] = percent;
    }

    pub fn get(&self, weights_index: usize, dataset_index: usize) -> f64 {
        self.values[weights_index * self.dataset_names.len() + dataset_index]
    }

    /// Human-readable table, one row per weights file.
    pub fn to_text(&self) -> String {
        let name_width = self
            .weights_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(0)
            .max("weights".len());
        let col_width = self
            .dataset_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = String::new();
        let _ = write!(out, "{:name_width$}", "weights");
        for d in &self.dataset_names {
            let _ = write!(out, "  {d:>col_width$}");
        }
        out.push('\n');
        for (wi, w) in self.weights_names.iter().enumerate() {
            let _ = write!(out, "{w:name_width$}");
            for di in 0..self.dataset_names.len() {
                let _ = write!(out, "  {:>col_width$.4}", self.get(wi, di));
            }
            out.push('\n');
        }
        out
    }

    /// CSV with a header row; cells are fixed four-decimal percentages.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("weights");
        for d in &self.dataset_names {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for (wi, w) in self.weights_names.iter().enumerate() {
            out.push_str(w);
            for di in 0..self.dataset_names.len() {
                let _ = write!(out, ",{:.4}", self.get(wi, di));
            }
            out.push('\n');
        }
        out
    }
}
