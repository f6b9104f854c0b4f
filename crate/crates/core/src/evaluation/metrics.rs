//! Threshold metrics for binary predictions.

use crate::error::{dim, Error, Result};

/// Decision threshold applied to predicted probabilities.
pub const THRESHOLD: f64 = 0.5;

pub fn threshold_labels(probabilities: &[f64]) -> Vec<u8> {
    probabilities
        .iter()
        .map(|&p| u8::from(p >= THRESHOLD))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(labels: &[u8], predictions: &[u8]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(dim(format!(
                "{} labels vs {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut c = Confusion::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            match (y, p) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fn_ += 1,
                (_, 1) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }
}

/// Mean of sensitivity and specificity. Both classes must be present.
pub fn balanced_accuracy(labels: &[u8], predictions: &[u8]) -> Result<f64> {
    let c = Confusion::from_labels(labels, predictions)?;
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidData(
            "balanced accuracy needs both classes among the labels".into(),
        ));
    }
    Ok(0.5 * (c.tp as f64 / pos as f64 + c.tn as f64 / neg as f64))
}

/// F1 of the positive class; 0 when precision and recall are both 0.
pub fn f1_score(labels: &[u8], predictions: &[u8]) -> Result<f64> {
    let c = Confusion::from_labels(labels, predictions)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    if c.tp == 0 || denom == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * c.tp as f64 / denom as f64)
}
