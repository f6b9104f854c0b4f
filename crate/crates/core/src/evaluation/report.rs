//! Cross-validated evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluation::cv::FoldResult;
use crate::evaluation::subcohort::{
    factor_subcohort_table, median_split_gap, MedianSplit, Scored, SubcohortReport,
};
use crate::graph::FactorTable;
use crate::training::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_test: usize,
    pub bacc: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scheme: Scheme,
    pub folds: Vec<FoldSummary>,
    pub bacc_mean: f64,
    /// Population standard deviation across folds.
    pub bacc_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    /// `mean ± std` in percent, one decimal.
    pub bacc_summary: String,
    pub f1_summary: String,
    pub median_split: MedianSplit,
    pub subcohorts: Vec<SubcohortReport>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summary(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}", 100.0 * mean, 100.0 * std)
}

/// Test rows pooled over folds that carry a probability, paired with their
/// global row index.
pub fn pooled_test(folds: &[FoldResult]) -> Vec<(usize, Scored)> {
    let mut out: Vec<(usize, Scored)> = folds
        .iter()
        .flat_map(FoldResult::test_samples)
        .filter_map(|s| {
            Some((
                s.row,
                Scored {
                    label: s.label,
                    probability: s.probability?,
                    weight: s.weight,
                },
            ))
        })
        .collect();
    out.sort_by_key(|(r, _)| *r);
    out
}

/// Summarizes folds; with `factors` (indexed by global row) adds one
/// sub-cohort table per factor column.
pub fn build_report(
    scheme: Scheme,
    folds: &[FoldResult],
    factors: Option<&FactorTable>,
) -> Result<EvaluationReport> {
    let baccs: Vec<f64> = folds.iter().map(|f| f.bacc).collect();
    let f1s: Vec<f64> = folds.iter().map(|f| f.f1).collect();
    let (bacc_mean, bacc_std) = mean_std(&baccs);
    let (f1_mean, f1_std) = mean_std(&f1s);
    let pooled = pooled_test(folds);
    let scored: Vec<Scored> = pooled.iter().map(|(_, s)| *s).collect();
    let median_split = median_split_gap(&scored);
    let mut subcohorts = Vec::new();
    if let Some(table) = factors {
        if !pooled.is_empty() {
            for (j, name) in table.names.iter().enumerate() {
                let values: Vec<f64> = pooled
                    .iter()
                    .map(|(r, _)| table.values.get(*r, j))
                    .collect();
                subcohorts.push(factor_subcohort_table(name, &values, &scored)?);
            }
        }
    }
    Ok(EvaluationReport {
        scheme,
        folds: folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                n_test: f.test_samples().count(),
                bacc: f.bacc,
                f1: f.f1,
            })
            .collect(),
        bacc_mean,
        bacc_std,
        f1_mean,
        f1_std,
        bacc_summary: summary(bacc_mean, bacc_std),
        f1_summary: summary(f1_mean, f1_std),
        median_split,
        subcohorts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_format() {
        assert_eq!(summary(0.637, 0.037), "63.7 ± 3.7");
        let (m, s) = mean_std(&[0.6, 0.7]);
        assert!((m - 0.65).abs() < 1e-12 && (s - 0.05).abs() < 1e-12);
    }
}
