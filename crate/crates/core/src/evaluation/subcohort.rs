//! Weight-based and factor-based sub-cohort comparisons over pooled test rows.

use serde::{Deserialize, Serialize};

use crate::error::{dim, Result};
use crate::evaluation::metrics::{balanced_accuracy, threshold_labels};
use crate::evaluation::stats::{mann_whitney_u, significance};

/// One pooled test observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub label: u8,
    pub probability: f64,
    /// Absent for schemes that assign no test-time weight.
    pub weight: Option<f64>,
}

fn bacc_of(samples: &[Scored]) -> Option<f64> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let probs: Vec<f64> = samples.iter().map(|s| s.probability).collect();
    balanced_accuracy(&labels, &threshold_labels(&probs)).ok()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianSplit {
    pub median_weight: f64,
    pub n_high: usize,
    pub n_low: usize,
    pub bacc_high: Option<f64>,
    pub bacc_low: Option<f64>,
    /// `100 (bacc_high - bacc_low)`: difference in percentage points.
    pub gap_points: f64,
    /// `100 (bacc_high - bacc_low) / bacc_low`: difference relative to the low side.
    pub gap_percent: f64,
    /// Set when a side is empty or lacks a class, in which case both gaps are 0.
    pub degenerate: bool,
}

/// Splits at the median weight (ties to the low side) and compares BACC.
/// Degenerate when there are no samples or any lacks a weight.
pub fn median_split_gap(samples: &[Scored]) -> MedianSplit {
    let weights: Option<Vec<f64>> = samples.iter().map(|s| s.weight).collect();
    let weights = match weights {
        Some(w) if !w.is_empty() => w,
        _ => {
            return MedianSplit {
                median_weight: 0.0,
                n_high: 0,
                n_low: 0,
                bacc_high: None,
                bacc_low: None,
                gap_points: 0.0,
                gap_percent: 0.0,
                degenerate: true,
            }
        }
    };
    let med = median(&weights);
    let (high, low): (Vec<Scored>, Vec<Scored>) = samples
        .iter()
        .partition(|s| s.weight.is_some_and(|w| w > med));
    let bacc_high = bacc_of(&high);
    let bacc_low = bacc_of(&low);
    let (gap_points, gap_percent, degenerate) = match (bacc_high, bacc_low) {
        (Some(h), Some(l)) if l > 0.0 => (100.0 * (h - l), 100.0 * (h - l) / l, false),
        _ => (0.0, 0.0, true),
    };
    MedianSplit {
        median_weight: med,
        n_high: high.len(),
        n_low: low.len(),
        bacc_high,
        bacc_low,
        gap_points,
        gap_percent,
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binning {
    /// At most two distinct values, one group per value.
    Binary,
    /// Equal-count thirds by rank, tied values kept in the lowest bin they reach.
    Tertile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub mean_weight: Option<f64>,
    pub bacc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub group_a: String,
    pub group_b: String,
    pub u: f64,
    pub p_value: f64,
    pub significance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcohortReport {
    pub factor: String,
    pub binning: Binning,
    pub groups: Vec<GroupStats>,
    pub pairwise: Vec<PairTest>,
}

/// Group index for every sample under `binning`.
pub fn assign_bins(values: &[f64]) -> (Binning, Vec<usize>) {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= 2 {
        let bins = values
            .iter()
            .map(|v| distinct.iter().position(|d| d == v).expect("value present"))
            .collect();
        return (Binning::Binary, bins);
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let mut bins = vec![0; n];
    let mut run_bin = 0;
    for (rank, &i) in order.iter().enumerate() {
        let tied = rank > 0 && values[order[rank - 1]] == values[i];
        if !tied {
            run_bin = rank * 3 / n;
        }
        bins[i] = run_bin;
    }
    (Binning::Tertile, bins)
}

/// Bins samples by one factor and compares accuracy across bins, and weights
/// too when every sample has one.
pub fn factor_subcohort_table(
    factor: &str,
    values: &[f64],
    samples: &[Scored],
) -> Result<SubcohortReport> {
    if values.len() != samples.len() {
        return Err(dim(format!(
            "{} factor values for {} samples",
            values.len(),
            samples.len()
        )));
    }
    let (binning, bins) = assign_bins(values);
    let n_groups = bins.iter().max().map_or(0, |m| m + 1);
    let mut groups = Vec::new();
    let mut members: Vec<Vec<Scored>> = Vec::new();
    for g in 0..n_groups {
        let idx: Vec<usize> = (0..values.len()).filter(|&i| bins[i] == g).collect();
        if idx.is_empty() {
            continue;
        }
        let vals: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        let group: Vec<Scored> = idx.iter().map(|&i| samples[i]).collect();
        let lower = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let name = match binning {
            Binning::Binary => format!("{factor}={lower}"),
            Binning::Tertile => format!("{factor}[{lower:.3},{upper:.3}]"),
        };
        groups.push(GroupStats {
            group: name,
            lower,
            upper,
            n: group.len(),
            mean_weight: group
                .iter()
                .map(|s| s.weight)
                .sum::<Option<f64>>()
                .map(|t| t / group.len() as f64),
            bacc: bacc_of(&group),
        });
        members.push(group);
    }
    let mut pairwise = Vec::new();
    let weighted = samples.iter().all(|s| s.weight.is_some());
    for a in 0..groups.len() {
        for b in (a + 1)..groups.len() {
            if !weighted {
                continue;
            }
            let wa: Vec<f64> = members[a].iter().filter_map(|s| s.weight).collect();
            let wb: Vec<f64> = members[b].iter().filter_map(|s| s.weight).collect();
            let t = mann_whitney_u(&wa, &wb)?;
            pairwise.push(PairTest {
                group_a: groups[a].group.clone(),
                group_b: groups[b].group.clone(),
                u: t.u,
                p_value: t.p_value,
                significance: significance(t.p_value).to_string(),
            });
        }
    }
    Ok(SubcohortReport {
        factor: factor.to_string(),
        binning,
        groups,
        pairwise,
    })
}
