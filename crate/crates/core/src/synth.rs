//! Seeded synthetic longitudinal cohorts with factor-dependent label noise.
//!
//! Each subject gets factors, a true label, and 1..=k visits of
//!
//! ```text
//! x_t = (2y - 1) · signal · u + t · drift · d + ε,   ε ~ N(0, I)
//! ```
//!
//! with fixed unit directions `u`, `d`. The observed label is the true label
//! flipped with probability `flip_low` when the noise factor is positive and
//! `flip_high` otherwise, so the two noise groups have different attainable
//! accuracy.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::FactorTable;
use crate::linalg::DenseMatrix;
use crate::model::{CohortDataset, Subject};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    /// 0 or 1 with equal probability.
    Binary,
    /// Standard normal.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub kind: FactorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub feature_width: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    pub factors: Vec<FactorSpec>,
    /// Factor whose sign selects the noise group.
    pub noise_factor: String,
    /// Label-flip probability when the noise factor is > 0.
    pub flip_low: f64,
    /// Label-flip probability otherwise.
    pub flip_high: f64,
    pub signal_strength: f64,
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 400,
            feature_width: 20,
            min_visits: 1,
            max_visits: 5,
            factors: vec![
                FactorSpec {
                    name: "sex".into(),
                    kind: FactorKind::Binary,
                },
                FactorSpec {
                    name: "ses".into(),
                    kind: FactorKind::Continuous,
                },
                FactorSpec {
                    name: "famhx".into(),
                    kind: FactorKind::Continuous,
                },
            ],
            noise_factor: "sex".into(),
            flip_low: 0.05,
            flip_high: 0.40,
            signal_strength: 1.0,
            drift: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(invalid("n_subjects must be at least 2"));
        }
        if self.feature_width < 2 {
            return Err(invalid("feature_width must be at least 2"));
        }
        if self.min_visits < 1 || self.max_visits < self.min_visits {
            return Err(invalid(
                "visit range must satisfy 1 <= min_visits <= max_visits",
            ));
        }
        for p in [self.flip_low, self.flip_high] {
            if !(0.0..0.5).contains(&p) {
                return Err(invalid(format!("flip probability {p} outside [0, 0.5)")));
            }
        }
        if self.factors.is_empty() {
            return Err(invalid("at least one factor is required"));
        }
        if !self.factors.iter().any(|f| f.name == self.noise_factor) {
            return Err(invalid(format!(
                "noise factor '{}' is not a factor",
                self.noise_factor
            )));
        }
        if !self.signal_strength.is_finite() || !self.drift.is_finite() {
            return Err(invalid("signal_strength and drift must be finite"));
        }
        Ok(())
    }

    /// Reads `key = value` pairs; missing keys keep their defaults.
    ///
    /// `factors` is a comma list of `name:binary` / `name:continuous`.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for (key, value) in pairs {
            let bad = || invalid(format!("bad value '{value}' for '{key}'"));
            match key.as_str() {
                "n_subjects" => spec.n_subjects = value.parse().map_err(|_| bad())?,
                "feature_width" => spec.feature_width = value.parse().map_err(|_| bad())?,
                "min_visits" => spec.min_visits = value.parse().map_err(|_| bad())?,
                "max_visits" => spec.max_visits = value.parse().map_err(|_| bad())?,
                "noise_factor" => spec.noise_factor = value.clone(),
                "flip_low" => spec.flip_low = value.parse().map_err(|_| bad())?,
                "flip_high" => spec.flip_high = value.parse().map_err(|_| bad())?,
                "signal_strength" => spec.signal_strength = value.parse().map_err(|_| bad())?,
                "drift" => spec.drift = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "factors" => {
                    spec.factors = value
                        .split(',')
                        .map(|item| {
                            let (name, kind) = item.trim().split_once(':').ok_or_else(bad)?;
                            let kind = match kind.trim() {
                                "binary" => FactorKind::Binary,
                                "continuous" => FactorKind::Continuous,
                                _ => return Err(bad()),
                            };
                            Ok(FactorSpec {
                                name: name.trim().to_string(),
                                kind,
                            })
                        })
                        .collect::<Result<_>>()?
                }
                other => return Err(invalid(format!("unknown synth key '{other}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseGroup {
    Low,
    High,
}

impl NoiseGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseGroup::Low => "low",
            NoiseGroup::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub dataset: CohortDataset,
    /// Raw (unstandardized) factor values, one row per subject.
    pub factors: FactorTable,
    pub noise_groups: Vec<NoiseGroup>,
    pub true_labels: Vec<u8>,
}

fn unit_direction<R: Rng>(rng: &mut R, f: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCohort> {
    spec.validate()?;
    let f = spec.feature_width;
    let mut rng = rng::stream(spec.seed, "synth", 0);
    let signal_dir = unit_direction(&mut rng, f);
    let drift_dir = unit_direction(&mut rng, f);
    let noise_idx = spec
        .factors
        .iter()
        .position(|x| x.name == spec.noise_factor)
        .expect("validated");
    let width = (spec.n_subjects.max(2) - 1).to_string().len().max(4);

    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut factor_values = Vec::with_capacity(spec.n_subjects * spec.factors.len());
    let mut noise_groups = Vec::with_capacity(spec.n_subjects);
    let mut true_labels = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let factors: Vec<f64> = spec
            .factors
            .iter()
            .map(|fs| match fs.kind {
                FactorKind::Binary => f64::from(u8::from(rng.random_bool(0.5))),
                FactorKind::Continuous => rng.sample(StandardNormal),
            })
            .collect();
        let y = u8::from(rng.random_bool(0.5));
        let n_visits = rng.random_range(spec.min_visits..=spec.max_visits);
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let visits = (0..n_visits)
            .map(|t| {
                (0..f)
                    .map(|j| {
                        let noise: f64 = rng.sample(StandardNormal);
                        sign * spec.signal_strength * signal_dir[j]
                            + t as f64 * spec.drift * drift_dir[j]
                            + noise
                    })
                    .collect()
            })
            .collect();
        let group = if factors[noise_idx] > 0.0 {
            NoiseGroup::Low
        } else {
            NoiseGroup::High
        };
        let flip_p = match group {
            NoiseGroup::Low => spec.flip_low,
            NoiseGroup::High => spec.flip_high,
        };
        let observed = if rng.random_bool(flip_p) { 1 - y } else { y };
        subjects.push(Subject {
            id: format!("S{i:0width$}"),
            visits,
            label: observed,
        });
        factor_values.extend(factors);
        noise_groups.push(group);
        true_labels.push(y);
    }
    let factors = FactorTable::new(
        spec.factors.iter().map(|f| f.name.clone()).collect(),
        DenseMatrix::new(spec.n_subjects, spec.factors.len(), factor_values)?,
    )?;
    Ok(SynthCohort {
        dataset: CohortDataset::new(subjects)?,
        factors,
        noise_groups,
        true_labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMoments {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_subjects: usize,
    pub positive_fraction: f64,
    pub min_visits: usize,
    pub max_visits: usize,
    pub mean_visits: f64,
    pub std_visits: f64,
    /// `(visit count, subjects)` pairs.
    pub visit_histogram: Vec<(usize, usize)>,
    pub factors: Vec<FactorMoments>,
}

pub fn describe(dataset: &CohortDataset, factors: &FactorTable) -> CohortSummary {
    let n = dataset.len() as f64;
    let counts: Vec<usize> = dataset.subjects().iter().map(|s| s.visits.len()).collect();
    let mean_visits = counts.iter().sum::<usize>() as f64 / n;
    let std_visits = (counts
        .iter()
        .map(|&c| (c as f64 - mean_visits).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let mut hist = BTreeMap::new();
    for &c in &counts {
        *hist.entry(c).or_insert(0) += 1;
    }
    let moments = (0..factors.n_factors())
        .map(|j| {
            let col = factors.values.column(j);
            let m = col.len().max(1) as f64;
            let mean = col.iter().sum::<f64>() / m;
            FactorMoments {
                name: factors.names[j].clone(),
                mean,
                std: (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt(),
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    CohortSummary {
        n_subjects: dataset.len(),
        positive_fraction: dataset.labels().iter().map(|&y| f64::from(y)).sum::<f64>() / n,
        min_visits: counts.iter().copied().min().unwrap_or(0),
        max_visits: counts.iter().copied().max().unwrap_or(0),
        mean_visits,
        std_visits,
        visit_histogram: hist.into_iter().collect(),
        factors: moments,
    }
}
