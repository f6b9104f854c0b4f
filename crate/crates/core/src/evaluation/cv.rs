//! Subject-level stratified k-fold cross-validation.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluation::metrics::{balanced_accuracy, f1_score, threshold_labels};
use crate::graph::SpectralBasis;
use crate::model::{Classifier, CohortDataset};
use crate::rng;
use crate::training::{predict_rows, Scheme, Split, TrainConfig, TrainOutcome, Trainer};

/// Fold index for every sample. Each class is shuffled with `seed` and dealt
/// round-robin, continuing from class 0 into class 1, so per-class counts and
/// fold sizes each differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid("stratified k-fold needs k >= 2"));
    }
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(invalid(format!("label {y} is not binary")));
        }
        by_class[usize::from(y)].push(i);
    }
    let smallest = by_class.iter().map(Vec::len).min().unwrap_or(0);
    if k > smallest {
        return Err(invalid(format!(
            "{k} folds but the smaller class has only {smallest} samples"
        )));
    }
    let mut rng = rng::stream(seed, "folds", 0);
    let mut assignment = vec![0; labels.len()];
    let mut pos = 0;
    for class in &mut by_class {
        class.shuffle(&mut rng);
        for &i in class.iter() {
            assignment[i] = pos % k;
            pos += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub subject_id: String,
    pub row: usize,
    pub fold: usize,
    pub split: SplitKind,
    pub label: u8,
    /// Recorded for test rows.
    pub probability: Option<f64>,
    /// Absent where the scheme defines no weight (JTT test rows).
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub samples: Vec<SampleRecord>,
    pub bacc: f64,
    pub f1: f64,
}

impl FoldResult {
    pub fn test_samples(&self) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(|s| s.split == SplitKind::Test)
    }
}

/// Per-fold training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub fold: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub m_used: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub final_objective: f64,
    pub epoch_objectives: Vec<f64>,
    pub coeffs_a: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FoldRun<C> {
    pub result: FoldResult,
    pub outcome: TrainOutcome<C>,
    pub manifest: RunManifest,
}

/// Trains and evaluates one model per fold. Folds run in parallel; each owns
/// its model, optimizer state and weight field.
pub fn cross_validate<C, F>(
    data: &CohortDataset,
    basis: Option<Arc<SpectralBasis>>,
    cfg: &TrainConfig,
    folds: usize,
    init: F,
) -> Result<Vec<FoldRun<C>>>
where
    C: Classifier,
    F: Fn(&mut ChaCha8Rng) -> C + Sync,
{
    cfg.validate()?;
    if cfg.scheme.uses_graph() && basis.is_none() {
        return Err(invalid(format!(
            "scheme {} needs a spectral basis",
            cfg.scheme
        )));
    }
    let assignment = stratified_kfold(&data.labels(), folds, cfg.seed)?;
    (0..folds)
        .into_par_iter()
        .map(|fold| {
            let split = Split::new(
                (0..data.len()).filter(|&i| assignment[i] != fold).collect(),
                (0..data.len()).filter(|&i| assignment[i] == fold).collect(),
            );
            run_fold(data, basis.clone(), cfg, fold, &split, &init)
        })
        .collect()
}

fn run_fold<C, F>(
    data: &CohortDataset,
    basis: Option<Arc<SpectralBasis>>,
    cfg: &TrainConfig,
    fold: usize,
    split: &Split,
    init: &F,
) -> Result<FoldRun<C>>
where
    C: Classifier,
    F: Fn(&mut ChaCha8Rng) -> C,
{
    let m_used = basis.as_ref().map_or(0, |b| b.m_count());
    let trainer = Trainer::new(data, cfg, init)?;
    let outcome = trainer.train(basis, split)?;

    let probs = predict_rows(&outcome.model, data, &split.test)?;
    let test_weights: Vec<Option<f64>> = match (&outcome.field, cfg.scheme) {
        (Some(field), _) => field.weights(&split.test)?.into_iter().map(Some).collect(),
        (None, Scheme::None) => vec![Some(1.0); split.test.len()],
        (None, _) => vec![None; split.test.len()],
    };
    let labels: Vec<u8> = split.test.iter().map(|&r| data.subject(r).label).collect();
    let predicted = threshold_labels(&probs);
    let bacc = balanced_accuracy(&labels, &predicted)?;
    let f1 = f1_score(&labels, &predicted)?;

    let record = |row: usize, split: SplitKind, probability, weight| {
        let s = data.subject(row);
        SampleRecord {
            subject_id: s.id.clone(),
            row,
            fold,
            split,
            label: s.label,
            probability,
            weight,
        }
    };
    let mut samples: Vec<SampleRecord> = split
        .train
        .iter()
        .zip(&outcome.train_weights)
        .map(|(&r, &w)| record(r, SplitKind::Train, None, Some(w)))
        .collect();
    samples.extend(
        split
            .test
            .iter()
            .zip(probs.iter().zip(&test_weights))
            .map(|(&r, (&p, &w))| record(r, SplitKind::Test, Some(p), w)),
    );
    samples.sort_by_key(|s| s.row);

    let manifest = RunManifest {
        fold,
        seed: cfg.seed,
        config: cfg.clone(),
        m_used,
        n_train: split.train.len(),
        n_test: split.test.len(),
        final_objective: outcome.final_objective,
        epoch_objectives: outcome.epoch_objectives.clone(),
        coeffs_a: outcome.field.as_ref().map(|f| f.coeffs_a.clone()),
    };
    Ok(FoldRun {
        result: FoldResult {
            fold,
            samples,
            bacc,
            f1,
        },
        outcome,
        manifest,
    })
}
