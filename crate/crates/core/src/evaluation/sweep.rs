//! Full factorial sweep over neighbour count and centering weight.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluation::cv::cross_validate;
use crate::evaluation::report::pooled_test;
use crate::evaluation::subcohort::{median_split_gap, Scored};
use crate::graph::{factor_basis, FactorTable, SpectralBasis};
use crate::model::{Classifier, CohortDataset};
use crate::training::{Scheme, TrainConfig};

pub const DEFAULT_K_GRID: [usize; 5] = [10, 30, 50, 75, 100];
pub const DEFAULT_C_GRID: [f64; 5] = [0.5, 0.65, 0.7, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub c: f64,
    pub seed: u64,
    pub m_used: usize,
    pub gap_percent: f64,
    pub gap_points: f64,
    pub degenerate: bool,
    pub bacc_mean: f64,
}

/// Runs spectral cross-validation for every `(k, c)` pair. Cell `i` (k-major)
/// uses seed `cfg.seed + i`; cells run in parallel.
pub fn sweep<C, F>(
    data: &CohortDataset,
    factors: &FactorTable,
    ks: &[usize],
    cs: &[f64],
    cfg: &TrainConfig,
    folds: usize,
    init: F,
) -> Result<Vec<SweepCell>>
where
    C: Classifier,
    F: Fn(&mut ChaCha8Rng) -> C + Sync,
{
    if ks.is_empty() || cs.is_empty() {
        return Err(invalid("sweep needs at least one k and one c"));
    }
    let bases: Vec<Arc<SpectralBasis>> = ks
        .par_iter()
        .map(|&k| factor_basis(factors, k, cfg.m_basis).map(|(_, b)| Arc::new(b)))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..ks.len())
        .flat_map(|i| (0..cs.len()).map(move |j| (i, j)))
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(ki, ci))| {
            let cell_cfg = TrainConfig {
                scheme: Scheme::Spectral,
                k_neighbors: ks[ki],
                centering_c: cs[ci],
                seed: cfg.seed.wrapping_add(idx as u64),
                ..cfg.clone()
            };
            let runs = cross_validate(data, Some(bases[ki].clone()), &cell_cfg, folds, &init)?;
            let results: Vec<_> = runs.into_iter().map(|r| r.result).collect();
            let scored: Vec<Scored> = pooled_test(&results).into_iter().map(|(_, s)| s).collect();
            let split = median_split_gap(&scored);
            Ok(SweepCell {
                k: ks[ki],
                c: cs[ci],
                seed: cell_cfg.seed,
                m_used: bases[ki].m_count(),
                gap_percent: split.gap_percent,
                gap_points: split.gap_points,
                degenerate: split.degenerate,
                bacc_mean: results.iter().map(|r| r.bacc).sum::<f64>() / results.len() as f64,
            })
        })
        .collect()
}
