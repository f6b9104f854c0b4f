//! Sample weights as `w = c + E a` over the spectral basis.
//!
//! Training rows and held-out rows use the same formula; only the training
//! rows ever feed the gradient for `a`.

use std::sync::Arc;

use crate::error::{dim, invalid, Result};
use crate::graph::SpectralBasis;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub centering_c: f64,
    pub coeffs_a: Vec<f64>,
    pub basis: Arc<SpectralBasis>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

impl WeightField {
    /// Field with `a = 0`, i.e. uniform weights `c`.
    pub fn new(
        basis: Arc<SpectralBasis>,
        centering_c: f64,
        train_rows: Vec<usize>,
        test_rows: Vec<usize>,
    ) -> Result<Self> {
        check_partition(basis.n_samples(), &train_rows, &test_rows)?;
        let m = basis.m_count();
        Ok(Self {
            centering_c,
            coeffs_a: vec![0.0; m],
            basis,
            train_rows,
            test_rows,
        })
    }

    pub fn with_coeffs(mut self, a: Vec<f64>) -> Result<Self> {
        if a.len() != self.basis.m_count() {
            return Err(dim(format!(
                "{} coefficients for {} basis columns",
                a.len(),
                self.basis.m_count()
            )));
        }
        self.coeffs_a = a;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.basis.n_samples()
    }

    pub fn weight(&self, row: usize) -> Result<f64> {
        if self.coeffs_a.len() != self.basis.m_count() {
            return Err(dim("coefficient vector does not match basis"));
        }
        if row >= self.n_samples() {
            return Err(invalid(format!(
                "row {row} out of range for {} samples",
                self.n_samples()
            )));
        }
        let e = self.basis.basis.row(row);
        Ok(self.centering_c
            + e.iter()
                .zip(&self.coeffs_a)
                .map(|(e, a)| e * a)
                .sum::<f64>())
    }

    /// `w_i = c + Σ_j e_ij a_j` for each requested row.
    pub fn weights(&self, rows: &[usize]) -> Result<Vec<f64>> {
        rows.iter().map(|&r| self.weight(r)).collect()
    }

    pub fn all_weights(&self) -> Vec<f64> {
        (0..self.n_samples())
            .map(|r| self.weight(r).expect("row in range"))
            .collect()
    }

    /// Gradient of `Σ w_i l_i + Σ max(0, -w_i)` with respect to `a` over `rows`,
    /// with the losses held fixed.
    pub fn grad_a(&self, rows: &[usize], losses: &[f64]) -> Result<Vec<f64>> {
        if rows.len() != losses.len() {
            return Err(dim(format!(
                "{} losses for {} rows",
                losses.len(),
                rows.len()
            )));
        }
        let mut grad = vec![0.0; self.basis.m_count()];
        for (&r, &l) in rows.iter().zip(losses) {
            let w = self.weight(r)?;
            // Hinge subgradient is 0 at w = 0.
            let coef = l - if w < 0.0 { 1.0 } else { 0.0 };
            for (g, e) in grad.iter_mut().zip(self.basis.basis.row(r)) {
                *g += e * coef;
            }
        }
        Ok(grad)
    }

    /// `Σ w_i l_i + Σ max(0, -w_i)` over `rows`.
    pub fn objective(&self, rows: &[usize], losses: &[f64]) -> Result<f64> {
        if rows.len() != losses.len() {
            return Err(dim("losses do not match rows"));
        }
        let w = self.weights(rows)?;
        Ok(w.iter().zip(losses).map(|(w, l)| w * l).sum::<f64>() + negativity_penalty(&w))
    }
}

/// `Σ max(0, -w_i)`.
pub fn negativity_penalty(weights: &[f64]) -> f64 {
    weights.iter().map(|w| (-w).max(0.0)).sum()
}

fn check_partition(n: usize, train: &[usize], test: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    for &r in train.iter().chain(test) {
        if r >= n {
            return Err(invalid(format!("row {r} out of range for {n} samples")));
        }
        if std::mem::replace(&mut seen[r], true) {
            return Err(invalid(format!("row {r} assigned twice")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(invalid("train and test rows do not cover every sample"));
    }
    Ok(())
}
