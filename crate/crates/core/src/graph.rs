//! Factor-similarity graph over all samples and its Laplacian eigenbasis.
//!
//! Factors are z-scored over every sample (train and test alike), then
//!
//! ```text
//! A_ij = 1 / (Σ_d (s_i^d - s_j^d)² + 1)   if i ∈ knn(j) or j ∈ knn(i)
//!      = 0                               otherwise
//! ```
//!
//! The basis keeps the first `M` Laplacian eigenvectors whose eigenvalues are
//! above [`NULL_TOL`]. Every kept column sums to zero because it is orthogonal
//! to the null space, which contains the component indicators.

use std::fmt;
use std::str::FromStr;

use crate::error::{dim, invalid, Error, Result};
use crate::linalg::{symmetric_eigen, DenseMatrix, EigenDecomposition};

/// Eigenvalues at or below this are treated as null (one per component).
pub const NULL_TOL: f64 = 1e-8;
/// Upper bound on the automatically selected basis size.
pub const MAX_AUTO_M: usize = 50;
pub const MIN_AUTO_M: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub names: Vec<String>,
    /// Sample × factor.
    pub values: DenseMatrix,
}

impl FactorTable {
    pub fn new(names: Vec<String>, values: DenseMatrix) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(dim(format!(
                "{} factor names for {} columns",
                names.len(),
                values.cols()
            )));
        }
        Ok(Self { names, values })
    }

    pub fn n_samples(&self) -> usize {
        self.values.rows()
    }

    pub fn n_factors(&self) -> usize {
        self.values.cols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.column(j))
    }

    /// Z-scores every column with the population standard deviation, computed
    /// over all samples. Constant columns become zeros.
    pub fn standardize(&self) -> Result<FactorTable> {
        let (n, d) = (self.n_samples(), self.n_factors());
        if n == 0 || d == 0 {
            return Err(Error::InvalidData("empty factor table".into()));
        }
        if n < 2 {
            return Err(Error::InvalidData(
                "standardization needs at least 2 samples".into(),
            ));
        }
        let mut stats = Vec::with_capacity(d);
        for j in 0..d {
            let col = self.values.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            stats.push((mean, var.sqrt()));
        }
        let values = DenseMatrix::from_fn(n, d, |i, j| {
            let (mean, sd) = stats[j];
            if sd > 0.0 {
                (self.values.get(i, j) - mean) / sd
            } else {
                0.0
            }
        })?;
        Ok(FactorTable {
            names: self.names.clone(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    pub adjacency: DenseMatrix,
    pub k_neighbors: usize,
    pub degree: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest other samples to `i` by squared Euclidean
/// distance, ties going to the lower index.
pub fn nearest_neighbors(factors: &DenseMatrix, i: usize, k: usize) -> Vec<usize> {
    let me = factors.row(i);
    let mut cand: Vec<(f64, usize)> = (0..factors.rows())
        .filter(|&j| j != i)
        .map(|j| (squared_distance(me, factors.row(j)), j))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Builds the union-kNN similarity graph over standardized factors.
pub fn build_graph(factors: &FactorTable, k: usize) -> Result<FactorGraph> {
    let n = factors.n_samples();
    if n < 2 {
        return Err(Error::InvalidData("graph needs at least 2 samples".into()));
    }
    if k == 0 || k >= n {
        return Err(invalid(format!("k = {k} must lie in [1, {})", n)));
    }
    let s = &factors.values;
    let mut linked = vec![false; n * n];
    for i in 0..n {
        for j in nearest_neighbors(s, i, k) {
            linked[i * n + j] = true;
            linked[j * n + i] = true;
        }
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            if linked[i * n + j] {
                let w = 1.0 / (squared_distance(s.row(i), s.row(j)) + 1.0);
                a[i * n + j] = w;
                a[j * n + i] = w;
            }
        }
    }
    let adjacency = DenseMatrix::new(n, n, a)?;
    let degree = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
    Ok(FactorGraph {
        adjacency,
        k_neighbors: k,
        degree,
    })
}

/// Unnormalized Laplacian `Deg - A`.
pub fn laplacian(g: &FactorGraph) -> DenseMatrix {
    let n = g.adjacency.rows();
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            g.degree[i]
        } else {
            -g.adjacency.get(i, j)
        }
    })
    .expect("finite adjacency gives a finite Laplacian")
}

/// Number of eigenbases to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MSelection {
    /// Largest relative eigenvalue gap, see [`select_m_changepoint`].
    Auto,
    Fixed(usize),
}

impl fmt::Display for MSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MSelection::Auto => f.write_str("auto"),
            MSelection::Fixed(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for MSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(MSelection::Auto);
        }
        s.parse()
            .map(MSelection::Fixed)
            .map_err(|_| invalid(format!("m must be 'auto' or a count, got '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// N × M, columns orthonormal and zero-sum.
    pub basis: DenseMatrix,
    /// λ₁…λ_M, ascending, all above [`NULL_TOL`].
    pub eigenvalues: Vec<f64>,
    /// Every Laplacian eigenvalue, ascending (null ones included).
    pub spectrum: Vec<f64>,
    /// Number of discarded null eigenpairs, i.e. connected components.
    pub null_dim: usize,
}

impl SpectralBasis {
    pub fn m_count(&self) -> usize {
        self.basis.cols()
    }

    pub fn n_samples(&self) -> usize {
        self.basis.rows()
    }

    /// Basis with no columns: weights reduce to the constant `c`.
    pub fn empty(n: usize) -> Self {
        Self {
            basis: DenseMatrix::zeros(n, 0),
            eigenvalues: Vec::new(),
            spectrum: Vec::new(),
            null_dim: 0,
        }
    }
}

/// Picks `M` at the largest ratio `λ_{k+1} / λ_k` among the first 50 non-null
/// eigenvalues (1-based `k`, ties to the smaller `k`), clamped to `[2, 50]`.
pub fn select_m_changepoint(non_null: &[f64]) -> Result<usize> {
    if non_null.len() < 2 {
        return Err(invalid(format!(
            "change-point selection needs 2 non-null eigenvalues, got {}",
            non_null.len()
        )));
    }
    let head = &non_null[..non_null.len().min(MAX_AUTO_M)];
    let mut best = (f64::NEG_INFINITY, 1);
    for (k, w) in head.windows(2).enumerate() {
        let ratio = w[1] / w[0];
        if ratio > best.0 {
            best = (ratio, k + 1);
        }
    }
    Ok(best.1.clamp(MIN_AUTO_M, MAX_AUTO_M))
}

/// Keeps the first `m` non-null eigenpairs of an existing decomposition.
pub fn basis_from_decomposition(eig: &EigenDecomposition, m: MSelection) -> Result<SpectralBasis> {
    let null_dim = eig
        .eigenvalues
        .iter()
        .take_while(|&&l| l <= NULL_TOL)
        .count();
    let non_null = &eig.eigenvalues[null_dim..];
    let m = match m {
        MSelection::Fixed(m) => m,
        MSelection::Auto => select_m_changepoint(non_null)?,
    };
    if m > non_null.len() {
        return Err(invalid(format!(
            "m = {m} exceeds the {} non-null eigenpairs",
            non_null.len()
        )));
    }
    Ok(SpectralBasis {
        basis: eig.eigenvectors.column_block(null_dim, m)?,
        eigenvalues: non_null[..m].to_vec(),
        spectrum: eig.eigenvalues.clone(),
        null_dim,
    })
}

pub fn spectral_basis(lap: &DenseMatrix, m: MSelection) -> Result<SpectralBasis> {
    basis_from_decomposition(&symmetric_eigen(lap)?, m)
}

/// Standardize, build the graph, and extract the basis in one go.
pub fn factor_basis(
    raw: &FactorTable,
    k: usize,
    m: MSelection,
) -> Result<(FactorGraph, SpectralBasis)> {
    let g = build_graph(&raw.standardize()?, k)?;
    let basis = spectral_basis(&laplacian(&g), m)?;
    Ok((g, basis))
}
