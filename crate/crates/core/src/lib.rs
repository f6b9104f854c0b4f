//! Spectral factor-graph sample weighting.
//!
//! Per-sample loss weights are parameterized as `w = c + E a`, where the columns
//! of `E` are the low-frequency Laplacian eigenvectors of a k-nearest-neighbour
//! graph built over auxiliary factors (sex, age, ...). The coefficients `a` are
//! learned jointly with a recurrent classifier on the training rows only, and
//! the same coefficients give weights for held-out rows.
//!
//! Module map:
//!
//! * [`linalg`]: dense matrices and a cyclic Jacobi symmetric eigensolver.
//! * [`graph`]: factor standardization, the kNN similarity graph, its Laplacian
//!   and spectral basis.
//! * [`weights`]: the weight field, hinge penalty and coefficient gradient.
//! * [`model`]: cohort data, the GRU classifier and a logistic fallback.
//! * [`optim`]: the Adam optimizer.
//! * [`training`]: weighted training loops for every weighting scheme.
//! * [`evaluation`]: metrics, cross-validation, sub-cohort analysis and sweeps.
//! * [`synth`]: seeded synthetic cohorts with factor-dependent label noise.
//! * [`io`]: cohort CSV and model checkpoint formats.

pub mod error;
pub mod evaluation;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod training;
pub mod weights;

pub use error::{Error, Result};
pub use graph::{FactorGraph, FactorTable, MSelection, SpectralBasis};
pub use linalg::{DenseMatrix, EigenDecomposition};
pub use model::{Classifier, CohortDataset, LogisticClassifier, RecurrentClassifier, Subject};
pub use optim::AdamState;
pub use training::{Scheme, TrainConfig};
pub use weights::WeightField;
