//! Weighted training loops.
//!
//! Every scheme shares one mini-batch loop that minimizes, per batch `B`,
//!
//! ```text
//! (Σ_{i∈B} w_i l_i + Σ_{i∈B} max(0, -w_i)) / |B|
//! ```
//!
//! Model parameters and the weight coefficients (when learned) are updated by
//! separate Adam states from the same forward/backward pass. Only training
//! rows are ever visited.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::graph::{MSelection, SpectralBasis};
use crate::model::{bce_grad_logit, bce_loss, Classifier, CohortDataset, RecurrentClassifier};
use crate::optim::AdamState;
use crate::rng;
use crate::weights::{negativity_penalty, WeightField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    Spectral,
    OnlyGraph,
    Jtt,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::None,
        Scheme::Spectral,
        Scheme::OnlyGraph,
        Scheme::Jtt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::Spectral => "spectral",
            Scheme::OnlyGraph => "only_graph",
            Scheme::Jtt => "jtt",
        }
    }

    pub fn uses_graph(self) -> bool {
        matches!(self, Scheme::Spectral | Scheme::OnlyGraph)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| {
                invalid(format!(
                    "unknown scheme '{s}' (expected none, spectral, only_graph or jtt)"
                ))
            })
    }
}

impl Serialize for MSelection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub epochs: usize,
    pub lr_model: f64,
    /// Zero freezes the coefficients at their initial value.
    pub lr_a: f64,
    pub batch_size: usize,
    pub k_neighbors: usize,
    pub centering_c: f64,
    pub m_basis: MSelection,
    pub jtt_lambda: f64,
    pub seed: u64,
    pub hidden: usize,
    pub hidden2: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Spectral,
            epochs: 100,
            lr_model: 1e-4,
            lr_a: 1e-5,
            batch_size: 32,
            k_neighbors: 50,
            centering_c: 0.65,
            m_basis: MSelection::Auto,
            jtt_lambda: 2.0,
            seed: 0,
            hidden: RecurrentClassifier::DEFAULT_HIDDEN,
            hidden2: RecurrentClassifier::DEFAULT_HIDDEN2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.lr_model > 0.0 && self.lr_model.is_finite()) {
            return Err(invalid("lr_model must be positive"));
        }
        if !(self.lr_a >= 0.0 && self.lr_a.is_finite()) {
            return Err(invalid("lr_a must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if !self.centering_c.is_finite() {
            return Err(invalid("centering c must be finite"));
        }
        if !(self.jtt_lambda >= 1.0 && self.jtt_lambda.is_finite()) {
            return Err(invalid("jtt_lambda must be >= 1"));
        }
        if self.hidden == 0 || self.hidden2 == 0 {
            return Err(invalid("hidden sizes must be positive"));
        }
        Ok(())
    }

    /// Fresh recurrent model with this config's hidden sizes.
    pub fn recurrent_init(
        &self,
        feature_width: usize,
    ) -> impl Fn(&mut ChaCha8Rng) -> RecurrentClassifier + '_ {
        move |rng| RecurrentClassifier::init(feature_width, self.hidden, self.hidden2, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(train: Vec<usize>, test: Vec<usize>) -> Self {
        Self { train, test }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<C> {
    pub model: C,
    /// Present for the graph-based schemes.
    pub field: Option<WeightField>,
    /// Final weight of each training row, aligned with `Split::train`.
    pub train_weights: Vec<f64>,
    /// Training-row weights at the end of every epoch.
    pub weight_history: Vec<Vec<f64>>,
    /// Mean per-sample objective of every epoch, accumulated over batches.
    pub epoch_objectives: Vec<f64>,
    /// Mean per-sample objective of the final model over all training rows.
    pub final_objective: f64,
}

enum Weighting<'a> {
    Uniform(f64),
    /// Per-row weights indexed by global sample index.
    Fixed(&'a [f64]),
    Field {
        field: WeightField,
        learn: bool,
    },
}

impl Weighting<'_> {
    fn weight(&self, row: usize) -> Result<f64> {
        match self {
            Weighting::Uniform(w) => Ok(*w),
            Weighting::Fixed(w) => Ok(w[row]),
            Weighting::Field { field, .. } => field.weight(row),
        }
    }
}

/// Trains classifiers built by `init` on one dataset under one config.
pub struct Trainer<'a, F> {
    data: &'a CohortDataset,
    cfg: &'a TrainConfig,
    init: F,
}

impl<'a, C, F> Trainer<'a, F>
where
    C: Classifier,
    F: Fn(&mut ChaCha8Rng) -> C,
{
    pub fn new(data: &'a CohortDataset, cfg: &'a TrainConfig, init: F) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { data, cfg, init })
    }

    /// Dispatches on `cfg.scheme`. Graph schemes need a basis.
    pub fn train(
        &self,
        basis: Option<Arc<SpectralBasis>>,
        split: &Split,
    ) -> Result<TrainOutcome<C>> {
        match (self.cfg.scheme, basis) {
            (Scheme::None, _) => self.train_baseline_none(split),
            (Scheme::Jtt, _) => self.train_jtt(split).map(|(out, _)| out),
            (Scheme::Spectral, Some(b)) => self.train_spectral(b, split),
            (Scheme::OnlyGraph, Some(b)) => self.train_only_graph(b, split),
            (s, None) => Err(invalid(format!("scheme {s} needs a spectral basis"))),
        }
    }

    /// Learns `a` (from zero) jointly with the model.
    pub fn train_spectral(
        &self,
        basis: Arc<SpectralBasis>,
        split: &Split,
    ) -> Result<TrainOutcome<C>> {
        let field = WeightField::new(
            basis,
            self.cfg.centering_c,
            split.train.clone(),
            split.test.clone(),
        )?;
        self.run(
            self.cfg.seed,
            split,
            Weighting::Field { field, learn: true },
        )
    }

    /// Unit weights.
    pub fn train_baseline_none(&self, split: &Split) -> Result<TrainOutcome<C>> {
        self.check_split(split)?;
        self.run(self.cfg.seed, split, Weighting::Uniform(1.0))
    }

    /// Weights from the graph alone: `a` is pinned to all ones.
    pub fn train_only_graph(
        &self,
        basis: Arc<SpectralBasis>,
        split: &Split,
    ) -> Result<TrainOutcome<C>> {
        let m = basis.m_count();
        let field = WeightField::new(
            basis,
            self.cfg.centering_c,
            split.train.clone(),
            split.test.clone(),
        )?
        .with_coeffs(vec![1.0; m])?;
        self.run(
            self.cfg.seed,
            split,
            Weighting::Field {
                field,
                learn: false,
            },
        )
    }

    /// Just-train-twice: an unweighted first model, then a fresh model (seed + 1)
    /// with weight `λ` on rows the first model misclassified at 0.5 and 1
    /// elsewhere. Returns the second run and the first.
    pub fn train_jtt(&self, split: &Split) -> Result<(TrainOutcome<C>, TrainOutcome<C>)> {
        let stage1 = self.train_baseline_none(split)?;
        let mut weights = vec![1.0; self.data.len()];
        for &row in &split.train {
            let s = self.data.subject(row);
            let p = stage1.model.predict(&s.visits)?;
            let predicted = u8::from(p >= 0.5);
            if predicted != s.label {
                weights[row] = self.cfg.jtt_lambda;
            }
        }
        let stage2 = self.run(
            self.cfg.seed.wrapping_add(1),
            split,
            Weighting::Fixed(&weights),
        )?;
        Ok((stage2, stage1))
    }

    fn check_split(&self, split: &Split) -> Result<()> {
        let n = self.data.len();
        if split.train.is_empty() {
            return Err(invalid("empty training split"));
        }
        let mut seen = vec![false; n];
        for &r in split.train.iter().chain(&split.test) {
            if r >= n || std::mem::replace(&mut seen[r], true) {
                return Err(invalid(format!(
                    "split row {r} is out of range or repeated"
                )));
            }
        }
        Ok(())
    }

    fn run(
        &self,
        seed: u64,
        split: &Split,
        mut weighting: Weighting<'_>,
    ) -> Result<TrainOutcome<C>> {
        self.check_split(split)?;
        let cfg = self.cfg;
        let mut init_rng = rng::stream(seed, "init", 0);
        let mut shuffle_rng = rng::stream(seed, "shuffle", 0);
        let mut model = (self.init)(&mut init_rng);
        if model.feature_width() != self.data.feature_width() {
            return Err(invalid("model width does not match the data"));
        }
        let mut adam_model = AdamState::new(model.n_params());
        let m = match &weighting {
            Weighting::Field { field, .. } => field.coeffs_a.len(),
            _ => 0,
        };
        let mut adam_a = AdamState::new(m);

        let mut order = split.train.clone();
        let mut grad = vec![0.0; model.n_params()];
        let mut epoch_objectives = Vec::with_capacity(cfg.epochs);
        let mut weight_history: Vec<Vec<f64>> = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut losses = Vec::with_capacity(batch.len());
                let mut batch_total = 0.0;
                for &row in batch {
                    let s = self.data.subject(row);
                    let w = weighting.weight(row)?;
                    let (p, cache) = model.forward(&s.visits)?;
                    let l = bce_loss(p, s.label);
                    model.backward_logit(
                        &cache,
                        w * bce_grad_logit(p, s.label) * scale,
                        &mut grad,
                    )?;
                    batch_total += w * l + (-w).max(0.0);
                    losses.push(l);
                }
                if !batch_total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training objective in epoch {}",
                        epoch + 1
                    )));
                }
                epoch_total += batch_total;
                if let Weighting::Field { field, learn: true } = &mut weighting {
                    let mut ga = field.grad_a(batch, &losses)?;
                    ga.iter_mut().for_each(|g| *g *= scale);
                    adam_a.step(&mut field.coeffs_a, &ga, cfg.lr_a)?;
                }
                adam_model.step(model.params_mut(), &grad, cfg.lr_model)?;
                if model.params().iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "model parameters in epoch {}",
                        epoch + 1
                    )));
                }
            }
            epoch_objectives.push(epoch_total / order.len() as f64);
            weight_history.push(
                split
                    .train
                    .iter()
                    .map(|&r| weighting.weight(r))
                    .collect::<Result<_>>()?,
            );
        }

        let train_weights = weight_history.last().cloned().unwrap_or_default();
        let final_objective = weighted_objective(&model, self.data, &split.train, &train_weights)?
            / split.train.len() as f64;
        if !final_objective.is_finite() {
            return Err(Error::NonFinite("final training objective".into()));
        }
        let field = match weighting {
            Weighting::Field { field, .. } => Some(field),
            _ => None,
        };
        Ok(TrainOutcome {
            model,
            field,
            train_weights,
            weight_history,
            epoch_objectives,
            final_objective,
        })
    }
}

/// `Σ w_i l_i + Σ max(0, -w_i)` over `rows`, with `weights` aligned to `rows`.
pub fn weighted_objective<C: Classifier>(
    model: &C,
    data: &CohortDataset,
    rows: &[usize],
    weights: &[f64],
) -> Result<f64> {
    if rows.len() != weights.len() {
        return Err(invalid("weights do not match rows"));
    }
    let mut total = 0.0;
    for (&r, &w) in rows.iter().zip(weights) {
        let s = data.subject(r);
        total += w * bce_loss(model.predict(&s.visits)?, s.label);
    }
    Ok(total + negativity_penalty(weights))
}

/// Joint gradient of the weighted objective over `rows`, with respect to the
/// model parameters and the field coefficients. Returns `(objective, model
/// gradient, coefficient gradient)`.
pub fn objective_gradients<C: Classifier>(
    model: &C,
    field: &WeightField,
    data: &CohortDataset,
    rows: &[usize],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut grad = vec![0.0; model.n_params()];
    let mut losses = Vec::with_capacity(rows.len());
    let weights = field.weights(rows)?;
    for (&r, &w) in rows.iter().zip(&weights) {
        let s = data.subject(r);
        let (p, cache) = model.forward(&s.visits)?;
        losses.push(bce_loss(p, s.label));
        model.backward_logit(&cache, w * bce_grad_logit(p, s.label), &mut grad)?;
    }
    let objective = field.objective(rows, &losses)?;
    let grad_a = field.grad_a(rows, &losses)?;
    Ok((objective, grad, grad_a))
}

/// Positive-class probabilities for `rows`.
pub fn predict_rows<C: Classifier>(
    model: &C,
    data: &CohortDataset,
    rows: &[usize],
) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&r| model.predict(&data.subject(r).visits))
        .collect()
}
