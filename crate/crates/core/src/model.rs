//! Sequence-to-one binary classifiers with hand-written backward passes.
//!
//! [`RecurrentClassifier`] runs a GRU over a subject's visits in order, then
//! `fc1 -> ReLU -> fc2 -> logistic`. [`LogisticClassifier`] looks at the last
//! visit only and exists to keep property tests fast.

use rand::Rng;

use crate::error::{dim, invalid, Error, Result};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the loss.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Chronological visits, each of the dataset's feature width.
    pub visits: Vec<Vec<f64>>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    subjects: Vec<Subject>,
    feature_width: usize,
}

impl CohortDataset {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let width = subjects
            .first()
            .and_then(|s| s.visits.first())
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidData("dataset has no subjects or visits".into()))?;
        for s in &subjects {
            if s.visits.is_empty() {
                return Err(Error::InvalidData(format!(
                    "subject {} has no visits",
                    s.id
                )));
            }
            if s.label > 1 {
                return Err(Error::InvalidData(format!(
                    "subject {} has non-binary label {}",
                    s.id, s.label
                )));
            }
            for v in &s.visits {
                if v.len() != width {
                    return Err(Error::InvalidData(format!(
                        "subject {} has a visit of width {} (expected {width})",
                        s.id,
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidData(format!(
                        "subject {} has a non-finite feature",
                        s.id
                    )));
                }
            }
        }
        Ok(Self {
            subjects,
            feature_width: width,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &Subject {
        &self.subjects[i]
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    /// Replaces a subject's visits and label, keeping widths consistent.
    pub fn replace(&mut self, i: usize, visits: Vec<Vec<f64>>, label: u8) -> Result<()> {
        if visits.is_empty() || visits.iter().any(|v| v.len() != self.feature_width) || label > 1 {
            return Err(Error::InvalidData(
                "replacement subject is malformed".into(),
            ));
        }
        self.subjects[i].visits = visits;
        self.subjects[i].label = label;
        Ok(())
    }
}

/// A differentiable binary classifier over one subject's visit sequence.
pub trait Classifier: Clone + Send + Sync {
    type Cache;

    fn feature_width(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Probability of the positive class plus whatever backward needs.
    fn forward(&self, seq: &[Vec<f64>]) -> Result<(f64, Self::Cache)>;

    /// Adds `dlogit * d logit / d params` into `grad`.
    fn backward_logit(&self, cache: &Self::Cache, dlogit: f64, grad: &mut [f64]) -> Result<()>;

    fn cached_probability(cache: &Self::Cache) -> f64;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Parameter gradient given `d loss / d probability`.
    fn backward(&self, cache: &Self::Cache, upstream: f64) -> Result<Vec<f64>> {
        let p = Self::cached_probability(cache);
        let mut grad = vec![0.0; self.n_params()];
        self.backward_logit(cache, upstream * p * (1.0 - p), &mut grad)?;
        Ok(grad)
    }

    fn predict(&self, seq: &[Vec<f64>]) -> Result<f64> {
        self.forward(seq).map(|(p, _)| p)
    }
}

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `d bce_loss / d logit`: `p - y` inside the clamp range, zero where the
/// clamp makes the loss flat.
pub fn bce_grad_logit(p: f64, y: u8) -> f64 {
    if !(P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
        return 0.0;
    }
    p - f64::from(y)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_sequence(seq: &[Vec<f64>], width: usize) -> Result<()> {
    if seq.is_empty() {
        return Err(invalid("empty visit sequence"));
    }
    if let Some(v) = seq.iter().find(|v| v.len() != width) {
        return Err(dim(format!("visit width {} (expected {width})", v.len())));
    }
    Ok(())
}

/// `out += W x` for row-major `W` of shape `out.len() × x.len()`.
#[inline]
fn gemv_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ d` for row-major `W` of shape `d.len() × out.len()`.
#[inline]
fn gemv_t_acc(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&di, row) in d.iter().zip(w.chunks_exact(cols)) {
        if di == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += di * a;
        }
    }
}

/// `g += d ⊗ x`.
#[inline]
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if di == 0.0 {
            continue;
        }
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += di * xi;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GruLayout {
    f: usize,
    h: usize,
    h2: usize,
}

impl GruLayout {
    fn w_in(&self, gate: usize) -> usize {
        gate * self.h * self.f
    }
    fn u(&self, gate: usize) -> usize {
        3 * self.h * self.f + gate * self.h * self.h
    }
    fn b(&self, gate: usize) -> usize {
        3 * self.h * (self.f + self.h) + gate * self.h
    }
    fn w1(&self) -> usize {
        3 * self.h * (self.f + self.h + 1)
    }
    fn b1(&self) -> usize {
        self.w1() + self.h2 * self.h
    }
    fn w2(&self) -> usize {
        self.b1() + self.h2
    }
    fn b2(&self) -> usize {
        self.w2() + self.h2
    }
    fn len(&self) -> usize {
        self.b2() + 1
    }
}

const Z: usize = 0;
const R: usize = 1;
const N: usize = 2;

/// GRU over visits followed by two fully connected layers.
///
/// Per visit, with `h` the previous state (zero before the first visit):
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// n = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 - z) ⊙ h + z ⊙ n
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentClassifier {
    layout: GruLayout,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    n: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RecurrentCache {
    inputs: Vec<Vec<f64>>,
    steps: Vec<GruStep>,
    h_last: Vec<f64>,
    pre_fc1: Vec<f64>,
    fc1_out: Vec<f64>,
    pub logit: f64,
    pub probability: f64,
}

impl RecurrentClassifier {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_HIDDEN2: usize = 32;

    pub fn zeros(feature_width: usize, hidden: usize, hidden2: usize) -> Self {
        let layout = GruLayout {
            f: feature_width,
            h: hidden,
            h2: hidden2,
        };
        Self {
            layout,
            params: vec![0.0; layout.len()],
        }
    }

    /// Uniform `±1/√fan_in` initialization.
    pub fn init<R: Rng + ?Sized>(
        feature_width: usize,
        hidden: usize,
        hidden2: usize,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(feature_width, hidden, hidden2);
        let l = m.layout;
        let bound = |fan_in: usize| 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut fill = |range: std::ops::Range<usize>, b: f64| {
            for p in &mut m.params[range] {
                *p = rng.random_range(-b..=b);
            }
        };
        fill(0..l.u(0), bound(l.f));
        fill(l.u(0)..l.w1(), bound(l.h));
        fill(l.w1()..l.w2(), bound(l.h));
        fill(l.w2()..l.len(), bound(l.h2));
        m
    }

    pub fn from_params(
        feature_width: usize,
        hidden: usize,
        hidden2: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::zeros(feature_width, hidden, hidden2);
        if params.len() != m.params.len() {
            return Err(dim(format!(
                "{} parameters for a GRU needing {}",
                params.len(),
                m.params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn hidden(&self) -> usize {
        self.layout.h
    }

    pub fn hidden2(&self) -> usize {
        self.layout.h2
    }

    fn block(&self, start: usize, len: usize) -> &[f64] {
        &self.params[start..start + len]
    }
}

impl Classifier for RecurrentClassifier {
    type Cache = RecurrentCache;

    fn feature_width(&self) -> usize {
        self.layout.f
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn cached_probability(cache: &RecurrentCache) -> f64 {
        cache.probability
    }

    fn forward(&self, seq: &[Vec<f64>]) -> Result<(f64, RecurrentCache)> {
        let l = self.layout;
        check_sequence(seq, l.f)?;
        let (hf, hh) = (l.h * l.f, l.h * l.h);
        let mut h = vec![0.0; l.h];
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            let mut pre = [
                self.block(l.b(Z), l.h).to_vec(),
                self.block(l.b(R), l.h).to_vec(),
            ];
            for (gate, acc) in pre.iter_mut().enumerate() {
                gemv_acc(self.block(l.w_in(gate), hf), x, acc);
                gemv_acc(self.block(l.u(gate), hh), &h, acc);
            }
            let z: Vec<f64> = pre[0].iter().map(|&a| sigmoid(a)).collect();
            let r: Vec<f64> = pre[1].iter().map(|&a| sigmoid(a)).collect();
            let rh: Vec<f64> = r.iter().zip(&h).map(|(r, h)| r * h).collect();
            let mut an = self.block(l.b(N), l.h).to_vec();
            gemv_acc(self.block(l.w_in(N), hf), x, &mut an);
            gemv_acc(self.block(l.u(N), hh), &rh, &mut an);
            let n: Vec<f64> = an.iter().map(|a| a.tanh()).collect();
            let next: Vec<f64> = (0..l.h)
                .map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i])
                .collect();
            steps.push(GruStep {
                h_prev: std::mem::replace(&mut h, next),
                z,
                r,
                rh,
                n,
            });
        }
        let mut pre_fc1 = self.block(l.b1(), l.h2).to_vec();
        gemv_acc(self.block(l.w1(), l.h2 * l.h), &h, &mut pre_fc1);
        let fc1_out: Vec<f64> = pre_fc1.iter().map(|a| a.max(0.0)).collect();
        let logit = self.params[l.b2()]
            + self
                .block(l.w2(), l.h2)
                .iter()
                .zip(&fc1_out)
                .map(|(w, q)| w * q)
                .sum::<f64>();
        if !logit.is_finite() {
            return Err(Error::NonFinite("classifier logit".into()));
        }
        let probability = sigmoid(logit);
        Ok((
            probability,
            RecurrentCache {
                inputs: seq.to_vec(),
                steps,
                h_last: h,
                pre_fc1,
                fc1_out,
                logit,
                probability,
            },
        ))
    }

    fn backward_logit(&self, cache: &RecurrentCache, dlogit: f64, grad: &mut [f64]) -> Result<()> {
        let l = self.layout;
        if grad.len() != l.len() || cache.h_last.len() != l.h || cache.fc1_out.len() != l.h2 {
            return Err(dim("cache or gradient buffer does not match the model"));
        }
        if dlogit == 0.0 {
            return Ok(());
        }
        let (hf, hh) = (l.h * l.f, l.h * l.h);

        grad[l.b2()] += dlogit;
        for (g, q) in grad[l.w2()..l.w2() + l.h2].iter_mut().zip(&cache.fc1_out) {
            *g += dlogit * q;
        }
        let d_pre1: Vec<f64> = self
            .block(l.w2(), l.h2)
            .iter()
            .zip(&cache.pre_fc1)
            .map(|(w, a)| if *a > 0.0 { dlogit * w } else { 0.0 })
            .collect();
        add_into(&mut grad[l.b1()..l.b1() + l.h2], &d_pre1);
        outer_acc(
            &mut grad[l.w1()..l.w1() + l.h2 * l.h],
            &d_pre1,
            &cache.h_last,
        );
        let mut dh = vec![0.0; l.h];
        gemv_t_acc(self.block(l.w1(), l.h2 * l.h), &d_pre1, &mut dh);

        for (step, x) in cache.steps.iter().zip(&cache.inputs).rev() {
            let mut dh_prev: Vec<f64> = (0..l.h).map(|i| dh[i] * (1.0 - step.z[i])).collect();
            let dan: Vec<f64> = (0..l.h)
                .map(|i| dh[i] * step.z[i] * (1.0 - step.n[i] * step.n[i]))
                .collect();
            let daz: Vec<f64> = (0..l.h)
                .map(|i| dh[i] * (step.n[i] - step.h_prev[i]) * step.z[i] * (1.0 - step.z[i]))
                .collect();

            outer_acc(&mut grad[l.w_in(N)..l.w_in(N) + hf], &dan, x);
            outer_acc(&mut grad[l.u(N)..l.u(N) + hh], &dan, &step.rh);
            add_into(&mut grad[l.b(N)..l.b(N) + l.h], &dan);
            let mut drh = vec![0.0; l.h];
            gemv_t_acc(self.block(l.u(N), hh), &dan, &mut drh);

            let dar: Vec<f64> = (0..l.h)
                .map(|i| drh[i] * step.h_prev[i] * step.r[i] * (1.0 - step.r[i]))
                .collect();
            for i in 0..l.h {
                dh_prev[i] += drh[i] * step.r[i];
            }

            for (gate, da) in [(R, &dar), (Z, &daz)] {
                outer_acc(&mut grad[l.w_in(gate)..l.w_in(gate) + hf], da, x);
                outer_acc(&mut grad[l.u(gate)..l.u(gate) + hh], da, &step.h_prev);
                add_into(&mut grad[l.b(gate)..l.b(gate) + l.h], da);
                gemv_t_acc(self.block(l.u(gate), hh), da, &mut dh_prev);
            }
            dh = dh_prev;
        }
        Ok(())
    }
}

/// Logistic regression on the final visit's features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClassifier {
    /// Weights followed by the bias.
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LogisticCache {
    last: Vec<f64>,
    pub probability: f64,
}

impl LogisticClassifier {
    pub fn zeros(feature_width: usize) -> Self {
        Self {
            params: vec![0.0; feature_width + 1],
        }
    }

    pub fn init<R: Rng + ?Sized>(feature_width: usize, rng: &mut R) -> Self {
        let b = 1.0 / (feature_width.max(1) as f64).sqrt();
        Self {
            params: (0..=feature_width)
                .map(|_| rng.random_range(-b..=b))
                .collect(),
        }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.is_empty() {
            return Err(dim("logistic model needs at least a bias"));
        }
        Ok(Self { params })
    }
}

impl Classifier for LogisticClassifier {
    type Cache = LogisticCache;

    fn feature_width(&self) -> usize {
        self.params.len() - 1
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn cached_probability(cache: &LogisticCache) -> f64 {
        cache.probability
    }

    fn forward(&self, seq: &[Vec<f64>]) -> Result<(f64, LogisticCache)> {
        let f = self.feature_width();
        check_sequence(seq, f)?;
        let last = seq.last().expect("non-empty").clone();
        let logit = self.params[f]
            + self.params[..f]
                .iter()
                .zip(&last)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        if !logit.is_finite() {
            return Err(Error::NonFinite("classifier logit".into()));
        }
        let probability = sigmoid(logit);
        Ok((probability, LogisticCache { last, probability }))
    }

    fn backward_logit(&self, cache: &LogisticCache, dlogit: f64, grad: &mut [f64]) -> Result<()> {
        let f = self.feature_width();
        if grad.len() != f + 1 || cache.last.len() != f {
            return Err(dim("cache or gradient buffer does not match the model"));
        }
        for (g, x) in grad[..f].iter_mut().zip(&cache.last) {
            *g += dlogit * x;
        }
        grad[f] += dlogit;
        Ok(())
    }
}
