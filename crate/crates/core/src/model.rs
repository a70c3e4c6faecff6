//! Small differentiable classifiers and the local SGD loop.
//!
//! Parameters live in one flat vector. Layouts, row-major:
//!
//! * logistic regression: `W[C × d]`, `b[C]`
//! * one-hidden-layer MLP: `W1[H × d]`, `b1[H]`, `W2[C × H]`, `b2[C]`

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::linalg::{log_sum_exp, Matrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    LogisticRegression,
    #[serde(rename = "MLP1")]
    Mlp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Ignored by logistic regression.
    pub hidden_units: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::LogisticRegression,
            input_dim,
            num_classes,
            hidden_units: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_units: usize, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Mlp1,
            input_dim,
            num_classes,
            hidden_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid("input_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(invalid("num_classes", "must be at least 2"));
        }
        if self.architecture == Architecture::Mlp1 && self.hidden_units == 0 {
            return Err(invalid("hidden_units", "must be positive for MLP1"));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_units);
        match self.architecture {
            Architecture::LogisticRegression => c * d + c,
            Architecture::Mlp1 => h * d + h + c * h + c,
        }
    }
}

fn invalid(name: &'static str, reason: &str) -> FedError {
    FedError::InvalidParameter {
        name,
        reason: reason.to_string(),
    }
}

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Each entry uniform in `[-scale, scale]`.
    pub fn random_uniform(spec: &ModelSpec, scale: f64, rng: &mut RngStream) -> Self {
        Self(
            (0..spec.parameter_count())
                .map(|_| rng.gen_range(-scale..=scale))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn check_len(&self, expected: usize, context: &'static str) -> Result<()> {
        if self.0.len() != expected {
            return Err(FedError::DimensionMismatch {
                context,
                expected,
                actual: self.0.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalHyper {
    pub eta: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Proximal weight; 0 disables the term.
    pub prox_mu: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl LocalHyper {
    pub fn validate(&self) -> Result<()> {
        // eta = 0 is accepted: it freezes local models, which tests rely on.
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be finite and non-negative"));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(invalid("prox_mu", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        Ok(())
    }
}

struct Layout {
    d: usize,
    c: usize,
    h: usize,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Self {
        Self {
            d: spec.input_dim,
            c: spec.num_classes,
            h: spec.hidden_units,
        }
    }
}

fn check_features(spec: &ModelSpec, features: &Matrix) -> Result<()> {
    if features.cols() != spec.input_dim {
        return Err(FedError::DimensionMismatch {
            context: "feature width",
            expected: spec.input_dim,
            actual: features.cols(),
        });
    }
    Ok(())
}

/// Affine map `out = W x + b` for one row; `w` is `[out × in]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (slot, &bias)) in out.iter_mut().zip(b).enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *slot = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Raw logits `[n × num_classes]`.
pub fn forward_logits(params: &ParamVector, spec: &ModelSpec, features: &Matrix) -> Result<Matrix> {
    check_features(spec, features)?;
    params.check_len(spec.parameter_count(), "parameter vector")?;
    let Layout { d, c, h } = Layout::of(spec);
    let p = params.as_slice();
    let mut out = Matrix::zeros(features.rows(), c);
    match spec.architecture {
        Architecture::LogisticRegression => {
            let (w, b) = p.split_at(c * d);
            for i in 0..features.rows() {
                affine(w, b, features.row(i), out.row_mut(i));
            }
        }
        Architecture::Mlp1 => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut hidden = vec![0.0; h];
            for i in 0..features.rows() {
                affine(w1, b1, features.row(i), &mut hidden);
                hidden.iter_mut().for_each(|v| *v = v.max(0.0));
                affine(w2, b2, &hidden, out.row_mut(i));
            }
        }
    }
    Ok(out)
}

/// Features and labels of one mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

/// Proximal anchor for the FedProx term.
#[derive(Debug, Clone, Copy)]
pub struct Prox<'a> {
    pub center: &'a ParamVector,
    pub mu: f64,
}

/// Mean cross-entropy of the batch (plus the proximal penalty) and its gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: Batch<'_>,
    prox: Option<Prox<'_>>,
) -> Result<(f64, ParamVector)> {
    check_features(spec, batch.features)?;
    let n = batch.features.rows();
    if n == 0 || batch.labels.is_empty() {
        return Err(FedError::Empty("batch"));
    }
    if batch.labels.len() != n {
        return Err(FedError::DimensionMismatch {
            context: "batch labels",
            expected: n,
            actual: batch.labels.len(),
        });
    }
    if let Some(&label) = batch.labels.iter().find(|&&y| y >= spec.num_classes) {
        return Err(FedError::LabelOutOfRange {
            label,
            num_classes: spec.num_classes,
        });
    }
    params.check_len(spec.parameter_count(), "parameter vector")?;

    let Layout { d, c, h } = Layout::of(spec);
    let p = params.as_slice();
    let mut grad = vec![0.0; p.len()];
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut logits = vec![0.0; c];
    let mut delta = vec![0.0; c];

    // delta = (softmax(z) - onehot(y)) / n; returns the example's loss.
    let softmax_delta = |z: &[f64], y: usize, delta: &mut [f64]| -> f64 {
        let lse = log_sum_exp(z);
        for (j, slot) in delta.iter_mut().enumerate() {
            let prob = (z[j] - lse).exp();
            *slot = (prob - if j == y { 1.0 } else { 0.0 }) * inv_n;
        }
        lse - z[y]
    };

    match spec.architecture {
        Architecture::LogisticRegression => {
            let (w, b) = p.split_at(c * d);
            let (gw, gb) = grad.split_at_mut(c * d);
            for i in 0..n {
                let x = batch.features.row(i);
                affine(w, b, x, &mut logits);
                loss += softmax_delta(&logits, batch.labels[i], &mut delta);
                for j in 0..c {
                    gb[j] += delta[j];
                    let row = &mut gw[j * d..(j + 1) * d];
                    for (g, &xv) in row.iter_mut().zip(x) {
                        *g += delta[j] * xv;
                    }
                }
            }
        }
        Architecture::Mlp1 => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let (gw1, grest) = grad.split_at_mut(h * d);
            let (gb1, grest) = grest.split_at_mut(h);
            let (gw2, gb2) = grest.split_at_mut(c * h);
            let mut pre = vec![0.0; h];
            let mut act = vec![0.0; h];
            let mut dh = vec![0.0; h];
            for i in 0..n {
                let x = batch.features.row(i);
                affine(w1, b1, x, &mut pre);
                for (a, &z) in act.iter_mut().zip(&pre) {
                    *a = z.max(0.0);
                }
                affine(w2, b2, &act, &mut logits);
                loss += softmax_delta(&logits, batch.labels[i], &mut delta);

                dh.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..c {
                    gb2[j] += delta[j];
                    let wrow = &w2[j * h..(j + 1) * h];
                    let grow = &mut gw2[j * h..(j + 1) * h];
                    for u in 0..h {
                        grow[u] += delta[j] * act[u];
                        dh[u] += wrow[u] * delta[j];
                    }
                }
                for u in 0..h {
                    if pre[u] <= 0.0 {
                        continue;
                    }
                    gb1[u] += dh[u];
                    let grow = &mut gw1[u * d..(u + 1) * d];
                    for (g, &xv) in grow.iter_mut().zip(x) {
                        *g += dh[u] * xv;
                    }
                }
            }
        }
    }
    loss *= inv_n;

    if let Some(Prox { center, mu }) = prox {
        if mu > 0.0 {
            center.check_len(p.len(), "proximal center")?;
            loss += 0.5 * mu * params.squared_distance(center);
            for ((g, &w), &c0) in grad.iter_mut().zip(p).zip(center.as_slice()) {
                *g += mu * (w - c0);
            }
        }
    }
    Ok((loss, ParamVector(grad)))
}

/// Heavy-ball step: `v' = m·v + g + λ·w`, `w' = w − η·v'`.
pub fn sgd_step(
    params: &ParamVector,
    grad: &ParamVector,
    velocity: &ParamVector,
    hyper: &LocalHyper,
) -> Result<(ParamVector, ParamVector)> {
    grad.check_len(params.len(), "gradient")?;
    velocity.check_len(params.len(), "velocity")?;
    let mut next_v = Vec::with_capacity(params.len());
    let mut next_w = Vec::with_capacity(params.len());
    for ((&w, &g), &v) in params.0.iter().zip(&grad.0).zip(&velocity.0) {
        let v1 = hyper.momentum * v + g + hyper.weight_decay * w;
        next_v.push(v1);
        next_w.push(w - hyper.eta * v1);
    }
    Ok((ParamVector(next_w), ParamVector(next_v)))
}

/// Runs `local_epochs` shuffled mini-batch passes starting from `w_global`.
pub fn local_update(
    w_global: &ParamVector,
    spec: &ModelSpec,
    features: &Matrix,
    labels: &[usize],
    hyper: &LocalHyper,
    mut rng: RngStream,
) -> Result<ParamVector> {
    let n = features.rows();
    if n == 0 {
        return Err(FedError::Empty("client shard"));
    }
    if labels.len() != n {
        return Err(FedError::DimensionMismatch {
            context: "shard labels",
            expected: n,
            actual: labels.len(),
        });
    }
    hyper.validate()?;

    let mut w = w_global.clone();
    let mut velocity = ParamVector::zeros(w.len());
    let mut order: Vec<usize> = (0..n).collect();
    let prox = (hyper.prox_mu > 0.0).then_some(Prox {
        center: w_global,
        mu: hyper.prox_mu,
    });

    for _ in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let xb = features.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = Batch {
                features: &xb,
                labels: &yb,
            };
            let (_, grad) = loss_and_grad(&w, spec, batch, prox)?;
            let (w1, v1) = sgd_step(&w, &grad, &velocity, hyper)?;
            w = w1;
            velocity = v1;
        }
    }
    if !w.is_finite() {
        return Err(FedError::NonFinite("local_update"));
    }
    Ok(w)
}
