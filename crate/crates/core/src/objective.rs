//! Losses of the semi-supervised objective: softmax cross-entropy,
//! pseudo-label targets, the per-example weighted combination of labeled and
//! unlabeled terms, and the binary reparameterization of the last layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{forward, Dense, Head, ModelParams};
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SupervisedCe,
    PseudoLabelCe,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Pseudo-labels whose top probability is below this are dropped.
    pub pseudo_label_threshold: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, pseudo_label_threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pseudo_label_threshold) {
            return Err(Error::InvalidConfig(vec![format!(
                "pseudo_label_threshold must be in [0, 1], got {pseudo_label_threshold}"
            )]));
        }
        Ok(Self {
            kind,
            pseudo_label_threshold,
        })
    }

    pub fn supervised() -> Self {
        Self {
            kind: LossKind::SupervisedCe,
            pseudo_label_threshold: 0.0,
        }
    }

    pub fn pseudo_label(threshold: f64) -> Result<Self> {
        Self::new(LossKind::PseudoLabelCe, threshold)
    }

    pub fn combined(threshold: f64) -> Result<Self> {
        Self::new(LossKind::Combined, threshold)
    }

    /// Loss and logit gradient of one row, or `None` when a pseudo-label is
    /// below threshold (the row then contributes nothing).
    pub(crate) fn row_loss(
        &self,
        logits: &[f64],
        target: Target,
    ) -> Result<Option<(f64, Vec<f64>)>> {
        let class = match (self.kind, target) {
            (LossKind::PseudoLabelCe, Target::Class(_)) => {
                return Err(Error::NotOneHot(
                    "pseudo-label loss received a ground-truth target".into(),
                ))
            }
            (LossKind::SupervisedCe, Target::Pseudo) => {
                return Err(Error::NotOneHot(
                    "supervised loss received an unlabeled row".into(),
                ))
            }
            (_, Target::Class(c)) => {
                if c >= logits.len() {
                    return Err(Error::ClassOutOfRange {
                        class: c,
                        num_classes: logits.len(),
                    });
                }
                c
            }
            (_, Target::Pseudo) => match pseudo_class(logits, self.pseudo_label_threshold) {
                Some(c) => c,
                None => return Ok(None),
            },
        };
        Ok(Some(ce_for_class(logits, class)))
    }
}

/// Target of one row: a known class, or the model's own current prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    Pseudo,
}

/// Inputs with a target and a loss weight per row; the batch loss is
/// `Σ_i weights[i] * ℓ(x_i, target_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    pub x: Matrix,
    pub targets: Vec<Target>,
    pub weights: Vec<f64>,
}

impl WeightedBatch {
    pub fn new(x: Matrix, targets: Vec<Target>, weights: Vec<f64>) -> Result<Self> {
        for (op, len) in [("targets", targets.len()), ("weights", weights.len())] {
            if len != x.rows() {
                return Err(Error::LengthMismatch {
                    op,
                    expected: x.rows(),
                    actual: len,
                });
            }
        }
        Ok(Self {
            x,
            targets,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.len());
        self.weights = weights;
        self
    }

    /// Appends one row.
    pub fn push(&mut self, x: &[f64], target: Target, weight: f64) {
        let cols = self.x.cols();
        assert_eq!(x.len(), cols);
        let mut data = core::mem::replace(&mut self.x, Matrix::zeros(0, cols)).into_vec();
        data.extend_from_slice(x);
        self.x = Matrix::from_vec(self.targets.len() + 1, cols, data).expect("sized");
        self.targets.push(target);
        self.weights.push(weight);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(x: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::LengthMismatch {
                op: "LabeledBatch",
                expected: x.rows(),
                actual: labels.len(),
            });
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean cross-entropy batch.
    pub fn mean_batch(&self) -> WeightedBatch {
        let w = 1.0 / self.len().max(1) as f64;
        WeightedBatch {
            x: self.x.clone(),
            targets: self.labels.iter().map(|&c| Target::Class(c)).collect(),
            weights: vec![w; self.len()],
        }
    }
}

/// Unlabeled rows addressed by their stable example id.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch {
    pub ids: Vec<usize>,
    pub x: Matrix,
    /// Normally all [`Target::Pseudo`]; fixed classes are used by probes
    /// whose pseudo-labels are frozen.
    pub targets: Vec<Target>,
}

impl UnlabeledBatch {
    pub fn pseudo(ids: Vec<usize>, x: Matrix) -> Result<Self> {
        let targets = vec![Target::Pseudo; ids.len()];
        Self::with_targets(ids, x, targets)
    }

    pub fn with_targets(ids: Vec<usize>, x: Matrix, targets: Vec<Target>) -> Result<Self> {
        for (op, len) in [
            ("UnlabeledBatch ids", ids.len()),
            ("UnlabeledBatch targets", targets.len()),
        ] {
            if len != x.rows() {
                return Err(Error::LengthMismatch {
                    op,
                    expected: x.rows(),
                    actual: len,
                });
            }
        }
        Ok(Self { ids, x, targets })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows with unit weight, for per-example gradients.
    pub fn unit_batch(&self) -> WeightedBatch {
        WeightedBatch {
            x: self.x.clone(),
            targets: self.targets.clone(),
            weights: vec![1.0; self.len()],
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            x: self.x.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// The per-example weights `λ_u`, indexed by unlabeled example id, together
/// with the masked-Adam moments used to update them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    state: AdamState,
}

impl WeightVector {
    pub fn new(n: usize, init: f64, optimizer: AdamConfig) -> Self {
        debug_assert!(init >= 0.0);
        Self {
            values: vec![init; n],
            state: AdamState::new(n, optimizer),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<f64> {
        self.values
            .get(id)
            .copied()
            .ok_or(Error::MissingWeight { id })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn parts_mut(&mut self) -> (&mut [f64], &mut AdamState) {
        (&mut self.values, &mut self.state)
    }

    /// Overwrites every value; moments are untouched.
    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    pub fn set(&mut self, id: usize, value: f64) -> Result<()> {
        let slot = self.values.get_mut(id).ok_or(Error::MissingWeight { id })?;
        *slot = value;
        Ok(())
    }

    pub fn clamp_nonnegative(&mut self) {
        for v in &mut self.values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn stats(&self) -> (f64, f64, f64) {
        let n = self.values.len().max(1) as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (mean, min, max)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

pub(crate) fn ce_for_class(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let mut top = 0;
    for (k, &z) in logits.iter().enumerate() {
        if z > logits[top] {
            top = k;
        }
    }
    let m = logits[top];
    // log-sum-exp as m + log1p(Σ_{k≠top} e^{z_k − m}) keeps tiny losses exact
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, &z)| libm::exp(z - m))
        .sum();
    let loss = libm::log1p(rest) + (m - logits[class]);
    let mut grad = softmax(logits);
    grad[class] -= 1.0;
    (loss.max(0.0), grad)
}

/// Cross-entropy of a one-hot target and its gradient `softmax − target`.
pub fn softmax_ce(logits: &[f64], target_onehot: &[f64]) -> Result<(f64, Vec<f64>)> {
    if target_onehot.len() != logits.len() {
        return Err(Error::LengthMismatch {
            op: "softmax_ce",
            expected: logits.len(),
            actual: target_onehot.len(),
        });
    }
    let ones = target_onehot.iter().filter(|&&t| t == 1.0).count();
    let zeros = target_onehot.iter().filter(|&&t| t == 0.0).count();
    if ones != 1 || ones + zeros != target_onehot.len() {
        return Err(Error::NotOneHot(format!("{target_onehot:?}")));
    }
    let class = target_onehot
        .iter()
        .position(|&t| t == 1.0)
        .expect("one hot");
    Ok(ce_for_class(logits, class))
}

/// Argmax class of `softmax(logits)`, lowest index on ties, or `None` when
/// its probability is below `threshold`.
pub(crate) fn pseudo_class(logits: &[f64], threshold: f64) -> Option<usize> {
    let p = softmax(logits);
    let mut best = 0;
    for (k, &pk) in p.iter().enumerate() {
        if pk > p[best] {
            best = k;
        }
    }
    (p[best] >= threshold).then_some(best)
}

/// One-hot pseudo-label from the current prediction. The result is a
/// constant target: no gradient flows through its construction.
pub fn pseudo_label(logits: &[f64], threshold: f64) -> Option<Vec<f64>> {
    pseudo_class(logits, threshold).map(|c| {
        let mut t = vec![0.0; logits.len()];
        t[c] = 1.0;
        t
    })
}

/// The rows of the weighted training objective: labeled rows weighted
/// `1/|D'|`, unlabeled rows weighted `λ_u/|U'|`.
pub fn combined_batch(
    d: &LabeledBatch,
    u: &UnlabeledBatch,
    weights: &WeightVector,
) -> Result<WeightedBatch> {
    let cols = if !d.is_empty() {
        d.x.cols()
    } else {
        u.x.cols()
    };
    let n = d.len() + u.len();
    if n == 0 {
        return Err(Error::EmptyBatch("combined batch"));
    }
    let mut data = Vec::with_capacity(n * cols);
    let mut targets = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    if !d.is_empty() {
        let wd = 1.0 / d.len() as f64;
        data.extend_from_slice(d.x.as_slice());
        targets.extend(d.labels.iter().map(|&c| Target::Class(c)));
        w.extend(core::iter::repeat_n(wd, d.len()));
    }
    if !u.is_empty() {
        if u.x.cols() != cols {
            return Err(Error::DimensionMismatch {
                op: "combined batch",
                left_rows: d.x.rows(),
                left_cols: cols,
                right_rows: u.x.rows(),
                right_cols: u.x.cols(),
            });
        }
        let inv = 1.0 / u.len() as f64;
        data.extend_from_slice(u.x.as_slice());
        targets.extend_from_slice(&u.targets);
        for &id in &u.ids {
            w.push(weights.get(id)? * inv);
        }
    }
    WeightedBatch::new(Matrix::from_vec(n, cols, data)?, targets, w)
}

/// `mean_{D'} ℓ_S + (1/|U'|) Σ_{u∈U'} λ_u ℓ_U(u)`.
pub fn combined_loss(
    params: &ModelParams,
    d: &LabeledBatch,
    u: &UnlabeledBatch,
    weights: &WeightVector,
    spec: &LossSpec,
) -> Result<f64> {
    let batch = combined_batch(d, u, weights)?;
    batch_loss(params, &batch, spec)
}

/// `Σ_i w_i ℓ_i` without gradients.
pub fn batch_loss(params: &ModelParams, batch: &WeightedBatch, spec: &LossSpec) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("batch_loss"));
    }
    let (logits, _) = forward(params, &batch.x)?;
    let mut total = 0.0;
    for (r, (t, w)) in batch.targets.iter().zip(&batch.weights).enumerate() {
        if let Some((l, _)) = spec.row_loss(logits.row(r), *t)? {
            total += w * l;
        }
    }
    Ok(total)
}

/// Replaces a two-logit softmax layer `(θ₁, θ₂)` by one output unit
/// `θ' = (θ₁ − θ₂)/2` whose logits are `(f, −f)`.
///
/// The class probabilities of every input are unchanged because the new
/// logits equal the old ones shifted by `−(f₁ + f₂)/2`; the last-layer
/// dimension halves and the two perfectly correlated halves disappear.
pub fn reparam_binary(params: &ModelParams) -> Result<ModelParams> {
    if params.head() != Head::Softmax || params.out_units() != 2 {
        return Err(Error::NotBinary {
            classes: params.num_classes(),
        });
    }
    let last = params.last();
    let n_in = last.in_dim();
    let mut w = Matrix::zeros(n_in, 1);
    for i in 0..n_in {
        w[(i, 0)] = 0.5 * (last.weight[(i, 0)] - last.weight[(i, 1)]);
    }
    let b = vec![0.5 * (last.bias[0] - last.bias[1])];
    let mut layers = params.layers().to_vec();
    *layers.last_mut().expect("nonempty") = Dense { weight: w, bias: b };
    ModelParams::new(layers, Head::BinaryReparam)
}
