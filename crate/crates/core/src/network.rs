//! Fully-connected rectifier networks with batched backpropagation and
//! per-example gradients of the last linear layer.
//!
//! The last layer's parameters are addressed as one flat vector laid out as
//! the augmented `(in + 1) x out` matrix `[W; b]` in row-major order, so the
//! gradient for one example is the outer product of its augmented hidden
//! activation `[h, 1]` with the gradient at the raw outputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::objective::{LossSpec, WeightedBatch};
use crate::rng::SeededRng;

/// How raw outputs of the last layer become class logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// One output unit per class.
    Softmax,
    /// A single output unit `f`; the two class logits are `(f, -f)`.
    BinaryReparam,
}

impl Head {
    pub fn num_classes(self, out_units: usize) -> usize {
        match self {
            Head::Softmax => out_units,
            Head::BinaryReparam => 2,
        }
    }

    /// Logits for one row of raw outputs.
    #[inline]
    pub fn logits_into(self, raw: &[f64], out: &mut [f64]) {
        match self {
            Head::Softmax => out.copy_from_slice(raw),
            Head::BinaryReparam => {
                out[0] = raw[0];
                out[1] = -raw[0];
            }
        }
    }

    /// Pulls a logit gradient back to the raw outputs.
    #[inline]
    pub fn pullback_into(self, dlogits: &[f64], out: &mut [f64]) {
        match self {
            Head::Softmax => out.copy_from_slice(dlogits),
            Head::BinaryReparam => out[0] = dlogits[0] - dlogits[1],
        }
    }

    /// Jacobian of logits with respect to raw outputs, `classes x out_units`.
    pub fn jacobian(self, out_units: usize) -> Matrix {
        match self {
            Head::Softmax => Matrix::identity(out_units),
            Head::BinaryReparam => Matrix::from_vec(2, 1, vec![1.0, -1.0]).expect("2x1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.in_dim(), self.out_dim()),
            bias: vec![0.0; self.out_dim()],
        }
    }
}

/// Layers of an MLP: rectifier between layers, identity after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Dense>,
    head: Head,
}

impl ModelParams {
    pub fn new(layers: Vec<Dense>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(vec![
                "network needs at least one layer".into(),
            ]));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::LengthMismatch {
                    op: "layer bias",
                    expected: l.out_dim(),
                    actual: l.bias.len(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(Error::DimensionMismatch {
                        op: "layer chaining",
                        left_rows: l.in_dim(),
                        left_cols: l.out_dim(),
                        right_rows: next.in_dim(),
                        right_cols: next.out_dim(),
                    });
                }
            }
        }
        let last = layers.last().expect("nonempty");
        if head == Head::BinaryReparam && last.out_dim() != 1 {
            return Err(Error::NotBinary {
                classes: last.out_dim(),
            });
        }
        Ok(Self { layers, head })
    }

    /// Normal weights with std `1/sqrt(fan_in)`, zero biases.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        head: Head,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let out_units = match head {
            Head::Softmax => num_classes,
            Head::BinaryReparam => {
                if num_classes != 2 {
                    return Err(Error::NotBinary {
                        classes: num_classes,
                    });
                }
                1
            }
        };
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(out_units);
        let layers = dims
            .windows(2)
            .map(|w| {
                let std = 1.0 / libm::sqrt(w[0] as f64);
                let data = crate::rng::rng_normal(rng, w[0] * w[1], 0.0, std);
                Dense {
                    weight: Matrix::from_vec(w[0], w[1], data).expect("sized"),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Self::new(layers, head)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            head: self.head,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_units(&self) -> usize {
        self.last().out_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes(self.out_units())
    }

    pub fn last(&self) -> &Dense {
        self.layers.last().expect("nonempty")
    }

    /// Width of the activation feeding the last layer.
    pub fn hidden_dim(&self) -> usize {
        self.last().in_dim()
    }

    /// Dimension of the flat last-layer parameter vector.
    pub fn last_layer_dim(&self) -> usize {
        (self.hidden_dim() + 1) * self.out_units()
    }

    pub fn last_layer_flat(&self) -> Vec<f64> {
        let last = self.last();
        let mut flat = last.weight.as_slice().to_vec();
        flat.extend_from_slice(&last.bias);
        flat
    }

    pub fn set_last_layer_flat(&mut self, flat: &[f64]) -> Result<()> {
        let dim = self.last_layer_dim();
        if flat.len() != dim {
            return Err(Error::LengthMismatch {
                op: "set_last_layer_flat",
                expected: dim,
                actual: flat.len(),
            });
        }
        let last = self.layers.last_mut().expect("nonempty");
        let w = last.weight.as_mut_slice();
        let n = w.len();
        w.copy_from_slice(&flat[..n]);
        last.bias.copy_from_slice(&flat[n..]);
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights row-major then biases. The
    /// last `last_layer_dim()` entries are the flat last layer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                op: "assign_flat",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[off..off + w.len()]);
            off += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    /// Pre-activation of each hidden layer, `batch x out_l`.
    pub pre: Vec<Matrix>,
    /// Output of each layer after its activation; for the last layer this is
    /// the raw output.
    pub post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Input to layer `l`.
    pub fn layer_input(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }

    /// The activation `h` feeding the last layer.
    pub fn last_hidden(&self) -> &Matrix {
        self.layer_input(self.post.len() - 1)
    }

    pub fn raw_output(&self) -> &Matrix {
        self.post.last().expect("nonempty")
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Returns `(logits, cache)`; logits are `batch x num_classes`.
pub fn forward(params: &ModelParams, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if x.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "forward",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: params.input_dim(),
            right_cols: params.layers[0].out_dim(),
        });
    }
    let n_layers = params.layers.len();
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut post = Vec::with_capacity(n_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let input = if l == 0 { x } else { &post[l - 1] };
        let mut z = matmul(input, &layer.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        if l + 1 < n_layers {
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
            pre.push(z);
            post.push(a);
        } else {
            post.push(z);
        }
    }
    let raw: &Matrix = post.last().expect("nonempty");
    let classes = params.num_classes();
    let mut logits = Matrix::zeros(x.rows(), classes);
    for r in 0..x.rows() {
        params.head.logits_into(raw.row(r), logits.row_mut(r));
    }
    Ok((
        logits,
        ForwardCache {
            input: x.clone(),
            pre,
            post,
        },
    ))
}

/// Backpropagates a gradient at the raw outputs (`batch x out_units`).
pub fn backward(params: &ModelParams, cache: &ForwardCache, draw: &Matrix) -> Result<ModelParams> {
    if draw.shape() != cache.raw_output().shape() {
        return Err(Error::DimensionMismatch {
            op: "backward",
            left_rows: draw.rows(),
            left_cols: draw.cols(),
            right_rows: cache.raw_output().rows(),
            right_cols: cache.raw_output().cols(),
        });
    }
    let mut grads = params.zeros_like();
    let mut delta = draw.clone();
    for l in (0..params.layers.len()).rev() {
        let input = cache.layer_input(l);
        let g = &mut grads.layers[l];
        g.weight = matmul(&input.transpose(), &delta)?;
        for r in 0..delta.rows() {
            for (b, d) in g.bias.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        if l > 0 {
            let mut prev = matmul(&delta, &params.layers[l].weight.transpose())?;
            let pre = &cache.pre[l - 1];
            for (p, z) in prev.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if *z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    Ok(grads)
}

/// Per-row loss and weighted raw-output gradient of a batch.
pub(crate) struct RowGrads {
    pub loss: f64,
    /// `batch x out_units`, already multiplied by each row's weight.
    pub draw_weighted: Matrix,
}

pub(crate) fn weighted_raw_grads(
    params: &ModelParams,
    logits: &Matrix,
    batch: &WeightedBatch,
    spec: &LossSpec,
) -> Result<RowGrads> {
    let out_units = params.out_units();
    let mut draw = Matrix::zeros(logits.rows(), out_units);
    let mut loss = 0.0;
    for (r, (target, &w)) in batch.targets.iter().zip(&batch.weights).enumerate() {
        if let Some((l, dlogits)) = spec.row_loss(logits.row(r), *target)? {
            loss += w * l;
            params.head.pullback_into(&dlogits, draw.row_mut(r));
            draw.row_mut(r).iter_mut().for_each(|v| *v *= w);
        }
    }
    Ok(RowGrads {
        loss,
        draw_weighted: draw,
    })
}

/// Weighted loss `Σ w_i ℓ_i` of the batch and its gradient for every layer.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &WeightedBatch,
    spec: &LossSpec,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("loss_and_grad"));
    }
    let (logits, cache) = forward(params, &batch.x)?;
    let rg = weighted_raw_grads(params, &logits, batch, spec)?;
    let grads = backward(params, &cache, &rg.draw_weighted)?;
    Ok((rg.loss, grads))
}

/// Weighted loss and its gradient with respect to the flat last layer only.
pub fn last_layer_loss_and_grad(
    params: &ModelParams,
    batch: &WeightedBatch,
    spec: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("last_layer_loss_and_grad"));
    }
    let (logits, cache) = forward(params, &batch.x)?;
    let rg = weighted_raw_grads(params, &logits, batch, spec)?;
    let h = cache.last_hidden();
    let out = params.out_units();
    let hd = h.cols();
    let mut g = vec![0.0; (hd + 1) * out];
    for r in 0..h.rows() {
        let d = rg.draw_weighted.row(r);
        for (a, &ha) in h.row(r).iter().chain(core::iter::once(&1.0)).enumerate() {
            if ha == 0.0 {
                continue;
            }
            for (k, &dk) in d.iter().enumerate() {
                g[a * out + k] += ha * dk;
            }
        }
    }
    Ok((rg.loss, g))
}

/// Row `i` is the gradient of the unweighted loss of example `i` with
/// respect to the flat last layer.
///
/// One forward pass supplies every example's hidden activation and one
/// loss evaluation supplies its raw-output gradient; each row is then an
/// elementwise outer product. Batch weights are ignored.
pub fn per_example_last_layer_grads(
    params: &ModelParams,
    batch: &WeightedBatch,
    spec: &LossSpec,
) -> Result<Matrix> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("per_example_last_layer_grads"));
    }
    let (logits, cache) = forward(params, &batch.x)?;
    let out = params.out_units();
    let h = cache.last_hidden();
    let hd = h.cols();
    let mut rows = Matrix::zeros(batch.len(), (hd + 1) * out);
    let mut draw = vec![0.0; out];
    for (r, target) in batch.targets.iter().enumerate() {
        let Some((_, dlogits)) = spec.row_loss(logits.row(r), *target)? else {
            continue;
        };
        params.head.pullback_into(&dlogits, &mut draw);
        let dst = rows.row_mut(r);
        for (a, &ha) in h.row(r).iter().chain(core::iter::once(&1.0)).enumerate() {
            for (k, &dk) in draw.iter().enumerate() {
                dst[a * out + k] = ha * dk;
            }
        }
    }
    Ok(rows)
}

/// Class probabilities for every row.
pub fn predict_proba(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let (mut logits, _) = forward(params, x)?;
    for r in 0..logits.rows() {
        let p = crate::objective::softmax(logits.row(r));
        logits.row_mut(r).copy_from_slice(&p);
    }
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Target;

    fn random_batch(rng: &mut SeededRng, n: usize, dim: usize, classes: usize) -> WeightedBatch {
        let x = Matrix::from_vec(n, dim, crate::rng::rng_normal(rng, n * dim, 0.0, 1.0)).unwrap();
        let targets = (0..n)
            .map(|i| {
                if i % 3 == 2 {
                    Target::Pseudo
                } else {
                    Target::Class((rng.next_u64() % classes as u64) as usize)
                }
            })
            .collect();
        let weights = (0..n).map(|_| rng.uniform_range(0.1, 2.0)).collect();
        WeightedBatch::new(x, targets, weights).unwrap()
    }

    fn serial_last_layer_grad(
        params: &ModelParams,
        batch: &WeightedBatch,
        i: usize,
        spec: &LossSpec,
    ) -> Vec<f64> {
        let one = batch.select(&[i]).with_weights(vec![1.0]);
        let (_, g) = loss_and_grad(params, &one, spec).unwrap();
        let flat = g.to_flat();
        flat[flat.len() - params.last_layer_dim()..].to_vec()
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let mut rng = SeededRng::new(1);
        let mut p = ModelParams::init(2, &[5], 3, Head::Softmax, &mut rng).unwrap();
        let z = vec![0.0; p.num_params()];
        p.assign_flat(&z).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let (logits, _) = forward(&p, &x).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_is_affine() {
        let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let p = ModelParams::new(
            vec![Dense {
                weight: w,
                bias: vec![0.5, -0.5],
            }],
            Head::Softmax,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let (logits, _) = forward(&p, &x).unwrap();
        assert_eq!(logits.as_slice(), &[4.5, 0.5]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let mut rng = SeededRng::new(2);
        let p = ModelParams::init(2, &[8, 4], 2, Head::Softmax, &mut rng).unwrap();
        let b = random_batch(&mut rng, 5, 2, 2);
        assert_eq!(forward(&p, &b.x).unwrap().0, forward(&p, &b.x).unwrap().0);
        assert!(forward(&p, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn reparam_head_requires_one_output() {
        let mut rng = SeededRng::new(3);
        let p = ModelParams::init(2, &[4], 2, Head::Softmax, &mut rng).unwrap();
        assert!(ModelParams::new(p.layers().to_vec(), Head::BinaryReparam).is_err());
        assert!(ModelParams::init(2, &[4], 3, Head::BinaryReparam, &mut rng).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = LossSpec::combined(0.0).unwrap();
        for (seed, head, classes) in [(10, Head::Softmax, 3), (11, Head::BinaryReparam, 2)] {
            let mut rng = SeededRng::new(seed);
            let p = ModelParams::init(2, &[6, 5], classes, head, &mut rng).unwrap();
            // explicit classes keep the objective smooth under perturbation
            let mut b = random_batch(&mut rng, 7, 2, classes);
            b.targets.iter_mut().for_each(|t| {
                if *t == Target::Pseudo {
                    *t = Target::Class(0)
                }
            });
            let (_, g) = loss_and_grad(&p, &b, &spec).unwrap();
            let g = g.to_flat();
            let theta = p.to_flat();
            let h = 1e-5;
            for i in 0..theta.len() {
                let mut q = p.clone();
                let mut t = theta.clone();
                t[i] += h;
                q.assign_flat(&t).unwrap();
                let up = loss_and_grad(&q, &b, &spec).unwrap().0;
                t[i] -= 2.0 * h;
                q.assign_flat(&t).unwrap();
                let down = loss_and_grad(&q, &b, &spec).unwrap().0;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3),
                    "param {i}: fd {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn loss_scaling_scales_gradient() {
        let spec = LossSpec::combined(0.0).unwrap();
        let mut rng = SeededRng::new(12);
        let p = ModelParams::init(2, &[6], 2, Head::Softmax, &mut rng).unwrap();
        let b = random_batch(&mut rng, 9, 2, 2);
        let scaled = b
            .clone()
            .with_weights(b.weights.iter().map(|w| 3.0 * w).collect());
        let (l1, g1) = loss_and_grad(&p, &b, &spec).unwrap();
        let (l3, g3) = loss_and_grad(&p, &scaled, &spec).unwrap();
        assert!((l3 - 3.0 * l1).abs() <= 1e-12 * l3.abs());
        for (a, b) in g1.to_flat().iter().zip(g3.to_flat()) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // zero network with balanced labels: softmax is uniform, the two
        // examples pull in opposite directions with identical activations
        let mut rng = SeededRng::new(13);
        let mut p = ModelParams::init(2, &[4], 2, Head::Softmax, &mut rng).unwrap();
        p.assign_flat(&vec![0.0; p.num_params()]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let b = WeightedBatch::new(x, vec![Target::Class(0), Target::Class(1)], vec![0.5, 0.5])
            .unwrap();
        let (_, g) = loss_and_grad(&p, &b, &LossSpec::supervised()).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_batch_is_error() {
        let mut rng = SeededRng::new(14);
        let p = ModelParams::init(2, &[4], 2, Head::Softmax, &mut rng).unwrap();
        let b = WeightedBatch::new(Matrix::zeros(0, 2), vec![], vec![]).unwrap();
        assert!(matches!(
            loss_and_grad(&p, &b, &LossSpec::supervised()),
            Err(Error::EmptyBatch(_))
        ));
        assert!(per_example_last_layer_grads(&p, &b, &LossSpec::supervised()).is_err());
    }

    #[test]
    fn singleton_batch_row_is_last_layer_gradient() {
        let spec = LossSpec::combined(0.0).unwrap();
        let mut rng = SeededRng::new(15);
        let p = ModelParams::init(2, &[7], 2, Head::BinaryReparam, &mut rng).unwrap();
        let b = random_batch(&mut rng, 1, 2, 2).with_weights(vec![1.0]);
        let rows = per_example_last_layer_grads(&p, &b, &spec).unwrap();
        assert_eq!(
            rows.row(0),
            serial_last_layer_grad(&p, &b, 0, &spec).as_slice()
        );
    }

    #[test]
    fn rows_match_serial_backprop_and_sum_to_batch_gradient() {
        let spec = LossSpec::combined(0.0).unwrap();
        let mut rng = SeededRng::new(16);
        let p = ModelParams::init(2, &[16, 9], 3, Head::Softmax, &mut rng).unwrap();
        let b = random_batch(&mut rng, 32, 2, 3);
        let rows = per_example_last_layer_grads(&p, &b, &spec).unwrap();
        let mut weighted_sum = vec![0.0; p.last_layer_dim()];
        for i in 0..32 {
            let serial = serial_last_layer_grad(&p, &b, i, &spec);
            for (a, s) in rows.row(i).iter().zip(&serial) {
                assert!((a - s).abs() <= 1e-10 * s.abs().max(1e-12));
            }
            crate::linalg::axpy(b.weights[i], rows.row(i), &mut weighted_sum);
        }
        let (_, batched) = last_layer_loss_and_grad(&p, &b, &spec).unwrap();
        for (a, s) in weighted_sum.iter().zip(&batched) {
            assert!((a - s).abs() <= 1e-10 * s.abs().max(1e-12));
        }
    }

    #[test]
    fn gradients_finite_for_large_inputs() {
        let spec = LossSpec::combined(0.0).unwrap();
        let mut rng = SeededRng::new(17);
        let p = ModelParams::init(2, &[10], 2, Head::Softmax, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[1e3, -1e3], [-1e3, 1e3], [1e3, 1e3]]).unwrap();
        let b = WeightedBatch::new(
            x,
            vec![Target::Class(0), Target::Class(1), Target::Pseudo],
            vec![1.0; 3],
        )
        .unwrap();
        let (l, g) = loss_and_grad(&p, &b, &spec).unwrap();
        assert!(l.is_finite() && g.is_finite());
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = SeededRng::new(18);
        let p = ModelParams::init(2, &[3, 4], 2, Head::Softmax, &mut rng).unwrap();
        let mut q = p.zeros_like();
        q.assign_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        let flat = p.to_flat();
        assert_eq!(
            &flat[flat.len() - p.last_layer_dim()..],
            p.last_layer_flat().as_slice()
        );
    }
}
