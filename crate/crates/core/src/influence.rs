//! Influence of unlabeled examples on the validation loss, restricted to the
//! last linear layer.
//!
//! For a training objective `L(θ̂) = Σ_i w_i ℓ_i(θ̂)` the derivative of the
//! validation loss with respect to the weight of example `u` at an optimum is
//! `−g_Vᵀ H⁻¹ ∇ℓ_u`, with `g_V` the validation gradient and `H` the Hessian
//! of `L`. `H` is symmetric, so one inverse-Hessian-vector product `H⁻¹ g_V`
//! serves every example in the batch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, dot, Cholesky, Matrix};
use crate::network::{
    forward, last_layer_loss_and_grad, per_example_last_layer_grads, ModelParams,
};
use crate::objective::{
    combined_batch, softmax, LabeledBatch, LossSpec, UnlabeledBatch, WeightVector, WeightedBatch,
};

/// How `H⁻¹ v` is approximated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IhvpMode {
    /// Cholesky solve of the damped Hessian.
    Exact,
    /// `H⁻¹ ≈ I`.
    Identity,
    /// `scale · Σ_{j<terms} (I − scale·H)ʲ v`.
    Neumann { terms: usize, scale: f64 },
}

impl IhvpMode {
    pub fn validate(&self) -> Result<()> {
        if let IhvpMode::Neumann { terms, scale } = *self {
            let mut bad = Vec::new();
            if terms < 1 {
                bad.push(format!("neumann terms must be >= 1, got {terms}"));
            }
            if !(scale > 0.0) || !scale.is_finite() {
                bad.push(format!("neumann scale must be > 0, got {scale}"));
            }
            if !bad.is_empty() {
                return Err(Error::InvalidConfig(bad));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            IhvpMode::Exact => "exact",
            IhvpMode::Identity => "identity",
            IhvpMode::Neumann { .. } => "neumann",
        }
    }
}

/// `1 / (Gershgorin bound of H)`: keeps the spectral radius of
/// `I − scale·H` below one for any PSD `H`.
pub fn neumann_auto_scale(h: &Matrix) -> f64 {
    1.0 / linalg::gershgorin_bound(h).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceReport {
    pub batch_ids: Vec<usize>,
    /// `∂L_S(V)/∂λ_u` for each id, in batch order.
    pub scores: Vec<f64>,
    pub mode: IhvpMode,
    /// `λ_max / λ_min` of the damped Hessian; exact mode only.
    pub hessian_condition: Option<f64>,
}

/// Hessian of `Σ_i w_i ℓ_i` with respect to the flat last layer, plus
/// `damping · I`.
///
/// With last-layer input `a = [h, 1]`, raw outputs `z = Wᵀa` and logit map
/// `A` (identity, or `[1, −1]ᵀ` for the binary head), the contribution of
/// one row is `w · (a aᵀ) ⊗ Aᵀ(diag p − p pᵀ)A`. Pseudo-labels enter as
/// constants, so their rows have the same curvature as labeled ones; rows
/// whose pseudo-label is below threshold contribute nothing.
pub fn last_layer_hessian(
    params: &ModelParams,
    batch: &WeightedBatch,
    spec: &LossSpec,
    damping: f64,
) -> Result<Matrix> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("last_layer_hessian"));
    }
    let (logits, cache) = forward(params, &batch.x)?;
    let h = cache.last_hidden();
    let out = params.out_units();
    let classes = params.num_classes();
    let jac = params.head().jacobian(out);
    let dim = (h.cols() + 1) * out;
    let mut hess = Matrix::zeros(dim, dim);
    let mut aug = vec![0.0; h.cols() + 1];
    let mut s = Matrix::zeros(out, out);
    for r in 0..batch.len() {
        let w = batch.weights[r];
        if w == 0.0 || spec.row_loss(logits.row(r), batch.targets[r])?.is_none() {
            continue;
        }
        let p = softmax(logits.row(r));
        // s = Aᵀ (diag p − p pᵀ) A
        for k in 0..out {
            for l in 0..out {
                let mut acc = 0.0;
                for i in 0..classes {
                    let aik = jac[(i, k)];
                    if aik == 0.0 {
                        continue;
                    }
                    for j in 0..classes {
                        let c = if i == j {
                            p[i] - p[i] * p[j]
                        } else {
                            -p[i] * p[j]
                        };
                        acc += aik * c * jac[(j, l)];
                    }
                }
                s[(k, l)] = w * acc;
            }
        }
        aug[..h.cols()].copy_from_slice(h.row(r));
        aug[h.cols()] = 1.0;
        for (a, &ha) in aug.iter().enumerate() {
            if ha == 0.0 {
                continue;
            }
            for k in 0..out {
                let row = hess.row_mut(a * out + k);
                for (b, &hb) in aug.iter().enumerate().skip(a) {
                    if hb == 0.0 {
                        continue;
                    }
                    let hab = ha * hb;
                    let start = if b == a { k } else { 0 };
                    for l in start..out {
                        row[b * out + l] += hab * s[(k, l)];
                    }
                }
            }
        }
    }
    // only the upper triangle (in (a,k) order) was accumulated
    for i in 0..dim {
        for j in 0..i {
            hess[(i, j)] = hess[(j, i)];
        }
    }
    hess.add_diagonal(damping);
    Ok(hess)
}

/// Damped last-layer Hessian of the combined objective on `D' ∪ U'`.
pub fn assemble_hessian(
    params: &ModelParams,
    d: &LabeledBatch,
    u: &UnlabeledBatch,
    weights: &WeightVector,
    damping: f64,
    spec: &LossSpec,
) -> Result<Matrix> {
    if !(damping > 0.0) {
        return Err(Error::InvalidConfig(vec![format!(
            "damping must be > 0, got {damping}"
        )]));
    }
    if d.is_empty() {
        return Err(Error::EmptyBatch("assemble_hessian labeled batch"));
    }
    if u.is_empty() {
        return Err(Error::EmptyBatch("assemble_hessian unlabeled batch"));
    }
    let batch = combined_batch(d, u, weights)?;
    let h = last_layer_hessian(params, &batch, spec, damping)?;
    if !h.is_finite() {
        let shown: Vec<usize> = u.ids.iter().copied().take(8).collect();
        return Err(Error::NonFinite(format!(
            "Hessian of batch with {} labeled rows and unlabeled ids {:?}{}",
            d.len(),
            shown,
            if u.len() > 8 { " ..." } else { "" }
        )));
    }
    Ok(h)
}

/// Approximates `H⁻¹ v`.
pub fn ihvp(h: &Matrix, v: &[f64], mode: IhvpMode) -> Result<Vec<f64>> {
    mode.validate()?;
    if h.rows() != v.len() || h.cols() != v.len() {
        return Err(Error::DimensionMismatch {
            op: "ihvp",
            left_rows: h.rows(),
            left_cols: h.cols(),
            right_rows: v.len(),
            right_cols: 1,
        });
    }
    match mode {
        IhvpMode::Exact => linalg::solve_spd(h, v),
        IhvpMode::Identity => Ok(v.to_vec()),
        IhvpMode::Neumann { terms, scale } => Ok(neumann(h, v, terms, scale)),
    }
}

fn neumann(h: &Matrix, v: &[f64], terms: usize, scale: f64) -> Vec<f64> {
    // p_0 = v, p_{j+1} = p_j − scale·H p_j; result = scale·Σ p_j
    let mut p = v.to_vec();
    let mut acc = v.to_vec();
    for _ in 1..terms {
        let hp = h.matvec(&p).expect("square");
        linalg::axpy(-scale, &hp, &mut p);
        linalg::axpy(1.0, &p, &mut acc);
    }
    acc.iter_mut().for_each(|x| *x *= scale);
    acc
}

/// `score_u = −(H⁻¹ g_V) · ∇ℓ_u` for every `u` in the unlabeled batch, where
/// `g_V` is the gradient of the mean validation cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn influence_scores(
    params: &ModelParams,
    v: &LabeledBatch,
    d: &LabeledBatch,
    u: &UnlabeledBatch,
    weights: &WeightVector,
    mode: IhvpMode,
    damping: f64,
    spec: &LossSpec,
) -> Result<InfluenceReport> {
    if v.is_empty() {
        return Err(Error::EmptyBatch("influence_scores validation batch"));
    }
    let hess = assemble_hessian(params, d, u, weights, damping, spec)?;
    let (_, g_v) = last_layer_loss_and_grad(params, &v.mean_batch(), &LossSpec::supervised())?;
    let (s, condition) = match mode {
        IhvpMode::Exact => {
            let chol = Cholesky::factor(&hess)?;
            let s = linalg::refined_solve(&chol, &hess, &g_v);
            (s, Some(linalg::condition_estimate(&hess, &chol, 100)))
        }
        _ => (ihvp(&hess, &g_v, mode)?, None),
    };
    let rows = per_example_last_layer_grads(params, &u.unit_batch(), spec)?;
    let scores = scores_from_rows(&rows, &s);
    if let Some(i) = scores.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "influence score of unlabeled id {}",
            u.ids[i]
        )));
    }
    Ok(InfluenceReport {
        batch_ids: u.ids.clone(),
        scores,
        mode,
        hessian_condition: condition,
    })
}

/// `−row · s` for each row of per-example gradients.
pub fn scores_from_rows(rows: &Matrix, ihvp_of_validation_grad: &[f64]) -> Vec<f64> {
    rows.row_iter()
        .map(|r| -dot(r, ihvp_of_validation_grad))
        .collect()
}

/// A strictly convex training problem whose per-example weights can be
/// perturbed, for finite-difference influence ground truth.
pub trait ConvexProbe {
    fn dim(&self) -> usize;

    /// Objective, gradient and Hessian at `theta`. `perturb = Some((j, ε))`
    /// adds `ε · ℓ_j` to the objective, `j` indexing the probe's unlabeled
    /// examples.
    fn objective(
        &self,
        theta: &[f64],
        perturb: Option<(usize, f64)>,
    ) -> Result<(f64, Vec<f64>, Matrix)>;

    fn validation_loss(&self, theta: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 100,
        }
    }
}

/// Newton's method with Armijo backtracking, to `‖∇‖ ≤ grad_tol`.
pub fn minimize_convex<P: ConvexProbe + ?Sized>(
    probe: &P,
    start: &[f64],
    perturb: Option<(usize, f64)>,
    settings: NewtonSettings,
) -> Result<Vec<f64>> {
    let mut theta = start.to_vec();
    let (mut f, mut g, mut h) = probe.objective(&theta, perturb)?;
    for iter in 0..=settings.max_iters {
        let gn = linalg::norm2(&g);
        if !gn.is_finite() {
            return Err(Error::NonFinite(format!(
                "probe gradient at Newton iteration {iter}"
            )));
        }
        if gn <= settings.grad_tol {
            return Ok(theta);
        }
        if iter == settings.max_iters {
            break;
        }
        let step = linalg::solve_spd(&h, &g)?;
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, d)| a - t * d).collect();
            let (ft, gt, ht) = probe.objective(&trial, perturb)?;
            if ft <= f - 1e-4 * t * slope || (t == 1.0 && ft <= f + 1e-13 * f.abs()) {
                accepted = Some((trial, ft, gt, ht));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, ft, gt, ht)) = accepted else {
            break;
        };
        theta = trial;
        f = ft;
        g = gt;
        h = ht;
    }
    Err(Error::NotConverged {
        grad_norm: linalg::norm2(&g),
        iterations: settings.max_iters,
    })
}

/// Ground-truth influence by retraining: `(L_V(θ*_{ε,j}) − L_V(θ*)) / ε`
/// where `θ*_{ε,j}` minimizes the objective with `ε · ℓ_j` added.
pub struct RetrainingOracle<'a, P: ConvexProbe + ?Sized> {
    probe: &'a P,
    settings: NewtonSettings,
    theta_star: Vec<f64>,
    val_star: f64,
}

impl<'a, P: ConvexProbe + ?Sized> RetrainingOracle<'a, P> {
    /// Trains the unperturbed problem to optimality from `start`.
    pub fn new(probe: &'a P, start: &[f64], settings: NewtonSettings) -> Result<Self> {
        let theta_star = minimize_convex(probe, start, None, settings)?;
        let val_star = probe.validation_loss(&theta_star)?;
        Ok(Self {
            probe,
            settings,
            theta_star,
            val_star,
        })
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn influence(&self, j: usize, epsilon: f64) -> Result<f64> {
        if !(1e-4..=1e-1).contains(&epsilon) {
            return Err(Error::InvalidConfig(vec![format!(
                "oracle epsilon must be in [1e-4, 1e-1], got {epsilon}"
            )]));
        }
        let theta = minimize_convex(
            self.probe,
            &self.theta_star,
            Some((j, epsilon)),
            self.settings,
        )?;
        Ok((self.probe.validation_loss(&theta)? - self.val_star) / epsilon)
    }
}

/// One-shot form of [`RetrainingOracle`].
pub fn retraining_oracle<P: ConvexProbe + ?Sized>(
    probe: &P,
    start: &[f64],
    j: usize,
    epsilon: f64,
) -> Result<f64> {
    RetrainingOracle::new(probe, start, NewtonSettings::default())?.influence(j, epsilon)
}
