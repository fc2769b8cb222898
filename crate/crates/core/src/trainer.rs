//! The bi-level training loop.
//!
//! Each outer iteration runs `inner_steps` parameter updates on sampled
//! labeled and unlabeled batches with the unlabeled weights held fixed, then
//! draws fresh batches, scores every sampled unlabeled example by its
//! influence on the validation loss and moves its weight against that score
//! with masked Adam. Weights are clamped at zero after every update.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{SplitDataset, TrainingView};
use crate::error::{Error, Result};
use crate::influence::{influence_scores, neumann_auto_scale, IhvpMode, InfluenceReport};
use crate::linalg::Matrix;
use crate::network::{forward, loss_and_grad, Head, ModelParams};
use crate::objective::{
    batch_loss, combined_batch, pseudo_label, LabeledBatch, LossSpec, UnlabeledBatch, WeightVector,
};
use crate::optim::{
    adam_step, madam_step, nonzero_mask, sgd_step, AdamConfig, AdamState, SgdState,
};
use crate::rng::SeededRng;

/// Inverse-Hessian approximation used for the outer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IhvpKind {
    Exact,
    Identity,
    /// `scale = None` picks `1 / (Gershgorin bound)` at every outer step.
    Neumann {
        terms: usize,
        scale: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaOptimizer {
    Adam,
    Sgd { momentum: f64 },
}

/// Which weight coordinates masked Adam touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRule {
    /// Coordinates with a nonzero hypergradient.
    NonZero,
    /// Coordinates sampled into the outer batch.
    Membership,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    /// Use the single-output binary head (two-class data only).
    pub binary_reparam: bool,
    pub inner_steps: usize,
    pub theta_step: f64,
    pub theta_optimizer: ThetaOptimizer,
    pub lambda_step: f64,
    pub warmup_iters: usize,
    pub outer_iters: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub validation_batch: usize,
    /// The whole validation set is used when it has at most this many points.
    pub full_validation_max: usize,
    pub lambda_init: f64,
    pub damping: f64,
    pub ihvp: IhvpKind,
    pub mask_rule: MaskRule,
    pub pseudo_label_threshold: f64,
    pub single_lambda_mode: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100],
            binary_reparam: true,
            inner_steps: 10,
            theta_step: 0.01,
            theta_optimizer: ThetaOptimizer::Adam,
            lambda_step: 0.01,
            warmup_iters: 0,
            outer_iters: 30,
            labeled_batch: 10,
            unlabeled_batch: 100,
            validation_batch: 30,
            full_validation_max: 1024,
            lambda_init: 1.0,
            damping: 1e-3,
            ihvp: IhvpKind::Exact,
            mask_rule: MaskRule::NonZero,
            pseudo_label_threshold: 0.0,
            single_lambda_mode: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, checked against the dataset sizes.
    pub fn validate(&self, data: &SplitDataset) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let view = data.training_view();
        if self.inner_steps < 1 {
            bad.push(format!(
                "inner_steps must be >= 1, got {}",
                self.inner_steps
            ));
        }
        if !(self.theta_step > 0.0) {
            bad.push(format!("theta_step must be > 0, got {}", self.theta_step));
        }
        if !(self.lambda_step >= 0.0) {
            bad.push(format!(
                "lambda_step must be >= 0, got {}",
                self.lambda_step
            ));
        }
        if !(self.lambda_init >= 0.0) {
            bad.push(format!(
                "lambda_init must be >= 0, got {}",
                self.lambda_init
            ));
        }
        if !(self.damping > 0.0) {
            bad.push(format!("damping must be > 0, got {}", self.damping));
        }
        if !(0.0..=1.0).contains(&self.pseudo_label_threshold) {
            bad.push(format!(
                "pseudo_label_threshold must be in [0, 1], got {}",
                self.pseudo_label_threshold
            ));
        }
        if let ThetaOptimizer::Sgd { momentum } = self.theta_optimizer {
            if !(0.0..1.0).contains(&momentum) {
                bad.push(format!("momentum must be in [0, 1), got {momentum}"));
            }
        }
        if let IhvpKind::Neumann { terms, scale } = self.ihvp {
            if terms < 1 {
                bad.push(format!("neumann_terms must be >= 1, got {terms}"));
            }
            if let Some(s) = scale {
                if !(s > 0.0) {
                    bad.push(format!("neumann_scale must be > 0, got {s}"));
                }
            }
        }
        for (name, size, avail) in [
            ("labeled_batch", self.labeled_batch, view.labeled.len()),
            (
                "unlabeled_batch",
                self.unlabeled_batch,
                view.unlabeled.rows(),
            ),
            (
                "validation_batch",
                self.validation_batch,
                view.validation.len(),
            ),
        ] {
            if size < 1 || size > avail {
                bad.push(format!("{name} must be in 1..={avail}, got {size}"));
            }
        }
        if self.hidden.contains(&0) {
            bad.push("hidden widths must be >= 1".into());
        }
        if self.binary_reparam && data.num_classes() != 2 {
            bad.push(format!(
                "binary_reparam needs 2 classes, data has {}",
                data.num_classes()
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }

    pub fn head(&self) -> Head {
        if self.binary_reparam {
            Head::BinaryReparam
        } else {
            Head::Softmax
        }
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        LossSpec::combined(self.pseudo_label_threshold)
    }
}

/// Metrics after one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog {
    /// 1-based outer iteration.
    pub iter: usize,
    pub val_loss: f64,
    pub val_err: f64,
    pub test_err: f64,
    pub lambda_mean: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: ModelParams,
    pub weights: WeightVector,
    pub log: Vec<IterLog>,
    /// Filled in by callers that have a clock.
    pub elapsed: Option<core::time::Duration>,
}

/// Hooks into the training loop, for logging.
pub trait TrainObserver {
    /// Before the first update (iteration 0).
    fn on_start(&mut self, _params: &ModelParams, _weights: &WeightVector) {}

    fn on_outer(
        &mut self,
        _log: &IterLog,
        _params: &ModelParams,
        _weights: &WeightVector,
        _report: Option<&InfluenceReport>,
    ) {
    }
}

impl TrainObserver for () {}

/// Mean cross-entropy and error rate on a labeled set.
pub fn evaluate(params: &ModelParams, data: &LabeledBatch) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyBatch("evaluate"));
    }
    let loss = batch_loss(params, &data.mean_batch(), &LossSpec::supervised())?;
    let wrong = predict(params, &data.x)?
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p != y)
        .count();
    Ok((loss, wrong as f64 / data.len() as f64))
}

/// Argmax class of each row, lowest index on ties.
pub fn predict(params: &ModelParams, x: &Matrix) -> Result<Vec<usize>> {
    let (logits, _) = forward(params, x)?;
    Ok(logits
        .row_iter()
        .map(|z| {
            pseudo_label(z, 0.0)
                .and_then(|t| t.iter().position(|&v| v == 1.0))
                .unwrap_or(0)
        })
        .collect())
}

/// Mean learned weight over unlabeled examples whose current pseudo-label is
/// wrong and over those where it is right, with the count of wrong ones.
/// Reads the hidden labels: analysis only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCorrectness {
    pub mean_incorrect: Option<f64>,
    pub mean_correct: Option<f64>,
    pub n_incorrect: usize,
    pub n_correct: usize,
}

pub fn weight_by_pseudo_label_correctness(
    params: &ModelParams,
    weights: &WeightVector,
    data: &SplitDataset,
) -> Result<WeightCorrectness> {
    let pred = predict(params, data.unlabeled_points())?;
    let (mut si, mut ni, mut sc, mut nc) = (0.0, 0, 0.0, 0);
    for (id, (p, y)) in pred.iter().zip(data.hidden_labels()).enumerate() {
        let w = weights.get(id)?;
        if p == y {
            sc += w;
            nc += 1;
        } else {
            si += w;
            ni += 1;
        }
    }
    Ok(WeightCorrectness {
        mean_incorrect: (ni > 0).then(|| si / ni as f64),
        mean_correct: (nc > 0).then(|| sc / nc as f64),
        n_incorrect: ni,
        n_correct: nc,
    })
}

/// Without-replacement batches, reshuffled every epoch.
#[derive(Debug, Clone)]
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl EpochSampler {
    fn new(n: usize, rng: SeededRng) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if self.pos + size > self.order.len() {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

mod stream {
    pub const INIT: u64 = 0;
    pub const INNER_LABELED: u64 = 1;
    pub const INNER_UNLABELED: u64 = 2;
    pub const OUTER_LABELED: u64 = 3;
    pub const OUTER_UNLABELED: u64 = 4;
    pub const OUTER_VALIDATION: u64 = 5;
}

enum ThetaState {
    Adam(AdamState),
    Sgd(SgdState),
}

struct Samplers {
    d: EpochSampler,
    u: EpochSampler,
}

impl Samplers {
    fn new(seed: u64, view: &TrainingView<'_>, d_stream: u64, u_stream: u64) -> Self {
        Self {
            d: EpochSampler::new(view.labeled.len(), SeededRng::with_stream(seed, d_stream)),
            u: EpochSampler::new(
                view.unlabeled.rows(),
                SeededRng::with_stream(seed, u_stream),
            ),
        }
    }

    fn draw(
        &mut self,
        view: &TrainingView<'_>,
        cfg: &TrainConfig,
    ) -> Result<(LabeledBatch, UnlabeledBatch)> {
        let di = self.d.next(cfg.labeled_batch);
        let d = LabeledBatch::new(
            view.labeled.x.select_rows(&di),
            di.iter().map(|&i| view.labeled.labels[i]).collect(),
        )?;
        let ui = self.u.next(cfg.unlabeled_batch);
        let x = view.unlabeled.select_rows(&ui);
        Ok((d, UnlabeledBatch::pseudo(ui, x)?))
    }
}

/// Runs the bi-level loop. With `single_lambda_mode` one shared weight is
/// learned from the summed scores instead.
pub fn train(config: &TrainConfig, data: &SplitDataset) -> Result<TrainResult> {
    train_observed(config, data, &mut ())
}

/// [`train`] with one shared weight for all unlabeled examples.
pub fn train_single_lambda(config: &TrainConfig, data: &SplitDataset) -> Result<TrainResult> {
    let mut cfg = config.clone();
    cfg.single_lambda_mode = true;
    train_observed(&cfg, data, &mut ())
}

pub fn train_observed<O: TrainObserver + ?Sized>(
    config: &TrainConfig,
    data: &SplitDataset,
    observer: &mut O,
) -> Result<TrainResult> {
    config.validate(data)?;
    let view = data.training_view();
    let spec = config.loss_spec()?;
    let seed = config.seed;

    let mut params = ModelParams::init(
        data.input_dim(),
        &config.hidden,
        data.num_classes(),
        config.head(),
        &mut SeededRng::with_stream(seed, stream::INIT),
    )?;
    let n_params = params.num_params();
    let mut theta_opt = match config.theta_optimizer {
        ThetaOptimizer::Adam => ThetaState::Adam(AdamState::new(
            n_params,
            AdamConfig::with_step_size(config.theta_step),
        )),
        ThetaOptimizer::Sgd { momentum } => {
            ThetaState::Sgd(SgdState::new(n_params, config.theta_step, momentum))
        }
    };
    let n_unlabeled = view.unlabeled.rows();
    let lambda_opt = AdamConfig::with_step_size(config.lambda_step);
    let mut weights = WeightVector::new(n_unlabeled, config.lambda_init, lambda_opt);
    let mut shared = (vec![config.lambda_init], AdamState::new(1, lambda_opt));

    let mut inner = Samplers::new(seed, &view, stream::INNER_LABELED, stream::INNER_UNLABELED);
    let mut outer = Samplers::new(seed, &view, stream::OUTER_LABELED, stream::OUTER_UNLABELED);
    let full_validation = view.validation.len() <= config.full_validation_max;
    let mut v_sampler = EpochSampler::new(
        view.validation.len(),
        SeededRng::with_stream(seed, stream::OUTER_VALIDATION),
    );

    observer.on_start(&params, &weights);

    let mut theta_update =
        |params: &mut ModelParams, weights: &WeightVector, step: usize| -> Result<()> {
            let (d, u) = inner.draw(&view, config)?;
            let batch = combined_batch(&d, &u, weights)?;
            let (loss, grads) = loss_and_grad(params, &batch, &spec)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at inner step {step}"
                )));
            }
            let mut flat = params.to_flat();
            let g = grads.to_flat();
            match &mut theta_opt {
                ThetaState::Adam(s) => adam_step(s, &mut flat, &g)?,
                ThetaState::Sgd(s) => sgd_step(s, &mut flat, &g)?,
            }
            params.assign_flat(&flat)?;
            if !params.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after inner step {step}"
                )));
            }
            Ok(())
        };

    let mut step = 0;
    for _ in 0..config.warmup_iters {
        theta_update(&mut params, &weights, step)?;
        step += 1;
    }

    let mut log = Vec::with_capacity(config.outer_iters);
    for it in 1..=config.outer_iters {
        for _ in 0..config.inner_steps {
            theta_update(&mut params, &weights, step).map_err(|e| e.at_outer(it))?;
            step += 1;
        }

        let report = if config.lambda_step == 0.0 {
            None
        } else {
            Some(
                outer_step(
                    config,
                    &view,
                    &params,
                    &mut weights,
                    &mut shared,
                    &spec,
                    &mut outer,
                    &mut v_sampler,
                    full_validation,
                )
                .map_err(|e| e.at_outer(it))?,
            )
        };

        let (val_loss, val_err) = evaluate(&params, view.validation)?;
        let (_, test_err) = evaluate(&params, data.test())?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("validation loss".into()).at_outer(it));
        }
        let (lambda_mean, lambda_min, lambda_max) = weights.stats();
        let row = IterLog {
            iter: it,
            val_loss,
            val_err,
            test_err,
            lambda_mean,
            lambda_min,
            lambda_max,
        };
        observer.on_outer(&row, &params, &weights, report.as_ref());
        log.push(row);
    }

    Ok(TrainResult {
        params,
        weights,
        log,
        elapsed: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn outer_step(
    config: &TrainConfig,
    view: &TrainingView<'_>,
    params: &ModelParams,
    weights: &mut WeightVector,
    shared: &mut (Vec<f64>, AdamState),
    spec: &LossSpec,
    outer: &mut Samplers,
    v_sampler: &mut EpochSampler,
    full_validation: bool,
) -> Result<InfluenceReport> {
    let n_unlabeled = weights.len();
    let (d, u) = outer.draw(view, config)?;
    let v = if full_validation {
        view.validation.clone()
    } else {
        let vi = v_sampler.next(config.validation_batch);
        LabeledBatch::new(
            view.validation.x.select_rows(&vi),
            vi.iter().map(|&i| view.validation.labels[i]).collect(),
        )?
    };
    let mode = resolve_mode(config, params, &d, &u, weights, spec)?;
    let report = influence_scores(params, &v, &d, &u, weights, mode, config.damping, spec)?;

    if config.single_lambda_mode {
        let (value, state) = shared;
        let g: f64 = report.scores.iter().sum();
        adam_step(state, value, &[g])?;
        if value[0] < 0.0 {
            value[0] = 0.0;
        }
        weights.fill(value[0]);
    } else {
        let mut g = vec![0.0; n_unlabeled];
        let mut mask = vec![false; n_unlabeled];
        for (&id, &s) in report.batch_ids.iter().zip(&report.scores) {
            g[id] = s;
            mask[id] = true;
        }
        if config.mask_rule == MaskRule::NonZero {
            mask = nonzero_mask(&g);
        }
        let (values, state) = weights.parts_mut();
        madam_step(state, values, &g, &mask)?;
        weights.clamp_nonnegative();
    }

    Ok(report)
}

fn resolve_mode(
    config: &TrainConfig,
    params: &ModelParams,
    d: &LabeledBatch,
    u: &UnlabeledBatch,
    weights: &WeightVector,
    spec: &LossSpec,
) -> Result<IhvpMode> {
    Ok(match config.ihvp {
        IhvpKind::Exact => IhvpMode::Exact,
        IhvpKind::Identity => IhvpMode::Identity,
        IhvpKind::Neumann {
            terms,
            scale: Some(scale),
        } => IhvpMode::Neumann { terms, scale },
        IhvpKind::Neumann { terms, scale: None } => {
            let h =
                crate::influence::assemble_hessian(params, d, u, weights, config.damping, spec)?;
            IhvpMode::Neumann {
                terms,
                scale: neumann_auto_scale(&h),
            }
        }
    })
}
