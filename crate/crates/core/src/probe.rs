//! Convex last-layer probe: the influence estimate compared against
//! retraining ground truth.
//!
//! The hidden layers of a randomly initialized network are frozen, so the
//! training objective is an L2-regularized logistic problem in the last
//! layer alone. Pseudo-labels are computed once from a fit on the labeled
//! set and then held fixed, which keeps the objective smooth.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::influence::{
    influence_scores, last_layer_hessian, ConvexProbe, IhvpMode, NewtonSettings, RetrainingOracle,
};
use crate::linalg::{dot, Matrix};
use crate::network::{forward, last_layer_loss_and_grad, Head, ModelParams};
use crate::objective::{
    batch_loss, combined_batch, pseudo_label, LabeledBatch, LossSpec, Target, UnlabeledBatch,
    WeightVector, WeightedBatch,
};
use crate::optim::AdamConfig;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub head: Head,
    /// Number of unlabeled examples probed (the first ids of the split).
    pub examples: usize,
    pub epsilon: f64,
    /// L2 strength of the probe objective; also the Hessian damping, so the
    /// damped Hessian is the exact Hessian of the probe objective.
    pub l2: f64,
    pub lambda_init: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100],
            head: Head::BinaryReparam,
            examples: 50,
            epsilon: 1e-2,
            l2: 1e-2,
            lambda_init: 1.0,
            seed: 0,
        }
    }
}

/// Training problem over the flat last layer of a frozen network.
#[derive(Debug, Clone)]
pub struct LastLayerProbe {
    params: ModelParams,
    labeled: LabeledBatch,
    unlabeled: UnlabeledBatch,
    weights: WeightVector,
    validation: LabeledBatch,
    spec: LossSpec,
    l2: f64,
}

impl LastLayerProbe {
    pub fn new(
        params: ModelParams,
        labeled: LabeledBatch,
        unlabeled: UnlabeledBatch,
        weights: WeightVector,
        validation: LabeledBatch,
        l2: f64,
    ) -> Result<Self> {
        if !(l2 > 0.0) {
            return Err(Error::InvalidConfig(vec![format!(
                "probe l2 must be > 0, got {l2}"
            )]));
        }
        Ok(Self {
            params,
            labeled,
            unlabeled,
            weights,
            validation,
            spec: LossSpec::combined(0.0)?,
            l2,
        })
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<ModelParams> {
        let mut p = self.params.clone();
        p.set_last_layer_flat(theta)?;
        Ok(p)
    }

    pub fn unlabeled(&self) -> &UnlabeledBatch {
        &self.unlabeled
    }

    pub fn initial_theta(&self) -> Vec<f64> {
        self.params.last_layer_flat()
    }

    fn training_batch(&self, perturb: Option<(usize, f64)>) -> Result<WeightedBatch> {
        let mut batch = combined_batch(&self.labeled, &self.unlabeled, &self.weights)?;
        if let Some((j, eps)) = perturb {
            if j >= self.unlabeled.len() {
                return Err(Error::MissingWeight { id: j });
            }
            batch.push(self.unlabeled.x.row(j), self.unlabeled.targets[j], eps);
        }
        Ok(batch)
    }

    /// Influence estimates at `theta` (normally the optimum).
    pub fn influence(&self, theta: &[f64], mode: IhvpMode) -> Result<Vec<f64>> {
        let p = self.with_theta(theta)?;
        let r = influence_scores(
            &p,
            &self.validation,
            &self.labeled,
            &self.unlabeled,
            &self.weights,
            mode,
            self.l2,
            &self.spec,
        )?;
        Ok(r.scores)
    }
}

impl ConvexProbe for LastLayerProbe {
    fn dim(&self) -> usize {
        self.params.last_layer_dim()
    }

    fn objective(
        &self,
        theta: &[f64],
        perturb: Option<(usize, f64)>,
    ) -> Result<(f64, Vec<f64>, Matrix)> {
        let p = self.with_theta(theta)?;
        let batch = self.training_batch(perturb)?;
        let (mut f, mut g) = last_layer_loss_and_grad(&p, &batch, &self.spec)?;
        f += 0.5 * self.l2 * dot(theta, theta);
        crate::linalg::axpy(self.l2, theta, &mut g);
        let h = last_layer_hessian(&p, &batch, &self.spec, self.l2)?;
        Ok((f, g, h))
    }

    fn validation_loss(&self, theta: &[f64]) -> Result<f64> {
        batch_loss(
            &self.with_theta(theta)?,
            &self.validation.mean_batch(),
            &LossSpec::supervised(),
        )
    }
}

/// Builds the probe from a split: frozen random network, last layer fitted
/// on the labeled set to produce fixed pseudo-labels for the first
/// `config.examples` unlabeled points.
pub fn build_probe(data: &SplitDataset, config: &ProbeConfig) -> Result<LastLayerProbe> {
    let view = data.training_view();
    if config.examples == 0 || config.examples > view.unlabeled.rows() {
        return Err(Error::InvalidConfig(vec![format!(
            "probe examples must be in 1..={}, got {}",
            view.unlabeled.rows(),
            config.examples
        )]));
    }
    let mut rng = SeededRng::with_stream(config.seed, 0);
    let params = ModelParams::init(
        data.input_dim(),
        &config.hidden,
        data.num_classes(),
        config.head,
        &mut rng,
    )?;

    // supervised-only fit gives the frozen pseudo-labels
    let empty = UnlabeledBatch::pseudo(vec![], Matrix::zeros(0, data.input_dim()))?;
    let sup = LastLayerProbe::new(
        params.clone(),
        view.labeled.clone(),
        empty,
        WeightVector::new(0, 0.0, AdamConfig::default()),
        view.validation.clone(),
        config.l2,
    )?;
    let theta0 = crate::influence::minimize_convex(
        &sup,
        &sup.initial_theta(),
        None,
        NewtonSettings::default(),
    )?;
    let fitted = sup.with_theta(&theta0)?;

    let ids: Vec<usize> = (0..config.examples).collect();
    let x = view.unlabeled.select_rows(&ids);
    let (logits, _) = forward(&fitted, &x)?;
    let targets = (0..ids.len())
        .map(|r| {
            let onehot = pseudo_label(logits.row(r), 0.0).expect("threshold 0 always labels");
            Target::Class(onehot.iter().position(|&v| v == 1.0).expect("one hot"))
        })
        .collect();
    let unlabeled = UnlabeledBatch::with_targets(ids, x, targets)?;
    let weights = WeightVector::new(config.examples, config.lambda_init, AdamConfig::default());
    LastLayerProbe::new(
        params,
        view.labeled.clone(),
        unlabeled,
        weights,
        view.validation.clone(),
        config.l2,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub ids: Vec<usize>,
    pub influence: Vec<f64>,
    pub oracle: Vec<f64>,
    pub pearson: f64,
    pub sign_agreement: f64,
}

/// Influence estimates and retraining ground truth for every probed example.
pub fn run_probe(probe: &LastLayerProbe, mode: IhvpMode, epsilon: f64) -> Result<ProbeResult> {
    let oracle = RetrainingOracle::new(probe, &probe.initial_theta(), NewtonSettings::default())?;
    let influence = probe.influence(oracle.theta_star(), mode)?;
    let truth = (0..probe.unlabeled().len())
        .map(|j| oracle.influence(j, epsilon))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeResult {
        ids: probe.unlabeled().ids.clone(),
        pearson: pearson(&influence, &truth),
        sign_agreement: sign_agreement(&influence, &truth),
        influence,
        oracle: truth,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / libm::sqrt(saa * sbb)
}

/// Fraction of pairs with the same sign (zeros match only zeros).
pub fn sign_agreement(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let same = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.signum() == y.signum() || (**x == 0.0 && **y == 0.0))
        .count();
    same as f64 / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_of_affine_copy_is_one() {
        let a = [1.0, 2.0, 4.0, -3.0];
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x - 1.0).collect();
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_agreement_counts() {
        assert_eq!(
            sign_agreement(&[1.0, -1.0, 2.0, -2.0], &[3.0, -0.5, -1.0, -4.0]),
            0.75
        );
    }
}
