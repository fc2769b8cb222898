//! Synthetic two-dimensional binary datasets and the labeled / validation /
//! unlabeled / test split.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objective::LabeledBatch;
use crate::rng::SeededRng;

pub const INNER_RADIUS: f64 = 0.5;
pub const OUTER_RADIUS: f64 = 1.0;

/// Generated points with their classes, in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn class_counts(n: usize) -> [usize; 2] {
        [n - n / 2, n / 2]
    }
}

/// Two unit-variance Gaussian blobs on either side of a random hyperplane
/// through the origin. Points closer than `margin / 2` to the hyperplane
/// (or on the wrong side of it) are redrawn, so the classes are separated by
/// a gap of width `margin`.
pub fn gen_linear(n: usize, margin: f64, seed: u64) -> RawDataset {
    let mut rng = SeededRng::new(seed);
    let angle = rng.uniform_range(0.0, 2.0 * PI);
    let normal = [libm::cos(angle), libm::sin(angle)];
    let offset = 0.5 * margin + 1.0;
    let counts = RawDataset::class_counts(n);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, &count) in counts.iter().enumerate() {
        let sign = if class == 1 { 1.0 } else { -1.0 };
        for _ in 0..count {
            loop {
                let p = [
                    sign * offset * normal[0] + rng.standard_normal(),
                    sign * offset * normal[1] + rng.standard_normal(),
                ];
                let proj = sign * (p[0] * normal[0] + p[1] * normal[1]);
                if proj >= 0.5 * margin {
                    points.push(p);
                    labels.push(class);
                    break;
                }
            }
        }
    }
    RawDataset { points, labels }
}

/// Concentric rings: class 0 at radius 0.5, class 1 at radius 1.0, plus
/// isotropic Gaussian noise.
pub fn gen_circles(n: usize, noise: f64, seed: u64) -> RawDataset {
    let mut rng = SeededRng::new(seed);
    let counts = RawDataset::class_counts(n);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, &count) in counts.iter().enumerate() {
        let r = if class == 0 {
            INNER_RADIUS
        } else {
            OUTER_RADIUS
        };
        for _ in 0..count {
            let t = rng.uniform_range(0.0, 2.0 * PI);
            let (ex, ey) = (rng.standard_normal(), rng.standard_normal());
            points.push([r * libm::cos(t) + noise * ex, r * libm::sin(t) + noise * ey]);
            labels.push(class);
        }
    }
    RawDataset { points, labels }
}

/// Two interleaving half circles: class 0 on `(cos t, sin t)`, class 1 on
/// `(1 − cos t, 0.5 − sin t)`, `t ∈ [0, π]`, plus isotropic Gaussian noise.
pub fn gen_moons(n: usize, noise: f64, seed: u64) -> RawDataset {
    let mut rng = SeededRng::new(seed);
    let counts = RawDataset::class_counts(n);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let t = rng.uniform_range(0.0, PI);
            let (ex, ey) = (rng.standard_normal(), rng.standard_normal());
            let (x, y) = if class == 0 {
                (libm::cos(t), libm::sin(t))
            } else {
                (1.0 - libm::cos(t), 0.5 - libm::sin(t))
            };
            points.push([x + noise * ex, y + noise * ey]);
            labels.push(class);
        }
    }
    RawDataset { points, labels }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub labeled: usize,
    pub validation: usize,
    pub unlabeled: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            labeled: 10,
            validation: 30,
            unlabeled: 1000,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.labeled + self.validation + self.unlabeled
    }
}

/// Labeled set `D`, validation set `V`, unlabeled set `U` and a test set.
///
/// Unlabeled example ids are row indices `0..|U|`. Their ground-truth classes
/// are kept for evaluation and analysis only; training code goes through
/// [`SplitDataset::training_view`], which does not expose them.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    labeled: LabeledBatch,
    validation: LabeledBatch,
    unlabeled: Matrix,
    hidden: Vec<usize>,
    test: LabeledBatch,
}

/// The parts of a split that training may read.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub labeled: &'a LabeledBatch,
    pub validation: &'a LabeledBatch,
    pub unlabeled: &'a Matrix,
}

impl SplitDataset {
    pub fn new(
        labeled: LabeledBatch,
        validation: LabeledBatch,
        unlabeled: Matrix,
        hidden: Vec<usize>,
        test: LabeledBatch,
    ) -> Result<Self> {
        if hidden.len() != unlabeled.rows() {
            return Err(Error::LengthMismatch {
                op: "unlabeled hidden labels",
                expected: unlabeled.rows(),
                actual: hidden.len(),
            });
        }
        let dim = labeled.x.cols();
        for (what, m) in [
            ("validation", &validation.x),
            ("unlabeled", &unlabeled),
            ("test", &test.x),
        ] {
            if m.rows() > 0 && m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    op: what,
                    left_rows: labeled.x.rows(),
                    left_cols: dim,
                    right_rows: m.rows(),
                    right_cols: m.cols(),
                });
            }
        }
        Ok(Self {
            labeled,
            validation,
            unlabeled,
            hidden,
            test,
        })
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            labeled: &self.labeled,
            validation: &self.validation,
            unlabeled: &self.unlabeled,
        }
    }

    pub fn labeled(&self) -> &LabeledBatch {
        &self.labeled
    }

    pub fn validation(&self) -> &LabeledBatch {
        &self.validation
    }

    pub fn unlabeled_points(&self) -> &Matrix {
        &self.unlabeled
    }

    /// Ground truth of the unlabeled set. For evaluation and analysis only.
    pub fn hidden_labels(&self) -> &[usize] {
        &self.hidden
    }

    pub fn test(&self) -> &LabeledBatch {
        &self.test
    }

    pub fn input_dim(&self) -> usize {
        self.labeled.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labeled
            .labels
            .iter()
            .chain(&self.validation.labels)
            .chain(&self.hidden)
            .chain(&self.test.labels)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// `(min, max)` over all points and coordinates: `[[x0min, x1min], [x0max, x1max]]`.
    pub fn bounding_box(&self) -> [[f64; 2]; 2] {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for m in [
            &self.labeled.x,
            &self.validation.x,
            &self.unlabeled,
            &self.test.x,
        ] {
            for r in m.row_iter() {
                for k in 0..2.min(r.len()) {
                    lo[k] = lo[k].min(r[k]);
                    hi[k] = hi[k].max(r[k]);
                }
            }
        }
        [lo, hi]
    }
}

fn take_batch(raw: &RawDataset, idx: &[usize]) -> LabeledBatch {
    let data = idx.iter().flat_map(|&i| raw.points[i]).collect();
    LabeledBatch {
        x: Matrix::from_vec(idx.len(), 2, data).expect("sized"),
        labels: idx.iter().map(|&i| raw.labels[i]).collect(),
    }
}

/// Class-balanced labeled and validation sets, then `unlabeled` points from
/// the shuffled remainder; everything left over is the test set.
pub fn split(raw: &RawDataset, sizes: SplitSizes, seed: u64) -> Result<SplitDataset> {
    if raw.len() < sizes.total() {
        return Err(Error::InsufficientData {
            needed: sizes.total(),
            available: raw.len(),
        });
    }
    let mut rng = SeededRng::new(seed);
    let num_classes = raw.labels.iter().max().map_or(1, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| (0..raw.len()).filter(|&i| raw.labels[i] == c).collect())
        .collect();
    for pool in &mut by_class {
        rng.shuffle(pool);
    }
    let mut cursor = alloc::vec![0usize; num_classes];
    let mut balanced = |count: usize| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let c = k % num_classes;
            let i = *by_class[c].get(cursor[c]).ok_or(Error::InsufficientData {
                needed: cursor[c] + 1,
                available: by_class[c].len(),
            })?;
            cursor[c] += 1;
            out.push(i);
        }
        Ok(out)
    };
    let labeled_idx = balanced(sizes.labeled)?;
    let validation_idx = balanced(sizes.validation)?;
    let mut rest: Vec<usize> = by_class
        .iter()
        .zip(&cursor)
        .flat_map(|(pool, &c)| pool[c..].iter().copied())
        .collect();
    rest.sort_unstable();
    rng.shuffle(&mut rest);
    let (unlabeled_idx, test_idx) = rest.split_at(sizes.unlabeled);
    let unlabeled = take_batch(raw, unlabeled_idx);
    SplitDataset::new(
        take_batch(raw, &labeled_idx),
        take_batch(raw, &validation_idx),
        unlabeled.x,
        unlabeled.labels,
        take_batch(raw, test_idx),
    )
}
