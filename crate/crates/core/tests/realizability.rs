//! The synthetic tasks are learnable: with every label available, a plain
//! supervised MLP separates both datasets at the default noise level.

use reweight_core::data::{gen_circles, gen_moons, split, RawDataset, SplitSizes};
use reweight_core::trainer::{evaluate, train, TrainConfig};

const MIN_ACCURACY: f64 = 0.97;

fn fully_supervised_accuracy(raw: &RawDataset, seed: u64) -> f64 {
    // 1040 points: 800 labeled, 40 held for the split's other parts, 200 test
    let sizes = SplitSizes {
        labeled: 800,
        validation: 20,
        unlabeled: 20,
    };
    let data = split(raw, sizes, seed).unwrap();
    let cfg = TrainConfig {
        lambda_init: 0.0,
        lambda_step: 0.0,
        labeled_batch: 100,
        unlabeled_batch: 20,
        validation_batch: 20,
        inner_steps: 100,
        outer_iters: 20,
        seed,
        ..TrainConfig::default()
    };
    let result = train(&cfg, &data).unwrap();
    let (_, err) = evaluate(&result.params, data.test()).unwrap();
    1.0 - err
}

#[test]
fn moons_are_realizable() {
    for seed in 0..3 {
        let acc = fully_supervised_accuracy(&gen_moons(1040, 0.1, seed), seed);
        assert!(acc >= MIN_ACCURACY, "moons seed {seed}: accuracy {acc}");
    }
}

#[test]
fn circles_are_realizable() {
    for seed in 0..3 {
        let acc = fully_supervised_accuracy(&gen_circles(1040, 0.1, seed), seed);
        assert!(acc >= MIN_ACCURACY, "circles seed {seed}: accuracy {acc}");
    }
}
