use proptest::prelude::*;

use reweight_core::data::{gen_circles, gen_linear, gen_moons, split, SplitSizes};
use reweight_core::influence::{
    assemble_hessian, ihvp, influence_scores, neumann_auto_scale, scores_from_rows, IhvpMode,
    InfluenceReport,
};
use reweight_core::linalg::{relative_residual, solve_spd, Cholesky};
use reweight_core::network::{loss_and_grad, per_example_last_layer_grads, Head, ModelParams};
use reweight_core::objective::{
    combined_loss, pseudo_label, LabeledBatch, LossSpec, Target, UnlabeledBatch, WeightVector,
    WeightedBatch,
};
use reweight_core::optim::{adam_step, madam_step, AdamConfig, AdamState};
use reweight_core::rng::rng_normal;
use reweight_core::trainer::{train_observed, IterLog, MaskRule, TrainConfig, TrainObserver};
use reweight_core::{Matrix, SeededRng};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig::with_cases(n)
}

fn net(rng: &mut SeededRng, hidden: usize, head: Head) -> ModelParams {
    let classes = if head == Head::BinaryReparam { 2 } else { 3 };
    ModelParams::init(2, &[hidden], classes, head, rng).unwrap()
}

fn points(rng: &mut SeededRng, n: usize, scale: f64) -> Matrix {
    Matrix::from_vec(n, 2, rng_normal(rng, 2 * n, 0.0, scale)).unwrap()
}

fn labeled(rng: &mut SeededRng, n: usize, classes: usize) -> LabeledBatch {
    let x = points(rng, n, 1.0);
    let labels = (0..n).map(|i| i % classes).collect();
    LabeledBatch::new(x, labels).unwrap()
}

fn head_of(binary: bool) -> Head {
    if binary {
        Head::BinaryReparam
    } else {
        Head::Softmax
    }
}

fn random_spd(rng: &mut SeededRng, n: usize) -> Matrix {
    let a = Matrix::from_vec(n, n, rng_normal(rng, n * n, 0.0, 1.0)).unwrap();
    let mut h = a.transpose().matmul(&a).unwrap();
    h.add_diagonal(0.5);
    h
}

/// A small problem: labeled, unlabeled and validation batches on one net.
struct Problem {
    params: ModelParams,
    d: LabeledBatch,
    u: UnlabeledBatch,
    v: LabeledBatch,
    weights: WeightVector,
}

fn problem(seed: u64, binary: bool, n_u: usize) -> Problem {
    let mut rng = SeededRng::new(seed);
    let head = head_of(binary);
    let params = net(&mut rng, 6, head);
    let classes = params.num_classes();
    let d = labeled(&mut rng, 5, classes);
    let v = labeled(&mut rng, 7, classes);
    let u = UnlabeledBatch::pseudo((0..n_u).collect(), points(&mut rng, n_u, 1.0)).unwrap();
    let mut weights = WeightVector::new(n_u, 1.0, AdamConfig::default());
    for id in 0..n_u {
        weights.set(id, rng.uniform_range(0.0, 2.0)).unwrap();
    }
    Problem {
        params,
        d,
        u,
        v,
        weights,
    }
}

fn scores(p: &Problem, u: &UnlabeledBatch, v: &LabeledBatch, mode: IhvpMode) -> Vec<f64> {
    influence_scores(
        &p.params,
        v,
        &p.d,
        u,
        &p.weights,
        mode,
        1e-3,
        &LossSpec::combined(0.0).unwrap(),
    )
    .unwrap()
    .scores
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn solve_spd_recovers_x(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = SeededRng::new(seed);
        let h = random_spd(&mut rng, n);
        let x = rng_normal(&mut rng, n, 0.0, 1.0);
        let hx = h.matvec(&x).unwrap();
        let got = solve_spd(&h, &hx).unwrap();
        let err: f64 = got.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-8 * norm.max(1e-12), "err {err}");
    }

    #[test]
    fn seeds_reproduce_datasets_and_inits(seed in any::<u64>(), kind in 0usize..3) {
        let gen = |s| match kind {
            0 => gen_moons(120, 0.1, s),
            1 => gen_circles(120, 0.1, s),
            _ => gen_linear(120, 1.0, s),
        };
        let sizes = SplitSizes { labeled: 10, validation: 10, unlabeled: 60 };
        prop_assert_eq!(split(&gen(seed), sizes, seed).unwrap(), split(&gen(seed), sizes, seed).unwrap());
        let a = ModelParams::init(2, &[8, 4], 2, Head::Softmax, &mut SeededRng::new(seed)).unwrap();
        let b = ModelParams::init(2, &[8, 4], 2, Head::Softmax, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(a.to_flat(), b.to_flat());
    }

    #[test]
    fn splits_are_disjoint(seed in any::<u64>(), labeled in 1usize..6, validation in 1usize..6, unlabeled in 1usize..40) {
        let sizes = SplitSizes { labeled: 2 * labeled, validation: 2 * validation, unlabeled };
        let raw = gen_moons(sizes.total() + 17, 0.1, seed);
        let s = split(&raw, sizes, seed).unwrap();
        let mut seen: Vec<[u64; 2]> = Vec::new();
        for m in [&s.labeled().x, &s.validation().x, s.unlabeled_points(), &s.test().x] {
            seen.extend(m.row_iter().map(|r| [r[0].to_bits(), r[1].to_bits()]));
        }
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(total, raw.len());
        prop_assert_eq!(seen.len(), total);
    }

    #[test]
    fn per_example_rows_sum_to_batch_gradient(seed in any::<u64>(), n in 1usize..20, binary in any::<bool>()) {
        let mut rng = SeededRng::new(seed);
        let p = net(&mut rng, 7, head_of(binary));
        let x = points(&mut rng, n, 2.0);
        let classes = p.num_classes();
        let targets = (0..n).map(|i| if i % 3 == 0 { Target::Pseudo } else { Target::Class(i % classes) }).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 3.0)).collect();
        let batch = WeightedBatch::new(x, targets, weights.clone()).unwrap();
        let spec = LossSpec::combined(0.0).unwrap();
        let rows = per_example_last_layer_grads(&p, &batch, &spec).unwrap();
        let (_, g) = loss_and_grad(&p, &batch, &spec).unwrap();
        let flat = g.to_flat();
        let last = &flat[flat.len() - p.last_layer_dim()..];
        for (k, &want) in last.iter().enumerate() {
            let got: f64 = (0..n).map(|i| weights[i] * rows[(i, k)]).sum();
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "coord {k}: {got} vs {want}");
        }
    }

    #[test]
    fn gradients_finite_for_large_inputs(seed in any::<u64>(), n in 1usize..10, binary in any::<bool>()) {
        let mut rng = SeededRng::new(seed);
        let p = net(&mut rng, 5, head_of(binary));
        let data: Vec<f64> = (0..2 * n).map(|_| rng.uniform_range(-1e3, 1e3)).collect();
        let x = Matrix::from_vec(n, 2, data).unwrap();
        let batch = WeightedBatch::new(x, vec![Target::Pseudo; n], vec![1.0; n]).unwrap();
        let spec = LossSpec::pseudo_label(0.0).unwrap();
        let (loss, g) = loss_and_grad(&p, &batch, &spec).unwrap();
        prop_assert!(loss.is_finite() && g.is_finite());
        prop_assert!(per_example_last_layer_grads(&p, &batch, &spec).unwrap().is_finite());
    }

    #[test]
    fn combined_loss_is_affine_in_each_weight(seed in any::<u64>(), binary in any::<bool>(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let mut p = problem(seed, binary, 6);
        let spec = LossSpec::combined(0.0).unwrap();
        let id = (seed % 6) as usize;
        let at = |p: &mut Problem, lam: f64| {
            p.weights.set(id, lam).unwrap();
            combined_loss(&p.params, &p.d, &p.u, &p.weights, &spec).unwrap()
        };
        let (la, lb, l0) = (at(&mut p, a), at(&mut p, b), at(&mut p, 0.0));
        let single = p.u.select(&[id]);
        let mut unit = WeightVector::new(6, 0.0, AdamConfig::default());
        unit.set(id, 1.0).unwrap();
        let empty = LabeledBatch::new(Matrix::zeros(0, 2), vec![]).unwrap();
        // slope is ℓ_U(u) / |U'|
        let slope = combined_loss(&p.params, &empty, &single, &unit, &spec).unwrap() / 6.0;
        prop_assert!(close(la, l0 + a * slope, 1e-12));
        prop_assert!(close(lb, l0 + b * slope, 1e-12));
    }

    #[test]
    fn pseudo_label_ignores_logit_shift(z in proptest::collection::vec(-50.0f64..50.0, 1..6), c in -1e3f64..1e3, th in 0.0f64..1.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        prop_assert_eq!(pseudo_label(&z, th), pseudo_label(&shifted, th));
    }

    #[test]
    fn binary_reparam_hessian_is_pd_after_damping(seed in any::<u64>(), damping in 1e-3f64..1e-1) {
        let p = problem(seed, true, 8);
        let h = assemble_hessian(&p.params, &p.d, &p.u, &p.weights, damping, &LossSpec::combined(0.0).unwrap()).unwrap();
        prop_assert!(Cholesky::factor(&h).is_ok());
    }

    #[test]
    fn scores_are_linear_in_validation_gradient(seed in any::<u64>(), binary in any::<bool>(), identity in any::<bool>()) {
        let p = problem(seed, binary, 8);
        let spec = LossSpec::combined(0.0).unwrap();
        let mode = if identity { IhvpMode::Identity } else { IhvpMode::Exact };
        let h = assemble_hessian(&p.params, &p.d, &p.u, &p.weights, 1e-3, &spec).unwrap();
        let rows = per_example_last_layer_grads(&p.params, &p.u.unit_batch(), &spec).unwrap();
        let g = rng_normal(&mut SeededRng::new(seed ^ 1), rows.cols(), 0.0, 1.0);
        let g2: Vec<f64> = g.iter().map(|x| 2.0 * x).collect();
        let one = scores_from_rows(&rows, &ihvp(&h, &g, mode).unwrap());
        let two = scores_from_rows(&rows, &ihvp(&h, &g2, mode).unwrap());
        for (a, b) in one.iter().zip(&two) {
            prop_assert!(close(2.0 * a, *b, 1e-10), "{a} {b}");
        }
    }

    #[test]
    fn exact_scores_follow_row_permutation(seed in any::<u64>(), binary in any::<bool>()) {
        let p = problem(seed, binary, 9);
        let mut order: Vec<usize> = (0..9).collect();
        SeededRng::new(seed ^ 7).shuffle(&mut order);
        let permuted = p.u.select(&order);
        let base = scores(&p, &p.u, &p.v, IhvpMode::Exact);
        let moved = scores(&p, &permuted, &p.v, IhvpMode::Exact);
        for (k, &i) in order.iter().enumerate() {
            prop_assert!(close(moved[k], base[i], 1e-9), "{} vs {}", moved[k], base[i]);
        }
    }

    #[test]
    fn neumann_residual_shrinks_with_terms(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = SeededRng::new(seed);
        let h = random_spd(&mut rng, n);
        let v = rng_normal(&mut rng, n, 0.0, 1.0);
        let scale = neumann_auto_scale(&h);
        let mut prev = f64::INFINITY;
        for terms in 1..40 {
            let x = ihvp(&h, &v, IhvpMode::Neumann { terms, scale }).unwrap();
            let r = relative_residual(&h, &x, &v);
            prop_assert!(r <= prev * (1.0 + 1e-12) + 1e-15, "terms {terms}: {r} > {prev}");
            prev = r;
        }
    }

    #[test]
    fn positive_rescaling_keeps_ranking(s in proptest::collection::vec(-1e3f64..1e3, 1..30), c in 1e-3f64..1e3) {
        let rank = |xs: &[f64]| {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
            idx
        };
        let scaled: Vec<f64> = s.iter().map(|x| c * x).collect();
        prop_assert_eq!(rank(&s), rank(&scaled));
    }

    #[test]
    fn madam_never_touches_masked_coordinates(seed in any::<u64>(), n in 1usize..16, steps in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let mut state = AdamState::new(n, AdamConfig::default());
        let mut params = rng_normal(&mut rng, n, 0.0, 1.0);
        for _ in 0..steps {
            let g = rng_normal(&mut rng, n, 0.0, 1.0);
            let mask: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
            let before = (params.clone(), state.first_moment().to_vec(), state.second_moment().to_vec());
            madam_step(&mut state, &mut params, &g, &mask).unwrap();
            for i in (0..n).filter(|&i| !mask[i]) {
                prop_assert_eq!(params[i].to_bits(), before.0[i].to_bits());
                prop_assert_eq!(state.first_moment()[i].to_bits(), before.1[i].to_bits());
                prop_assert_eq!(state.second_moment()[i].to_bits(), before.2[i].to_bits());
            }
        }
    }

    #[test]
    fn madam_with_full_mask_is_adam(seed in any::<u64>(), n in 1usize..16, steps in 1usize..12) {
        let mut rng = SeededRng::new(seed);
        let start = rng_normal(&mut rng, n, 0.0, 1.0);
        let (mut pa, mut pm) = (start.clone(), start);
        let mut sa = AdamState::new(n, AdamConfig::default());
        let mut sm = sa.clone();
        for _ in 0..steps {
            let g = rng_normal(&mut rng, n, 0.0, 1.0);
            adam_step(&mut sa, &mut pa, &g).unwrap();
            madam_step(&mut sm, &mut pm, &g, &vec![true; n]).unwrap();
        }
        prop_assert_eq!(pa, pm);
        prop_assert_eq!(sa, sm);
    }

    #[test]
    fn adam_steps_are_bounded(seed in any::<u64>(), n in 1usize..8, steps in 1usize..40, mag in -6i32..6) {
        let mut rng = SeededRng::new(seed);
        let c = AdamConfig::default();
        let mut state = AdamState::new(n, c);
        let mut params = vec![0.0; n];
        let r = c.beta1 * c.beta1 / c.beta2;
        for t in 1..=steps {
            let g: Vec<f64> = rng_normal(&mut rng, n, 0.0, 1.0).iter().map(|x| x * 10f64.powi(mag)).collect();
            let before = params.clone();
            adam_step(&mut state, &mut params, &g).unwrap();
            // Cauchy-Schwarz on the moment sums: |m̂| / √v̂ is at most this
            let tf = t as f64;
            let geo: f64 = (0..t).map(|k| r.powi(k as i32)).sum();
            let bound = (1.0 - c.beta1) / (1.0 - c.beta1.powf(tf))
                * ((1.0 - c.beta2.powf(tf)) / (1.0 - c.beta2)).sqrt()
                * geo.sqrt();
            for (a, b) in params.iter().zip(&before) {
                prop_assert!((a - b).abs() <= c.step_size * bound * (1.0 + 1e-12));
            }
        }
    }
}

struct NonNegative {
    ok: bool,
    iters: usize,
}

impl TrainObserver for NonNegative {
    fn on_outer(
        &mut self,
        _: &IterLog,
        _: &ModelParams,
        w: &WeightVector,
        _: Option<&InfluenceReport>,
    ) {
        self.ok &= w.values().iter().all(|&l| l >= 0.0);
        self.iters += 1;
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn weights_stay_nonnegative(seed in any::<u64>(), eta in 0.0f64..2.0, single in any::<bool>(), membership in any::<bool>()) {
        let raw = gen_circles(120, 0.1, seed);
        let data = split(&raw, SplitSizes { labeled: 6, validation: 10, unlabeled: 60 }, seed).unwrap();
        let cfg = TrainConfig {
            hidden: vec![8],
            inner_steps: 2,
            outer_iters: 6,
            labeled_batch: 6,
            unlabeled_batch: 20,
            validation_batch: 10,
            lambda_step: eta,
            single_lambda_mode: single,
            mask_rule: if membership { MaskRule::Membership } else { MaskRule::NonZero },
            seed,
            ..TrainConfig::default()
        };
        let mut obs = NonNegative { ok: true, iters: 0 };
        let result = train_observed(&cfg, &data, &mut obs).unwrap();
        prop_assert!(obs.ok);
        prop_assert_eq!(obs.iters, 6);
        prop_assert_eq!(result.log.len(), 6);
        let last = result.log.last().unwrap();
        let (mean, min, max) = result.weights.stats();
        prop_assert_eq!((last.lambda_mean, last.lambda_min, last.lambda_max), (mean, min, max));
    }
}
