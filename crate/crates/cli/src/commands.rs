//! The four subcommands.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use reweight_core::data::{gen_circles, gen_linear, gen_moons, split, SplitDataset};
use reweight_core::influence::{
    neumann_auto_scale, ConvexProbe, IhvpMode, InfluenceReport, NewtonSettings, RetrainingOracle,
};
use reweight_core::network::{predict_proba, ModelParams};
use reweight_core::objective::WeightVector;
use reweight_core::probe::{build_probe, run_probe, ProbeResult};
use reweight_core::trainer::{
    train_observed, weight_by_pseudo_label_correctness, IhvpKind, IterLog, TrainConfig,
    TrainObserver, WeightCorrectness,
};
use reweight_core::Matrix;

use crate::config::{self, DataSource, Generator, Group, Settings};
use crate::error::CliError;
use crate::fmt::sig;
use crate::io::{dataset_csv, read_dataset, write_atomic, Table, OUT_DIGITS};

pub const MANIFEST: &str = "manifest.txt";

fn version() -> String {
    format!("reweight {}", env!("CARGO_PKG_VERSION"))
}

pub fn load_data(source: &DataSource) -> Result<SplitDataset, CliError> {
    match source {
        DataSource::File(p) => read_dataset(p),
        DataSource::Generate {
            kind,
            n,
            noise,
            margin,
            seed,
            sizes,
        } => {
            let raw = match kind {
                Generator::Linear => gen_linear(*n, *margin, *seed),
                Generator::Circles => gen_circles(*n, *noise, *seed),
                Generator::Moons => gen_moons(*n, *noise, *seed),
            };
            Ok(split(&raw, *sizes, *seed)?)
        }
    }
}

fn merge(results: Vec<Result<(), CliError>>) -> Result<(), CliError> {
    let mut bad = Vec::new();
    for r in results {
        match r {
            Ok(()) => {}
            Err(CliError::Config(v)) => bad.extend(v),
            Err(e) => return Err(e),
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(bad))
    }
}

/// Keys outside the probe group that the oracle reads.
pub const ORACLE_KEYS: &[&str] = &[
    "hidden",
    "head",
    "lambda_init",
    "ihvp",
    "neumann_terms",
    "neumann_scale",
];

fn manifest(
    command: &str,
    settings: &Settings,
    groups: &[Group],
    extra: &[&str],
    source: &DataSource,
) -> String {
    settings.render(
        groups,
        extra,
        &[
            version(),
            format!("dataset: {}", source.describe()),
            format!("re-run with: reweight {command} --config {MANIFEST}"),
        ],
    )
}

pub fn gen_data(settings: &Settings) -> Result<PathBuf, CliError> {
    if !settings.get("data").is_empty() {
        return Err(CliError::Usage(
            "gen-data generates data; `data` must be empty".into(),
        ));
    }
    let source = config::data_source(settings)?;
    let data = load_data(&source)?;
    let out = settings.out();
    let path = out.join("dataset.csv");
    write_atomic(
        &out.join(MANIFEST),
        manifest("gen-data", settings, &[Group::Data], &[], &source).as_bytes(),
    )?;
    write_atomic(&path, &dataset_csv(&data))?;
    Ok(path)
}

/// Final metrics of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    pub last: IterLog,
    pub split: WeightCorrectness,
    pub seconds: f64,
}

struct Recorder {
    stride: usize,
    outer_iters: usize,
    boundary_at: BTreeSet<usize>,
    grid: Matrix,
    weights: Table,
    boundary: Table,
    log: Vec<IterLog>,
    error: Option<CliError>,
}

impl Recorder {
    fn record_weights(&mut self, iter: usize, w: &WeightVector) {
        for (id, v) in w.values().iter().enumerate() {
            self.weights
                .row([iter.to_string(), id.to_string(), sig(*v, OUT_DIGITS)]);
        }
    }

    fn record_boundary(&mut self, iter: usize, params: &ModelParams) {
        if !self.boundary_at.contains(&iter) || self.error.is_some() {
            return;
        }
        let p = match predict_proba(params, &self.grid) {
            Ok(p) => p,
            Err(e) => {
                self.error = Some(e.into());
                return;
            }
        };
        for (x, probs) in self.grid.row_iter().zip(p.row_iter()) {
            let (class, prob) =
                probs
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                        if v > best.1 {
                            (k, v)
                        } else {
                            best
                        }
                    });
            self.boundary.row([
                iter.to_string(),
                sig(x[0], OUT_DIGITS),
                sig(x[1], OUT_DIGITS),
                class.to_string(),
                sig(prob, OUT_DIGITS),
            ]);
        }
    }
}

impl TrainObserver for Recorder {
    fn on_start(&mut self, params: &ModelParams, weights: &WeightVector) {
        self.record_weights(0, weights);
        self.record_boundary(0, params);
    }

    fn on_outer(
        &mut self,
        log: &IterLog,
        params: &ModelParams,
        weights: &WeightVector,
        _: Option<&InfluenceReport>,
    ) {
        self.log.push(*log);
        if log.iter.is_multiple_of(self.stride) || log.iter == self.outer_iters {
            self.record_weights(log.iter, weights);
        }
        self.record_boundary(log.iter, params);
    }
}

/// `n × n` points over the bounding box of the data, padded by 20% of its
/// extent on every side.
pub fn boundary_grid(data: &SplitDataset, n: usize) -> Matrix {
    let [lo, hi] = data.bounding_box();
    let mut axes = [Vec::new(), Vec::new()];
    for k in 0..2 {
        let pad = 0.2 * (hi[k] - lo[k]);
        let (a, b) = (lo[k] - pad, hi[k] + pad);
        axes[k] = (0..n)
            .map(|i| {
                if n == 1 {
                    0.5 * (a + b)
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
    }
    let mut g = Vec::with_capacity(2 * n * n);
    for &x0 in &axes[0] {
        for &x1 in &axes[1] {
            g.extend([x0, x1]);
        }
    }
    Matrix::from_vec(n * n, 2, g).expect("sized")
}

fn metrics_csv(log: &[IterLog]) -> Vec<u8> {
    let mut t = Table::new(&[
        "iter",
        "val_loss",
        "val_err",
        "test_err",
        "lambda_mean",
        "lambda_min",
        "lambda_max",
    ]);
    for l in log {
        t.row([
            l.iter.to_string(),
            sig(l.val_loss, OUT_DIGITS),
            sig(l.val_err, OUT_DIGITS),
            sig(l.test_err, OUT_DIGITS),
            sig(l.lambda_mean, OUT_DIGITS),
            sig(l.lambda_min, OUT_DIGITS),
            sig(l.lambda_max, OUT_DIGITS),
        ]);
    }
    t.into_bytes()
}

struct RunPlan {
    source: DataSource,
    config: TrainConfig,
    stride: usize,
    grid: usize,
    boundary_at: Vec<usize>,
}

fn plan(settings: &Settings) -> Result<RunPlan, CliError> {
    let source = config::data_source(settings);
    let config = config::train_config(settings);
    let stride: Result<usize, _> = settings.get("weights_stride").parse();
    let grid: Result<usize, _> = settings.get("grid").parse();
    let outer = config.as_ref().map_or(0, |c| c.outer_iters);
    let boundary = config::boundary_iters(settings, outer);
    let mut bad = Vec::new();
    if !matches!(stride, Ok(s) if s >= 1) {
        bad.push(format!(
            "weights_stride: must be an integer >= 1, got `{}`",
            settings.get("weights_stride")
        ));
    }
    if !matches!(grid, Ok(g) if g >= 1) {
        bad.push(format!(
            "grid: must be an integer >= 1, got `{}`",
            settings.get("grid")
        ));
    }
    merge(vec![
        source.as_ref().map(|_| ()).map_err(clone_config),
        config.as_ref().map(|_| ()).map_err(clone_config),
        boundary.as_ref().map(|_| ()).map_err(clone_config),
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(bad))
        },
    ])?;
    Ok(RunPlan {
        source: source?,
        config: config?,
        stride: stride.expect("checked"),
        grid: grid.expect("checked"),
        boundary_at: boundary?,
    })
}

fn clone_config(e: &CliError) -> CliError {
    match e {
        CliError::Config(v) => CliError::Config(v.clone()),
        other => CliError::Usage(other.to_string()),
    }
}

/// One training run into `settings.out()`.
pub fn run_one(settings: &Settings) -> Result<RunSummary, CliError> {
    let plan = plan(settings)?;
    let data = load_data(&plan.source)?;
    plan.config.validate(&data)?;
    let out = settings.out();
    write_atomic(
        &out.join(MANIFEST),
        manifest(
            "run",
            settings,
            &[Group::Data, Group::Train, Group::Output],
            &[],
            &plan.source,
        )
        .as_bytes(),
    )?;

    let mut rec = Recorder {
        stride: plan.stride,
        outer_iters: plan.config.outer_iters,
        boundary_at: plan.boundary_at.into_iter().collect(),
        grid: boundary_grid(&data, plan.grid),
        weights: Table::new(&["iter", "example_id", "lambda"]),
        boundary: Table::new(&["iter", "x0", "x1", "pred_class", "pred_prob"]),
        log: Vec::new(),
        error: None,
    };
    let start = Instant::now();
    let result = train_observed(&plan.config, &data, &mut rec);
    let seconds = start.elapsed().as_secs_f64();
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            let mut err = CliError::from(e);
            if let CliError::Numerical { message, snapshot } = &mut err {
                let path = out.join("snapshot.txt");
                let mut text = format!("{}\nerror: {message}\n\nmetrics so far:\n", version());
                text.push_str(&String::from_utf8_lossy(&metrics_csv(&rec.log)));
                write_atomic(&path, text.as_bytes())?;
                *snapshot = Some(path);
            }
            return Err(err);
        }
    };
    if let Some(e) = rec.error.take() {
        return Err(e);
    }
    write_atomic(&out.join("metrics.csv"), &metrics_csv(&result.log))?;
    write_atomic(&out.join("weights.csv"), &rec.weights.into_bytes())?;
    write_atomic(&out.join("boundary.csv"), &rec.boundary.into_bytes())?;
    Ok(RunSummary {
        out,
        last: *result
            .log
            .last()
            .ok_or_else(|| CliError::Usage("outer_iters must be >= 1".into()))?,
        split: weight_by_pseudo_label_correctness(&result.params, &result.weights, &data)?,
        seconds,
    })
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Result<Vec<u64>, _> = v.split(',').map(|s| s.trim().parse()).collect();
    match seeds {
        Ok(s) if !s.is_empty() => Ok(s),
        _ => Err(CliError::Config(vec![format!(
            "seeds: expected a comma separated list of integers, got `{v}`"
        )])),
    }
}

/// Runs `jobs` in up to `workers` threads; results keep the input order.
pub fn run_parallel(jobs: Vec<Settings>, workers: usize) -> Vec<Result<RunSummary, CliError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunSummary, CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run_one(job);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// `run` with a seed list: one sibling directory `seed-<s>` per seed.
pub fn run_seeds(
    settings: &Settings,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<RunSummary>, CliError> {
    let root = settings.out();
    let jobs = seeds
        .iter()
        .map(|s| {
            let mut j = settings.clone();
            j.set("seed", s.to_string());
            j.set("out", root.join(format!("seed-{s}")).to_string_lossy());
            j
        })
        .collect();
    run_parallel(jobs, workers).into_iter().collect()
}

/// Named setting overrides compared by `sweep`.
pub const VARIANTS: &[(&str, &[(&str, &str)])] = &[
    ("per-example", &[("mode", "per-example")]),
    ("fixed", &[("mode", "fixed")]),
    ("supervised", &[("mode", "supervised")]),
    ("single", &[("mode", "single")]),
    ("exact", &[("mode", "per-example"), ("ihvp", "exact")]),
    ("identity", &[("mode", "per-example"), ("ihvp", "identity")]),
    ("neumann", &[("mode", "per-example"), ("ihvp", "neumann")]),
];

pub fn parse_variants(v: &str) -> Result<Vec<&'static str>, CliError> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for name in v.split(',').map(str::trim) {
        match VARIANTS.iter().find(|(n, _)| *n == name) {
            Some((n, _)) => out.push(*n),
            None => bad.push(format!(
                "variants: unknown `{name}` (known: {})",
                VARIANTS
                    .iter()
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            )),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Config(bad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: &'static str,
    pub seed: u64,
    pub summary: RunSummary,
}

/// Every variant on every seed, into `<out>/<variant>/seed-<s>`, plus
/// `<out>/summary.csv`.
pub fn sweep(
    settings: &Settings,
    seeds: &[u64],
    variants: &[&'static str],
    workers: usize,
) -> Result<Vec<SweepRow>, CliError> {
    let root = settings.out();
    let mut keys = Vec::new();
    let mut jobs = Vec::new();
    for &v in variants {
        let (_, overrides) = VARIANTS
            .iter()
            .find(|(n, _)| *n == v)
            .expect("parsed variant");
        for &s in seeds {
            let mut j = settings.clone();
            for (k, val) in overrides.iter() {
                j.set(k, *val);
            }
            j.set("seed", s.to_string());
            j.set(
                "out",
                root.join(v).join(format!("seed-{s}")).to_string_lossy(),
            );
            keys.push((v, s));
            jobs.push(j);
        }
    }
    plan(&jobs[0])?;
    let mut rows = Vec::new();
    for ((variant, seed), r) in keys.into_iter().zip(run_parallel(jobs, workers)) {
        rows.push(SweepRow {
            variant,
            seed,
            summary: r?,
        });
    }
    write_atomic(&root.join("summary.csv"), &summary_csv(&rows))?;
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| sig(v, OUT_DIGITS))
}

pub fn summary_csv(rows: &[SweepRow]) -> Vec<u8> {
    let mut t = Table::new(&[
        "variant",
        "seed",
        "val_loss",
        "val_err",
        "test_err",
        "lambda_mean",
        "lambda_incorrect",
        "lambda_correct",
    ]);
    for r in rows {
        let l = &r.summary.last;
        t.row([
            r.variant.to_string(),
            r.seed.to_string(),
            sig(l.val_loss, OUT_DIGITS),
            sig(l.val_err, OUT_DIGITS),
            sig(l.test_err, OUT_DIGITS),
            sig(l.lambda_mean, OUT_DIGITS),
            opt(r.summary.split.mean_incorrect),
            opt(r.summary.split.mean_correct),
        ]);
    }
    t.into_bytes()
}

pub struct OracleOutput {
    pub path: PathBuf,
    pub result: ProbeResult,
}

pub fn oracle(settings: &Settings) -> Result<OracleOutput, CliError> {
    let source = config::data_source(settings);
    let probe_cfg = config::probe_config(settings);
    merge(vec![
        source.as_ref().map(|_| ()).map_err(clone_config),
        probe_cfg.as_ref().map(|_| ()).map_err(clone_config),
    ])?;
    let (source, (cfg, kind)) = (source?, probe_cfg?);
    let data = load_data(&source)?;
    let out = settings.out();
    write_atomic(
        &out.join(MANIFEST),
        manifest(
            "oracle",
            settings,
            &[Group::Data, Group::Probe],
            ORACLE_KEYS,
            &source,
        )
        .as_bytes(),
    )?;
    let probe = build_probe(&data, &cfg)?;
    let mode = match kind {
        IhvpKind::Exact => IhvpMode::Exact,
        IhvpKind::Identity => IhvpMode::Identity,
        IhvpKind::Neumann {
            terms,
            scale: Some(scale),
        } => IhvpMode::Neumann { terms, scale },
        IhvpKind::Neumann { terms, scale: None } => {
            let oracle =
                RetrainingOracle::new(&probe, &probe.initial_theta(), NewtonSettings::default())?;
            let (_, _, h) = probe.objective(oracle.theta_star(), None)?;
            IhvpMode::Neumann {
                terms,
                scale: neumann_auto_scale(&h),
            }
        }
    };
    let result = run_probe(&probe, mode, cfg.epsilon)?;
    let mut t = Table::new(&["example_id", "influence_score", "oracle_score"]);
    for ((id, a), b) in result.ids.iter().zip(&result.influence).zip(&result.oracle) {
        t.row([id.to_string(), sig(*a, OUT_DIGITS), sig(*b, OUT_DIGITS)]);
    }
    let path = out.join("oracle.csv");
    write_atomic(&path, &t.into_bytes())?;
    Ok(OracleOutput { path, result })
}
