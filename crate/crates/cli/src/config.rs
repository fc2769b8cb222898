//! Flat `key = value` settings shared by config files, flags and manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use reweight_core::data::SplitSizes;
use reweight_core::network::Head;
use reweight_core::probe::ProbeConfig;
use reweight_core::trainer::{IhvpKind, MaskRule, ThetaOptimizer, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Data,
    Train,
    Output,
    Probe,
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub group: Group,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, group: Group, help: &'static str) -> Key {
    Key {
        name,
        default,
        group,
        help,
    }
}

/// Every recognized key. `seed` and `out` are handled separately.
pub const KEYS: &[Key] = &[
    key(
        "kind",
        "moons",
        Group::Data,
        "generator: linear, circles or moons",
    ),
    key("n", "1240", Group::Data, "points to generate"),
    key(
        "noise",
        "0.1",
        Group::Data,
        "noise std-dev (circles, moons)",
    ),
    key("margin", "1", Group::Data, "class margin (linear)"),
    key(
        "data_seed",
        "",
        Group::Data,
        "generator and split seed; empty follows seed",
    ),
    key("labeled", "10", Group::Data, "labeled split size"),
    key("val", "30", Group::Data, "validation split size"),
    key("unlabeled", "1000", Group::Data, "unlabeled split size"),
    key(
        "data",
        "",
        Group::Data,
        "dataset CSV to load instead of generating",
    ),
    key(
        "hidden",
        "100",
        Group::Train,
        "hidden widths, comma separated",
    ),
    key(
        "head",
        "binary",
        Group::Train,
        "output head: binary or softmax",
    ),
    key(
        "mode",
        "per-example",
        Group::Train,
        "per-example, single, fixed or supervised",
    ),
    key(
        "inner_steps",
        "10",
        Group::Train,
        "parameter steps per outer iteration",
    ),
    key("theta_step", "0.01", Group::Train, "parameter step size"),
    key("theta_optimizer", "adam", Group::Train, "adam or sgd"),
    key("momentum", "0.9", Group::Train, "sgd momentum"),
    key("eta", "0.01", Group::Train, "weight step size"),
    key(
        "warmup",
        "0",
        Group::Train,
        "parameter-only steps before the first outer iteration",
    ),
    key("outer_iters", "30", Group::Train, "outer iterations"),
    key("labeled_batch", "10", Group::Train, "labeled batch size"),
    key(
        "unlabeled_batch",
        "100",
        Group::Train,
        "unlabeled batch size",
    ),
    key(
        "validation_batch",
        "30",
        Group::Train,
        "validation batch size when sampling",
    ),
    key(
        "full_validation_max",
        "1024",
        Group::Train,
        "use all of V when it is at most this large",
    ),
    key("lambda_init", "1", Group::Train, "initial unlabeled weight"),
    key("damping", "0.001", Group::Train, "Hessian damping"),
    key("ihvp", "exact", Group::Train, "exact, identity or neumann"),
    key("neumann_terms", "10", Group::Train, "Neumann series terms"),
    key(
        "neumann_scale",
        "auto",
        Group::Train,
        "Neumann scale, or auto",
    ),
    key(
        "mask",
        "nonzero",
        Group::Train,
        "weight update mask: nonzero or membership",
    ),
    key(
        "threshold",
        "0",
        Group::Train,
        "pseudo-label confidence threshold",
    ),
    key(
        "weights_stride",
        "1",
        Group::Output,
        "log weights every this many iterations",
    ),
    key(
        "boundary_iters",
        "0,mid,final",
        Group::Output,
        "iterations with a decision-boundary grid",
    ),
    key(
        "grid",
        "100",
        Group::Output,
        "boundary grid resolution per axis",
    ),
    key("examples", "50", Group::Probe, "probed unlabeled examples"),
    key("epsilon", "0.01", Group::Probe, "retraining perturbation"),
    key(
        "l2",
        "0.01",
        Group::Probe,
        "probe L2 strength, also its damping",
    ),
];

pub fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Resolved settings. Keys absent from the map take their defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut s = Self::default();
        let mut bad = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim();
                    if k == "seed" || k == "out" || lookup(k).is_some() {
                        s.values.insert(k.to_string(), v.trim().to_string());
                    } else {
                        bad.push(format!("line {}: unknown key `{k}`", no + 1));
                    }
                }
                None => bad.push(format!("line {}: expected `key = value`", no + 1)),
            }
        }
        if bad.is_empty() {
            Ok(s)
        } else {
            Err(CliError::Config(bad))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(v) => CliError::Config(
                v.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        match key {
            "seed" => "0",
            "out" => "out",
            _ => lookup(key).map_or("", |k| k.default),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        parse_one(self.get("seed"), "seed")
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn data_seed(&self) -> Result<u64, CliError> {
        match self.get("data_seed") {
            "" => self.seed(),
            v => parse_one(v, "data_seed"),
        }
    }

    /// Every key of `groups` and `extra` with its resolved value, plus `seed` and `out`,
    /// in a form [`Settings::parse`] reads back. `data_seed` is written out
    /// explicitly.
    pub fn render(&self, groups: &[Group], extra: &[&str], header: &[String]) -> String {
        let mut s = String::new();
        for h in header {
            let _ = writeln!(s, "# {h}");
        }
        let _ = writeln!(s, "seed = {}", self.get("seed"));
        let _ = writeln!(s, "out = {}", self.get("out"));
        for k in KEYS
            .iter()
            .filter(|k| groups.contains(&k.group) || extra.contains(&k.name))
        {
            let v = match k.name {
                "data_seed" => self
                    .data_seed()
                    .map_or_else(|_| self.get("data_seed").to_string(), |v| v.to_string()),
                name => self.get(name).to_string(),
            };
            let _ = writeln!(s, "{} = {v}", k.name);
        }
        s
    }
}

fn parse_one<T: std::str::FromStr>(v: &str, key: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(vec![format!("{key}: cannot parse `{v}`")]))
}

/// Collects parse failures so every bad key is reported at once.
struct Reader<'a> {
    s: &'a Settings,
    bad: Vec<String>,
}

impl Reader<'_> {
    fn num<T: std::str::FromStr + Default>(&mut self, key: &str) -> T {
        let v = self.s.get(key);
        v.parse().unwrap_or_else(|_| {
            self.bad.push(format!("{key}: cannot parse `{v}`"));
            T::default()
        })
    }

    fn list(&mut self, key: &str) -> Vec<usize> {
        let v = self.s.get(key);
        if v.trim().is_empty() {
            return Vec::new();
        }
        v.split(',')
            .map(|p| {
                p.trim().parse().unwrap_or_else(|_| {
                    self.bad.push(format!("{key}: cannot parse `{v}`"));
                    0
                })
            })
            .collect()
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        let v = self.s.get(key);
        let hit = options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t);
        if hit.is_none() {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            self.bad
                .push(format!("{key}: `{v}` is not one of {}", names.join(", ")));
        }
        hit
    }

    fn finish<T>(self, value: T) -> Result<T, CliError> {
        if self.bad.is_empty() {
            Ok(value)
        } else {
            Err(CliError::Config(self.bad))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Linear,
    Circles,
    Moons,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Generate {
        kind: Generator,
        n: usize,
        noise: f64,
        margin: f64,
        seed: u64,
        sizes: SplitSizes,
    },
}

impl DataSource {
    pub fn describe(&self) -> String {
        match self {
            DataSource::File(p) => format!("file {}", p.display()),
            DataSource::Generate {
                kind,
                n,
                noise,
                margin,
                seed,
                sizes,
            } => {
                let param = match kind {
                    Generator::Linear => format!("margin={margin}"),
                    _ => format!("noise={noise}"),
                };
                format!(
                    "{kind:?}(n={n}, {param}, seed={seed}) split {}/{}/{}",
                    sizes.labeled, sizes.validation, sizes.unlabeled
                )
                .to_lowercase()
            }
        }
    }
}

pub fn data_source(s: &Settings) -> Result<DataSource, CliError> {
    if !s.get("data").is_empty() {
        return Ok(DataSource::File(PathBuf::from(s.get("data"))));
    }
    let mut r = Reader { s, bad: Vec::new() };
    let kind = r.choice(
        "kind",
        &[
            ("linear", Generator::Linear),
            ("circles", Generator::Circles),
            ("moons", Generator::Moons),
        ],
    );
    let n: usize = r.num("n");
    let noise: f64 = r.num("noise");
    let margin: f64 = r.num("margin");
    let sizes = SplitSizes {
        labeled: r.num("labeled"),
        validation: r.num("val"),
        unlabeled: r.num("unlabeled"),
    };
    let seed = match s.data_seed() {
        Ok(v) => v,
        Err(CliError::Config(v)) => {
            r.bad.extend(v);
            0
        }
        Err(e) => return Err(e),
    };
    if n < 4 {
        r.bad.push(format!("n: need at least 4 points, got {n}"));
    }
    if !(noise >= 0.0) {
        r.bad.push(format!("noise: must be >= 0, got {noise}"));
    }
    if !(margin >= 0.0) {
        r.bad.push(format!("margin: must be >= 0, got {margin}"));
    }
    if sizes.total() > n {
        r.bad.push(format!(
            "n: {n} points cannot fill a {} point split",
            sizes.total()
        ));
    }
    let kind = kind.unwrap_or(Generator::Moons);
    r.finish(DataSource::Generate {
        kind,
        n,
        noise,
        margin,
        seed,
        sizes,
    })
}

/// How the unlabeled weights are treated in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    PerExample,
    Single,
    Fixed,
    Supervised,
}

pub fn train_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let mut r = Reader { s, bad: Vec::new() };
    let mode = r.choice(
        "mode",
        &[
            ("per-example", WeightMode::PerExample),
            ("single", WeightMode::Single),
            ("fixed", WeightMode::Fixed),
            ("supervised", WeightMode::Supervised),
        ],
    );
    let binary = r.choice("head", &[("binary", true), ("softmax", false)]);
    let opt = r.choice("theta_optimizer", &[("adam", false), ("sgd", true)]);
    let ihvp = ihvp_kind(&mut r);
    let mask = r.choice(
        "mask",
        &[
            ("nonzero", MaskRule::NonZero),
            ("membership", MaskRule::Membership),
        ],
    );
    let mut c = TrainConfig {
        hidden: r.list("hidden"),
        binary_reparam: binary.unwrap_or(true),
        inner_steps: r.num("inner_steps"),
        theta_step: r.num("theta_step"),
        theta_optimizer: if opt == Some(true) {
            ThetaOptimizer::Sgd {
                momentum: r.num("momentum"),
            }
        } else {
            ThetaOptimizer::Adam
        },
        lambda_step: r.num("eta"),
        warmup_iters: r.num("warmup"),
        outer_iters: r.num("outer_iters"),
        labeled_batch: r.num("labeled_batch"),
        unlabeled_batch: r.num("unlabeled_batch"),
        validation_batch: r.num("validation_batch"),
        full_validation_max: r.num("full_validation_max"),
        lambda_init: r.num("lambda_init"),
        damping: r.num("damping"),
        ihvp,
        mask_rule: mask.unwrap_or(MaskRule::NonZero),
        pseudo_label_threshold: r.num("threshold"),
        single_lambda_mode: false,
        seed: 0,
    };
    match s.seed() {
        Ok(v) => c.seed = v,
        Err(CliError::Config(v)) => r.bad.extend(v),
        Err(e) => return Err(e),
    }
    match mode {
        Some(WeightMode::Single) => c.single_lambda_mode = true,
        Some(WeightMode::Fixed) => c.lambda_step = 0.0,
        Some(WeightMode::Supervised) => {
            c.lambda_step = 0.0;
            c.lambda_init = 0.0;
        }
        _ => {}
    }
    r.finish(c)
}

fn ihvp_kind(r: &mut Reader<'_>) -> IhvpKind {
    match r.choice("ihvp", &[("exact", 0), ("identity", 1), ("neumann", 2)]) {
        Some(1) => IhvpKind::Identity,
        Some(2) => IhvpKind::Neumann {
            terms: r.num("neumann_terms"),
            scale: match r.s.get("neumann_scale") {
                "auto" => None,
                _ => Some(r.num("neumann_scale")),
            },
        },
        _ => IhvpKind::Exact,
    }
}

/// The probe setup and the inverse-Hessian approximation to score it with.
/// Automatic Neumann scales are resolved by the caller against the probe
/// Hessian.
pub fn probe_config(s: &Settings) -> Result<(ProbeConfig, IhvpKind), CliError> {
    let mut r = Reader { s, bad: Vec::new() };
    let binary = r.choice("head", &[("binary", true), ("softmax", false)]);
    let kind = ihvp_kind(&mut r);
    let c = ProbeConfig {
        hidden: r.list("hidden"),
        head: if binary == Some(false) {
            Head::Softmax
        } else {
            Head::BinaryReparam
        },
        examples: r.num("examples"),
        epsilon: r.num("epsilon"),
        l2: r.num("l2"),
        lambda_init: r.num("lambda_init"),
        seed: match s.seed() {
            Ok(v) => v,
            Err(CliError::Config(v)) => {
                r.bad.extend(v);
                0
            }
            Err(e) => return Err(e),
        },
    };
    if !(1e-4..=1e-1).contains(&c.epsilon) {
        r.bad.push(format!(
            "epsilon: must be in [1e-4, 1e-1], got {}",
            c.epsilon
        ));
    }
    if !(c.l2 > 0.0) {
        r.bad.push(format!("l2: must be > 0, got {}", c.l2));
    }
    r.finish((c, kind))
}

/// Iterations at which the boundary grid is written.
pub fn boundary_iters(s: &Settings, outer_iters: usize) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    let v = s.get("boundary_iters");
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let it = match part {
            "mid" => Some(outer_iters / 2),
            "final" => Some(outer_iters),
            p => p.parse().ok(),
        };
        match it {
            Some(i) if i <= outer_iters => out.push(i),
            _ => bad.push(format!(
                "boundary_iters: `{part}` is not an iteration in 0..={outer_iters}"
            )),
        }
    }
    out.sort_unstable();
    out.dedup();
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Config(bad))
    }
}
