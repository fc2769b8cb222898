use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reweight(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reweight"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = reweight(dir, args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Small, fast run settings.
const QUICK: &[&str] = &[
    "--n",
    "140",
    "--unlabeled",
    "60",
    "--hidden",
    "16",
    "--outer-iters",
    "4",
    "--inner-steps",
    "3",
    "--unlabeled-batch",
    "20",
    "--grid",
    "10",
];

fn quick<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run"];
    v.extend_from_slice(QUICK);
    v.extend_from_slice(extra);
    v
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_sized() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["gen-data", "--kind", "moons", "--seed", "7", "--out", "a"],
    );
    ok(
        d.path(),
        &["gen-data", "--kind", "moons", "--seed", "7", "--out", "b"],
    );
    assert_eq!(
        fs::read(d.path().join("a/dataset.csv")).unwrap(),
        fs::read(d.path().join("b/dataset.csv")).unwrap()
    );

    ok(
        d.path(),
        &["gen-data", "--kind", "circles", "--n", "1240", "--out", "c"],
    );
    let text = read(d.path().join("c/dataset.csv"));
    assert_eq!(text.lines().count(), 1241);
    assert_eq!(text.lines().next().unwrap(), "split,id,x0,x1,label");
    let count = |s: &str| {
        text.lines()
            .filter(|l| l.starts_with(&format!("{s},")))
            .count()
    };
    assert_eq!(
        (
            count("labeled"),
            count("validation"),
            count("unlabeled"),
            count("test")
        ),
        (10, 30, 1000, 200)
    );

    ok(
        d.path(),
        &[
            "gen-data",
            "--kind",
            "linear",
            "--n",
            "100",
            "--labeled",
            "4",
            "--val",
            "6",
            "--unlabeled",
            "50",
            "--out",
            "l",
        ],
    );
    let text = read(d.path().join("l/dataset.csv"));
    assert_eq!(
        text.lines().filter(|l| l.starts_with("labeled,")).count(),
        4
    );
    assert_eq!(
        text.lines().filter(|l| l.starts_with("unlabeled,")).count(),
        50
    );
}

#[test]
fn run_writes_every_artifact() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &quick(&["--out", "r"]));
    let r = d.path().join("r");
    let metrics = read(r.join("metrics.csv"));
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(
        lines[0],
        "iter,val_loss,val_err,test_err,lambda_mean,lambda_min,lambda_max"
    );
    assert_eq!(lines.len(), 5);
    let test_err: f64 = lines[4].split(',').nth(3).unwrap().parse().unwrap();
    assert!(test_err.is_finite() && (0.0..=1.0).contains(&test_err));

    // iterations 0..=4 at stride 1, 60 weights each
    assert_eq!(read(r.join("weights.csv")).lines().count(), 1 + 5 * 60);
    // iterations 0, 2, 4 on a 10x10 grid
    let boundary = read(r.join("boundary.csv"));
    assert_eq!(boundary.lines().count(), 1 + 3 * 100);
    let iters: std::collections::BTreeSet<&str> = boundary
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(iters.into_iter().collect::<Vec<_>>(), ["0", "2", "4"]);
    assert!(read(r.join("manifest.txt")).contains("eta = 0.01"));
}

#[test]
fn default_moons_run_completes() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["run", "--kind", "moons", "--out", "m"]);
    let metrics = read(d.path().join("m/metrics.csv"));
    assert_eq!(metrics.lines().count(), 31);
    let last = metrics.lines().last().unwrap();
    let test_err: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!(test_err.is_finite());
}

#[test]
fn zero_eta_equals_fixed_mode() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &quick(&["--eta", "0", "--out", "a"]));
    ok(d.path(), &quick(&["--mode", "fixed", "--out", "b"]));
    assert_eq!(
        read(d.path().join("a/metrics.csv")),
        read(d.path().join("b/metrics.csv"))
    );
}

#[test]
fn manifest_reproduces_metrics() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &quick(&[
            "--seed", "3", "--eta", "0.2", "--ihvp", "neumann", "--out", "a",
        ]),
    );
    ok(
        d.path(),
        &["run", "--config", "a/manifest.txt", "--out", "b"],
    );
    assert_eq!(
        fs::read(d.path().join("a/metrics.csv")).unwrap(),
        fs::read(d.path().join("b/metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(d.path().join("a/weights.csv")).unwrap(),
        fs::read(d.path().join("b/weights.csv")).unwrap()
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("c.txt"),
        "# quick\nouter_iters = 2\neta = 0.5\n",
    )
    .unwrap();
    ok(
        d.path(),
        &quick(&["--config", "c.txt", "--outer-iters", "3", "--out", "r"]),
    );
    let manifest = read(d.path().join("r/manifest.txt"));
    assert!(manifest.contains("eta = 0.5"));
    assert!(manifest.contains("outer_iters = 3"));
    assert_eq!(read(d.path().join("r/metrics.csv")).lines().count(), 4);
}

#[test]
fn loaded_dataset_matches_generated() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "gen-data",
            "--n",
            "140",
            "--unlabeled",
            "60",
            "--seed",
            "5",
            "--out",
            "g",
        ],
    );
    ok(d.path(), &quick(&["--seed", "5", "--out", "a"]));
    ok(
        d.path(),
        &quick(&["--seed", "5", "--data", "g/dataset.csv", "--out", "b"]),
    );
    assert_eq!(
        read(d.path().join("a/metrics.csv")),
        read(d.path().join("b/metrics.csv"))
    );
}

#[test]
fn seeds_fan_out_to_sibling_directories() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &quick(&["--seeds", "1,2,3", "--jobs", "2", "--out", "s"]),
    );
    let mut metrics = Vec::new();
    for s in 1..=3 {
        let dir = d.path().join(format!("s/seed-{s}"));
        assert!(read(dir.join("manifest.txt")).contains(&format!("seed = {s}\n")));
        metrics.push(read(dir.join("metrics.csv")));
    }
    assert_ne!(metrics[0], metrics[1]);
    assert_ne!(metrics[1], metrics[2]);
}

#[test]
fn sweep_writes_a_summary_row_per_run() {
    let d = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep"];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(&[
        "--seeds",
        "0,1",
        "--variants",
        "per-example,supervised",
        "--quiet",
        "--out",
        "w",
    ]);
    ok(d.path(), &args);
    let summary = read(d.path().join("w/summary.csv"));
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with(
        "variant,seed,val_loss,val_err,test_err,lambda_mean,lambda_incorrect,lambda_correct\n"
    ));
    assert!(d.path().join("w/supervised/seed-1/metrics.csv").exists());
}

#[test]
fn oracle_rows_and_independence() {
    let d = tempfile::tempdir().unwrap();
    let base = [
        "oracle",
        "--n",
        "140",
        "--unlabeled",
        "60",
        "--hidden",
        "20",
    ];
    let one = [&base[..], &["--examples", "1", "--out", "one"]].concat();
    let out = ok(d.path(), &one);
    assert!(out.starts_with("pearson "));
    let text = read(d.path().join("one/oracle.csv"));
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("example_id,influence_score,oracle_score\n"));

    let exact = [&base[..], &["--examples", "8", "--out", "e"]].concat();
    let ident = [
        &base[..],
        &["--examples", "8", "--ihvp", "identity", "--out", "i"],
    ]
    .concat();
    ok(d.path(), &exact);
    ok(d.path(), &ident);
    let cols = |p: &str| -> Vec<(String, String)> {
        read(d.path().join(p))
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[1].to_string(), f[2].to_string())
            })
            .collect()
    };
    let (e, i) = (cols("e/oracle.csv"), cols("i/oracle.csv"));
    for (a, b) in e.iter().zip(&i) {
        assert_eq!(a.1, b.1);
    }
    assert!(e.iter().zip(&i).any(|(a, b)| a.0 != b.0));
}

#[test]
fn config_errors_list_every_key() {
    let d = tempfile::tempdir().unwrap();
    let o = reweight(
        d.path(),
        &[
            "run",
            "--eta",
            "x",
            "--head",
            "tri",
            "--damping",
            "0",
            "--out",
            "r",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("eta") && err.contains("head"), "{err}");
    assert!(!d.path().join("r").exists());

    let o = reweight(
        d.path(),
        &["run", "--damping", "0", "--inner-steps", "0", "--out", "r"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("damping") && err.contains("inner_steps"),
        "{err}"
    );

    assert_eq!(
        reweight(d.path(), &["gen-data", "--kind", "spirals"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        reweight(d.path(), &["run", "--no-such-flag"]).status.code(),
        Some(2)
    );
    fs::write(d.path().join("bad.txt"), "colour = red\n").unwrap();
    assert_eq!(
        reweight(d.path(), &["run", "--config", "bad.txt"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn io_errors_exit_four() {
    let d = tempfile::tempdir().unwrap();
    let o = reweight(d.path(), &["run", "--data", "missing.csv"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(
        reweight(d.path(), &["run", "--config", "missing.txt"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn numerical_failure_exits_three_with_snapshot() {
    let d = tempfile::tempdir().unwrap();
    let o = reweight(
        d.path(),
        &quick(&[
            "--theta-optimizer",
            "sgd",
            "--momentum",
            "0",
            "--theta-step",
            "1e200",
            "--out",
            "r",
        ]),
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("snapshot.txt"));
    let r = d.path().join("r");
    assert!(r.join("snapshot.txt").exists());
    assert!(!r.join("metrics.csv").exists());
    assert!(fs::read_dir(&r).unwrap().all(|e| !e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .contains(".tmp")));
}
