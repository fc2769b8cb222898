//! Command-line driver for `reweight-core`: dataset generation, training
//! runs, seed sweeps and the influence-versus-retraining check.
//!
//! Every setting is a `key = value` pair. Defaults come from the key table in
//! [`config`], a `--config` file overrides them and flags override both.
//! Each output directory gets a `manifest.txt` holding the resolved settings;
//! passing it back with `--config` repeats the run exactly.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod fmt;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::config::{Group, Settings, KEYS};
use crate::error::CliError;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn with_keys(mut cmd: Command, groups: &[Group], extra: &[&'static str]) -> Command {
    for k in KEYS
        .iter()
        .filter(|k| groups.contains(&k.group) || extra.contains(&k.name))
    {
        let help = if k.default.is_empty() {
            k.help.to_string()
        } else {
            format!("{} [default: {}]", k.help, k.default)
        };
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(flag_name(k.name))
                .value_name("VALUE")
                .help(help),
        );
    }
    cmd
}

fn common(cmd: Command, seeds: bool) -> Command {
    let cmd = cmd
        .args_override_self(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("key = value settings file"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .help("output directory [default: out]"),
        )
        .arg(
            Arg::new("seed")
                .long("seed")
                .value_name("N")
                .help("random seed [default: 0]"),
        );
    if seeds {
        cmd.arg(
            Arg::new("seeds")
                .long("seeds")
                .value_name("LIST")
                .conflicts_with("seed")
                .help("comma separated seeds, one output directory each"),
        )
        .arg(
            Arg::new("jobs")
                .long("jobs")
                .value_name("N")
                .help("parallel runs [default: available cores]"),
        )
    } else {
        cmd
    }
}

pub fn command() -> Command {
    let run_groups = [Group::Data, Group::Train, Group::Output];
    Command::new("reweight")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Semi-supervised training with learned per-example weights on unlabeled data")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(
            common(
                Command::new("gen-data").about("Generate and split a synthetic dataset"),
                false,
            ),
            &[Group::Data],
            &[],
        ))
        .subcommand(with_keys(
            common(
                Command::new("run").about("Train and write metrics, weights and boundary grids"),
                true,
            ),
            &run_groups,
            &[],
        ))
        .subcommand(with_keys(
            common(
                Command::new("oracle")
                    .about("Compare influence scores with retraining on a convex probe"),
                false,
            ),
            &[Group::Data, Group::Probe],
            commands::ORACLE_KEYS,
        ))
        .subcommand(
            with_keys(
                common(
                    Command::new("sweep").about("Run several variants over several seeds"),
                    true,
                ),
                &run_groups,
                &[],
            )
            .arg(
                Arg::new("variants")
                    .long("variants")
                    .value_name("LIST")
                    .default_value("per-example,fixed,supervised,single")
                    .help("per-example, fixed, supervised, single, exact, identity, neumann"),
            )
            .arg(
                Arg::new("quiet")
                    .long("quiet")
                    .action(ArgAction::SetTrue)
                    .help("only print the summary"),
            ),
        )
}

fn settings(m: &ArgMatches) -> Result<Settings, CliError> {
    let mut s = match m.get_one::<String>("config") {
        Some(p) => Settings::load(&PathBuf::from(p))?,
        None => Settings::default(),
    };
    for k in KEYS.iter().map(|k| k.name).chain(["seed", "out"]) {
        if let Ok(Some(v)) = m.try_get_one::<String>(k) {
            s.set(k, v.clone());
        }
    }
    Ok(s)
}

fn workers(m: &ArgMatches) -> Result<usize, CliError> {
    match m.get_one::<String>("jobs") {
        Some(v) => v.parse().ok().filter(|&n: &usize| n >= 1).ok_or_else(|| {
            CliError::Config(vec![format!("jobs: expected an integer >= 1, got `{v}`")])
        }),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn print_run(s: &commands::RunSummary) {
    let l = &s.last;
    println!(
        "{}: iter {} val_loss {} val_err {} test_err {} lambda_mean {} ({:.2}s)",
        s.out.display(),
        l.iter,
        fmt::sig(l.val_loss, 6),
        fmt::sig(l.val_err, 6),
        fmt::sig(l.test_err, 6),
        fmt::sig(l.lambda_mean, 6),
        s.seconds
    );
}

fn dispatch(m: &ArgMatches) -> Result<(), CliError> {
    match m.subcommand() {
        Some(("gen-data", sub)) => {
            let path = commands::gen_data(&settings(sub)?)?;
            println!("wrote {}", path.display());
        }
        Some(("run", sub)) => {
            let s = settings(sub)?;
            match sub.get_one::<String>("seeds") {
                Some(list) => {
                    let seeds = commands::parse_seeds(list)?;
                    for r in commands::run_seeds(&s, &seeds, workers(sub)?)? {
                        print_run(&r);
                    }
                }
                None => print_run(&commands::run_one(&s)?),
            }
        }
        Some(("oracle", sub)) => {
            let o = commands::oracle(&settings(sub)?)?;
            println!(
                "pearson {} sign_agreement {} examples {} ({})",
                fmt::sig(o.result.pearson, 6),
                fmt::sig(o.result.sign_agreement, 6),
                o.result.ids.len(),
                o.path.display()
            );
        }
        Some(("sweep", sub)) => {
            let s = settings(sub)?;
            let seeds = commands::parse_seeds(
                sub.get_one::<String>("seeds")
                    .map_or("0,1,2,3,4", |v| v.as_str()),
            )?;
            let variants =
                commands::parse_variants(sub.get_one::<String>("variants").expect("defaulted"))?;
            let rows = commands::sweep(&s, &seeds, &variants, workers(sub)?)?;
            if !sub.get_flag("quiet") {
                for r in &rows {
                    print_run(&r.summary);
                }
            }
            println!("variant        val_loss   val_err   test_err");
            for v in &variants {
                let mine: Vec<_> = rows.iter().filter(|r| r.variant == *v).collect();
                let mean = |f: fn(&commands::SweepRow) -> f64| {
                    mine.iter().map(|r| f(r)).sum::<f64>() / mine.len() as f64
                };
                println!(
                    "{v:<14} {:<10} {:<9} {}",
                    fmt::sig(mean(|r| r.summary.last.val_loss), 5),
                    fmt::sig(mean(|r| r.summary.last.val_err), 4),
                    fmt::sig(mean(|r| r.summary.last.test_err), 4)
                );
            }
            println!("wrote {}", s.out().join("summary.csv").display());
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&m) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
