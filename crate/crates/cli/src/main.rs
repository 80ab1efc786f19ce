use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{value_parser, Arg, ArgMatches, Command};
use istc_core::harness::{
    run_benchmark, run_certify, run_oracle_check, run_scatter, run_train_toy, ExperimentConfig, ExperimentKind,
    CONFIG_KEYS,
};
use istc_core::scattering::channel_count;
use istc_core::Error;

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("benchmark", "Compare ISTA, FISTA and ISTC against the exact solution on a planted ensemble"),
    ("certify", "Check the convergence hypotheses and verify generalized ISTC traces"),
    ("scatter", "Compute scattering tensors, the channel manifest and an optional PCA reduction"),
    ("train-toy", "Train the unrolled network on the synthetic two-class task"),
    ("oracle-check", "Solve planted instances exactly and measure ISTC's distance to the solution"),
];

/// Exit status for configuration, IO and numerical errors; 1 and 2 are
/// reserved for certification outcomes.
const EXIT_ERROR: u8 = 3;

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let mut root = Command::new("istc")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Positive sparse coding experiments")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(value_parser!(PathBuf))
                .help("key = value config file; flags override it"),
        );
        for key in CONFIG_KEYS.iter().filter(|k| **k != "experiment") {
            let long = flag(key);
            let mut arg = Arg::new(*key).long(long.clone()).value_name("VALUE");
            if long != *key {
                arg = arg.alias(*key);
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve(kind: ExperimentKind, matches: &ArgMatches) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match matches.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::load(path, Some(kind)).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::new(kind),
    };
    for key in CONFIG_KEYS.iter().filter(|k| **k != "experiment") {
        if let Some(value) = matches.get_one::<String>(key) {
            cfg.set(key, value).with_context(|| format!("--{}", flag(key)))?;
        }
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "n/a".into())
}

fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> anyhow::Result<u8> {
    match kind {
        ExperimentKind::Benchmark => {
            let outcome = run_benchmark(cfg)?;
            println!("solver  median_rel_mse@12  median_final_lagrangian");
            for &solver in &cfg.solvers {
                println!(
                    "{:<7} {:>17}  {:>23}",
                    solver.name(),
                    fmt_opt(outcome.median_rel_mse_at_12(solver)),
                    fmt_opt(outcome.median_final_lagrangian(solver)),
                );
            }
            Ok(0)
        }
        ExperimentKind::Certify => {
            let outcome = run_certify(cfg)?;
            let total = outcome.rows.len();
            let passed = outcome.rows.iter().filter(|r| r.passed()).count();
            println!(
                "certified {}/{total}, empirical passes {passed}/{total}, exit {}",
                outcome.certified_count(),
                outcome.exit_code()
            );
            for row in outcome.rows.iter().filter(|r| r.certified() && !r.passed()) {
                let first = row.verification.as_ref().and_then(|v| v.first_violation());
                println!("instance {} violated at iteration {:?}", row.instance, first);
            }
            for row in outcome.rows.iter().filter(|r| r.error.is_some()) {
                println!("instance {}: {}", row.instance, row.error.as_deref().unwrap_or_default());
            }
            Ok(outcome.exit_code() as u8)
        }
        ExperimentKind::Scatter => {
            let outcome = run_scatter(cfg)?;
            let (h, w) = cfg.scattering.output_size();
            println!(
                "{} images, {} channels on a {h}x{w} grid",
                outcome.outputs.len(),
                channel_count(&cfg.scattering)
            );
            if let Some(op) = &outcome.reduction {
                println!(
                    "reduced to {} channels, captured variance {:.4}",
                    op.output_dim(),
                    op.captured_variance()
                );
            }
            Ok(0)
        }
        ExperimentKind::TrainToy => match run_train_toy(cfg) {
            Ok(outcome) => {
                match outcome.metrics.last() {
                    Some(m) => println!(
                        "epoch {}: train_loss {:.4}, val_acc {:.3}, mean_sparsity {:.3}",
                        m.epoch, m.train_loss, m.validation_accuracy, m.mean_sparsity
                    ),
                    None => println!("no epochs run; checkpoint at epoch {}", outcome.state.epoch),
                }
                Ok(0)
            }
            Err(Error::DivergedLoss { epoch }) => {
                eprintln!(
                    "loss diverged in epoch {}; last good checkpoint kept in {}",
                    epoch + 1,
                    cfg.require_out()?.join("checkpoint").display()
                );
                Ok(EXIT_ERROR)
            }
            Err(e) => Err(e.into()),
        },
        ExperimentKind::OracleCheck => {
            let outcome = run_oracle_check(cfg)?;
            let total = outcome.rows.len();
            let kkt = outcome.rows.iter().filter(|r| r.kkt_ok).count();
            let close = outcome.rows.iter().filter(|r| r.istc_linf <= outcome.tolerance).count();
            let worst = outcome.rows.iter().map(|r| r.istc_linf).fold(0.0, f64::max);
            println!(
                "kkt {kkt}/{total}, istc within {:.1e}: {close}/{total}, worst linf {worst:.3e}",
                outcome.tolerance
            );
            Ok(outcome.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = name
        .parse::<ExperimentKind>()
        .map_err(anyhow::Error::from)
        .and_then(|kind| {
            let cfg = resolve(kind, sub)?;
            run(kind, &cfg)
        });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
