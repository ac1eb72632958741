//! `toa`: single solves, Monte-Carlo sweeps, convergence traces and the
//! proximal-operator self check.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use toa_core::experiments::{self, ExperimentConfig, OperatingPoint};
use toa_core::loss::{self, LossSpec};
use toa_core::{export, RngSeed};

#[derive(Debug, Parser)]
#[command(name = "toa", version, about = "Robust TOA source localization")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs every configured estimator on one realization.
    Solve,
    /// Runs the Monte-Carlo sweep; writes CSV to --out and JSON next to it.
    Sweep,
    /// Writes the per-iteration trace of the first ADMM estimator as CSV.
    Trace,
    /// Compares the proximal operators against brute-force minimization.
    ProxCheck {
        /// Random instances per loss kind.
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        /// Largest accepted deviation.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Failure classes, printed as `error: <class>: <message>`.
#[derive(Debug)]
enum Failure {
    Config(Vec<String>),
    Io(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn print(&self) {
        let mut err = io::stderr().lock();
        match self {
            Failure::Config(problems) => {
                for p in problems {
                    let _ = writeln!(err, "error: config: {p}");
                }
            }
            Failure::Io(e) => {
                let _ = writeln!(err, "error: io: {}", one_line(e));
            }
            Failure::Run(e) => {
                let _ = writeln!(err, "error: run: {}", one_line(e));
            }
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Run(_) => 1,
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Io)?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| Failure::Config(vec![format!("{}: {e}", path.display())]))?
        }
        None => return Err(Failure::Config(vec!["--config: required for this command".into()])),
    };
    if let Some(seed) = cli.seed {
        config.seed = RngSeed(seed);
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    Ok(config)
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))
        .map_err(Failure::Io)?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))
        .map_err(Failure::Io)?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => {
            write_atomic(path, bytes)?;
            info!("wrote {}", path.display());
            Ok(())
        }
        None => io::stdout()
            .lock()
            .write_all(bytes)
            .context("writing stdout")
            .map_err(Failure::Io),
    }
}

fn solve(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli)?;
    let estimators = config
        .build_estimators()
        .map_err(|e| Failure::Config(vec![e.to_string()]))?;
    if estimators.is_empty() {
        return Err(Failure::Config(vec!["estimators: at least one is required".into()]));
    }
    let point = OperatingPoint {
        alpha: config.fixed.alpha,
        gsnr_db: config.fixed.gsnr_db,
        sensors: config.fixed.sensors,
    };
    let (scenario, measurements) = config.trial(&point, 0).map_err(|e| Failure::Run(e.into()))?;
    let mut rows = Vec::new();
    for e in &estimators {
        let est = e
            .estimate(&scenario, &measurements)
            .with_context(|| format!("estimator {}", e.name()))
            .map_err(Failure::Run)?;
        info!(
            "{}: {:?} after {} iterations (converged: {})",
            e.name(),
            est.position.as_slice(),
            est.iterations,
            est.converged
        );
        rows.push(json!({
            "estimator": e.name(),
            "kind": e.kind(),
            "estimate": est.position.as_slice(),
            "error": (&est.position - scenario.source()).norm(),
            "iterations": est.iterations,
            "converged": est.converged,
            "kkt": est.kkt,
        }));
    }
    let doc = json!({
        "scenario": scenario,
        "ranges": measurements.ranges,
        "results": rows,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| Failure::Run(e.into()))?;
    bytes.push(b'\n');
    emit(cli.out.as_deref(), &bytes)
}

fn sweep(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli)?;
    let result = experiments::run_sweep(&config).map_err(|e| Failure::Run(e.into()))?;
    let mut csv = Vec::new();
    export::write_sweep_csv(&result, &mut csv).map_err(|e| Failure::Run(e.into()))?;
    match &cli.out {
        Some(path) => {
            let mut js = Vec::new();
            export::write_sweep_json(&result, &mut js).map_err(|e| Failure::Run(e.into()))?;
            write_atomic(path, &csv)?;
            let json_path = path.with_extension("json");
            write_atomic(&json_path, &js)?;
            info!("wrote {} and {}", path.display(), json_path.display());
            Ok(())
        }
        None => emit(None, &csv),
    }
}

fn trace(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli)?;
    let loss: LossSpec = config
        .estimators
        .iter()
        .find(|s| s.get("kind").and_then(|k| k.as_str()) == Some("admm"))
        .and_then(|s| s.get("loss"))
        .and_then(|l| serde_json::from_value(l.clone()).ok())
        .ok_or_else(|| Failure::Config(vec!["estimators: trace needs an admm estimator with a loss".into()]))?;
    let rows = experiments::convergence_trace(&config, &loss, config.seed).map_err(|e| Failure::Run(e.into()))?;
    info!("{} trace rows for {}", rows.len(), loss.name());
    let mut csv = Vec::new();
    export::write_trace_csv(&rows, &mut csv).map_err(|e| Failure::Run(e.into()))?;
    emit(cli.out.as_deref(), &csv)
}

fn prox_check(cli: &Cli, instances: usize, tolerance: f64) -> Result<(), Failure> {
    if instances == 0 {
        return Err(Failure::Config(vec!["instances: must be at least 1".into()]));
    }
    let mut rng = RngSeed(cli.seed.unwrap_or(0)).rng();
    let report = loss::check::run(instances, &mut rng);
    let mut text = String::new();
    for (kind, n, dev) in &report.rows {
        text.push_str(&format!("{kind} instances={n} max_deviation={dev:e}\n"));
    }
    text.push_str(&format!("max_deviation={:e}\n", report.max_deviation()));
    emit(cli.out.as_deref(), text.as_bytes())?;
    if report.max_deviation() > tolerance {
        return Err(Failure::Run(anyhow::anyhow!(
            "prox deviation {:e} exceeds tolerance {tolerance:e}",
            report.max_deviation()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let outcome = match &cli.command {
        Command::Solve => solve(&cli),
        Command::Sweep => sweep(&cli),
        Command::Trace => trace(&cli),
        Command::ProxCheck { instances, tolerance } => prox_check(&cli, *instances, *tolerance),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.print();
            ExitCode::from(f.code())
        }
    }
}
