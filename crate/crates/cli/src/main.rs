use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mhis::density::RngStream;
use mhis::experiment::{dump_chain, run_calibration, run_experiment, CalibrationSummary, ExperimentConfig};
use mhis::finite::run_verify_suite;

/// Metropolis–Hastings importance sampling experiments.
#[derive(Parser)]
#[command(name = "mhis", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicate experiment and write results.csv, acceptance.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Calibrate the stepsize of Aₙ from its fixed-point condition.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Exact matrix checks of the augmented kernel on random finite models.
    Verify {
        #[arg(long, default_value_t = 100)]
        models: usize,
        #[arg(long, default_value_t = 8)]
        max_states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the augmented chain of the first replicate as CSV.
    ChainDump {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Raised when `verify` finds a failing check.
#[derive(Debug)]
struct VerificationFailed;

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("finite-state verification failed")
    }
}

impl std::error::Error for VerificationFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for configuration and input errors, 2 for numerical failures, 3 for
/// failed verification.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<VerificationFailed>().is_some() {
        return 3;
    }
    match e.downcast_ref::<mhis::Error>() {
        Some(err) if err.is_numerical() => 2,
        Some(_) => 1,
        None => 1,
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MHIS_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("MHIS_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot size the worker pool")?;
    }
    Ok(())
}

fn load(config: &PathBuf) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::from_path(config)?)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, output_dir } => {
            let cfg = load(&config)?;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let t0 = Instant::now();
            let result = run_experiment(&cfg)?;
            result.write_outputs(&dir)?;
            let mut out = io::stdout().lock();
            for s in result.summaries()? {
                writeln!(
                    out,
                    "{} d={} ({:?}): truth {:?} [{}]",
                    s.problem, s.dim, s.proposal, s.truth, s.truth_source
                )?;
                if let Some(c) = &s.calibration {
                    print_calibration(&mut out, c)?;
                }
                writeln!(out, "  {:<9} {:>10} {:>12} {:>10} {:>12} {:>10}", "estimator", "s*(rmse)", "rmse", "s*(var)", "variance", "var/var_S")?;
                for o in &s.optima {
                    writeln!(
                        out,
                        "  {:<9} {:>10.4} {:>12.4e} {:>10.4} {:>12.4e} {:>10}",
                        o.estimator.label(),
                        o.s_min_rmse,
                        o.rmse,
                        o.s_min_variance,
                        o.variance,
                        o.min_variance_ratio_vs_s.map_or("-".into(), |r| format!("{r:.3}")),
                    )?;
                }
            }
            writeln!(out, "wrote {} in {:.1?}", dir.display(), t0.elapsed())?;
        }
        Command::Calibrate { config, output_dir } => {
            let cfg = load(&config)?;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
            std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let mut out = io::stdout().lock();
            for (problem, state) in run_calibration(&cfg)? {
                let path = dir.join(format!("calibration_{}_d{}.csv", problem.name, problem.dim));
                state.write_audit_csv(File::create(&path)?)?;
                writeln!(out, "{} d={} ({:?})", problem.name, problem.dim, cfg.proposal)?;
                print_calibration(&mut out, &CalibrationSummary::from(&state))?;
                writeln!(out, "  audit trail: {}", path.display())?;
            }
        }
        Command::Verify {
            models,
            max_states,
            seed,
        } => {
            let mut rng = RngStream::new(seed, 0);
            let report = run_verify_suite(models, max_states, &mut rng)?;
            print!("{}", report.table());
            println!("{} random models, g in 2..={max_states}", report.models);
            if !report.all_ok() {
                return Err(VerificationFailed.into());
            }
        }
        Command::ChainDump { config, output } => {
            let cfg = load(&config)?;
            match output {
                Some(path) => {
                    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
                    dump_chain(&cfg, BufWriter::new(file))?;
                }
                None => dump_chain(&cfg, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn print_calibration(out: &mut impl Write, c: &CalibrationSummary) -> io::Result<()> {
    writeln!(
        out,
        "  calibrated s = {:.5}, J_f(s) = {:.5}, |g(s)|/s² = {:.3}, J(s) = {:.5}, converged = {}",
        c.s, c.j_f, c.relative_residual, c.j, c.converged
    )?;
    if c.sign_changes.len() > 1 {
        writeln!(out, "  g changes sign on several intervals: {:?}", c.sign_changes)?;
    }
    Ok(())
}
