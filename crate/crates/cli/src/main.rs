use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use towerlab_cli::acceptance::{preset, run_all};
use towerlab_cli::output::{render, write_files};
use towerlab_cli::{
    run_experiment, with_workers, CliError, ExperimentConfig, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_PASS, WORKERS_ENV,
};

#[derive(Parser)]
#[command(name = "towerlab", version, about = "Reproducible experiments over Markov shift towers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); the built-in preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    ReturnTail(Common),
    MeetingTail(Common),
    ApproxDecay(Common),
    Clt(Common),
    Coboundary(Common),
    Stationarity(Common),
    /// Runs every acceptance experiment.
    AllAcceptance {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "acceptance-output")]
        out: PathBuf,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
}

fn single(kind: &str, c: Common) -> Result<i32, CliError> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig {
            seed: 1,
            output: None,
            experiment: preset(kind).expect("every kind has a preset"),
        },
    };
    if cfg.experiment.kind() != kind {
        return Err(CliError::Config(format!(
            "experiment.kind is {} but the subcommand is {kind}",
            cfg.experiment.kind()
        )));
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = c.out {
        cfg.output = Some(out);
    }
    cfg.validate()?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from(format!("{kind}-output")));
    let outcome = with_workers(c.workers, || run_experiment(&cfg))??;
    write_files(&dir, &render(&cfg, &outcome))?;
    for check in &outcome.checks {
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    println!("outputs written to {}", dir.display());
    Ok(if outcome.passed() { EXIT_PASS } else { EXIT_CHECK_FAILED })
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::ReturnTail(c) => single("return-tail", c),
        Command::MeetingTail(c) => single("meeting-tail", c),
        Command::ApproxDecay(c) => single("approx-decay", c),
        Command::Clt(c) => single("clt", c),
        Command::Coboundary(c) => single("coboundary", c),
        Command::Stationarity(c) => single("stationarity", c),
        Command::AllAcceptance { seed, out, workers } => {
            if seed > i64::MAX as u64 {
                return Err(CliError::Config("seed: must fit in a signed 64-bit integer".into()));
            }
            let runs = with_workers(workers, || {
                run_all(seed, &out, |r| {
                    println!("{}: {:.1} s", r.name, r.elapsed.as_secs_f64());
                    for c in &r.outcome.checks {
                        println!("{} {}/{}: {}", if c.passed { "PASS" } else { "FAIL" }, r.name, c.name, c.detail);
                    }
                })
            })??;
            let ok = runs.iter().all(|r| r.outcome.passed());
            println!("outputs written to {}", out.display());
            Ok(if ok { EXIT_PASS } else { EXIT_CHECK_FAILED })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors are configuration errors; help and version are not errors
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
