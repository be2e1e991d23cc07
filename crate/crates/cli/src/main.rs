use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mflqr_cli::commands::{self, input_path, BASELINE_FILE, DATA_FILE, RESULT_FILE};
use mflqr_cli::config::RunConfig;
use mflqr_cli::{exit, CliError};

/// Model-free LQR synthesis from sampled data.
#[derive(Debug, Parser)]
#[command(name = "mflqr", version)]
struct Cli {
    /// Run configuration (TOML). Defaults to a built-in for repro commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the noise seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Accept inputs whose configuration hash differs from the current one.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured plant and write the noisy data set.
    Generate,
    /// Synthesize a gain from a data set.
    Synthesize {
        /// Data set CSV; defaults to `<out>/data.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Solve the Riccati equation of the known model.
    Baseline,
    /// Compare a synthesized gain with the baseline in closed loop.
    Compare {
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Check the value and advantage identities on the known model.
    VerifyLemmas {
        /// Adds `δ·I` to the Riccati solution (negative control).
        #[arg(long, hide = true, value_name = "DELTA")]
        corrupt_p: Option<f64>,
    },
    /// 747 lateral benchmark end to end.
    #[command(name = "repro-747")]
    Repro747,
    /// Quadcopter attitude benchmark end to end.
    ReproQuad,
}

fn load(cli: &Cli, builtin: Option<&str>) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, builtin) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::builtin(name)?,
        (None, None) => return Err(CliError::Parse("--config is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let builtin = match cli.command {
        Command::Repro747 => Some("b747"),
        Command::ReproQuad => Some("quad"),
        _ => None,
    };
    let cfg = load(cli, builtin)?;
    let out = cfg.output.dir.clone();
    match &cli.command {
        Command::Generate => commands::generate(&cfg, &out),
        Command::Synthesize { data } => {
            commands::synthesize(&cfg, &input_path(data.clone(), &out, DATA_FILE), &out, cli.force)
        }
        Command::Baseline => commands::baseline(&cfg, &out),
        Command::Compare { result, baseline } => commands::compare(
            &cfg,
            &input_path(result.clone(), &out, RESULT_FILE),
            &input_path(baseline.clone(), &out, BASELINE_FILE),
            &out,
            cli.force,
        )
        .map(|(summary, _)| summary),
        Command::VerifyLemmas { corrupt_p } => commands::verify_lemmas(&cfg, &out, *corrupt_p),
        Command::Repro747 | Command::ReproQuad => {
            commands::reproduce(&cfg, &out).map(|_| format!("artifacts in {}", out.display()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
