//! Command-line front end for the drift-removal laboratory.
//!
//! Exit codes: 0 pass, 1 usage or configuration error, 2 numerical failure,
//! 3 structural refusal (window floor), 4 verdict fail, 5 inconclusive.

mod commands;
mod config;
mod expr;
mod output;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Experiment;

#[derive(Parser)]
#[command(
    name = "zvonkin",
    about = "Drift-removal laboratory: backward solves, coordinate-change chains, path ensembles, and statistical checks",
    version
)]
struct Cli {
    /// Path to an experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named preset (see `--list-presets`); `--config` takes precedence.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts and the manifest index.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// List available presets and exit.
    #[arg(long, global = true)]
    list_presets: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backward equation for the configured source and write the
    /// solution container, norms, and residual.
    SolvePde,
    /// Build the drift-removing chain and write its manifest and segments.
    BuildChain,
    /// Simulate path ensembles and write exports plus a summary.
    Simulate {
        /// direct | zvonkin | both
        #[arg(long, default_value = "both")]
        mode: String,
    },
    /// Run one statistical check; the exit code reflects the verdict.
    Verify {
        /// feller | krylov | noncrossing | two-point | bel | khasminskii | uniqueness
        #[arg(long)]
        check: String,
    },
}

fn load_experiment(cli: &Cli) -> anyhow::Result<Experiment> {
    let raw = if let Some(path) = &cli.config {
        std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?
    } else if let Some(name) = &cli.preset {
        presets::load_preset(name)?
    } else {
        anyhow::bail!("provide --config PATH or --preset NAME (try --list-presets)")
    };
    let mut exp = Experiment::from_toml(&raw)?;
    if let Some(seed) = cli.seed {
        exp.config.ensemble.seed = seed;
    }
    Ok(exp)
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if cli.list_presets {
        for name in presets::preset_names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: thread pool already set: {e}");
        }
    }

    let Some(command) = &cli.command else {
        eprintln!("error: a subcommand is required (solve-pde | build-chain | simulate | verify)");
        return ExitCode::from(commands::EXIT_USAGE);
    };

    let exp = match load_experiment(&cli) {
        Ok(e) => e,
        Err(e) => {
            output::write_error(&cli.out, "config", &format!("{e:#}"));
            eprintln!("error: {e:#}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    };
    if !exp.exponents_ok {
        eprintln!(
            "note: exponent condition d/p + 2/q < {} does not hold for (p, q) = ({}, {})",
            exp.config.exponents.threshold, exp.config.exponents.p, exp.config.exponents.q
        );
    }

    let result = match command {
        Command::SolvePde => commands::cmd_solve_pde(&exp, &cli.out),
        Command::BuildChain => commands::cmd_build_chain(&exp, &cli.out),
        Command::Simulate { mode } => commands::cmd_simulate(&exp, &cli.out, mode),
        Command::Verify { check } => commands::cmd_verify(&exp, &cli.out, check),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            output::write_error(&cli.out, "io", &format!("{e:#}"));
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_NUMERICAL)
        }
    }
}
