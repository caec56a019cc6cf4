mod commands;
mod config;
mod failure;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{GradcheckArgs, Mode, PlotArgs, SimulateArgs};
use config::RunConfig;
use failure::{diagnose, Failure, EXIT_USAGE};

/// Learn monodomain reaction terms as a small neural network.
#[derive(Parser, Debug)]
#[command(name = "monoid", version)]
struct Cli {
    /// Run configuration (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-trajectory parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `train.adjoint`.
    #[arg(long, global = true, value_parser = ["paper", "discrete"])]
    adjoint: Option<String>,
    /// Forward model for `simulate` and `export-plot`.
    #[arg(long, global = true, value_enum, default_value = "ode")]
    mode: Mode,
    /// Comma-separated `key=value` overrides; bare keys refer to `[fh]`,
    /// others are written `section.key`.
    #[arg(long, global = true)]
    params: Vec<String>,
    /// Overrides `io.out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the reference model and write the training dataset.
    Generate,
    /// Fit the network to the dataset.
    Train {
        /// Dataset manifest (defaults to `io.dataset`).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Start from these weights instead of a seeded random draw.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Print progress every 100 iterations to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Simulate the network model from one initial condition.
    Simulate {
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Initial state `v,w`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "2,0")]
        z0: [f64; 2],
        /// Also simulate the reference model and write `t,v_nn,v_fh`.
        #[arg(long)]
        compare_fh: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the adjoint gradient with central finite differences.
    Gradcheck {
        /// Length of the time window of the check problem.
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
        /// Defaults to 1e-7 for tanh and 1e-5 for the smoothed ReLU.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Write the comparison CSV and SVG charts for trained weights.
    ExportPlot {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "2,0")]
        z0: [f64; 2],
    },
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected 'v,w', got '{s}'"))?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
    Ok([p(a)?, p(b)?])
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be >= 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut overrides = cli.params.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    if let Some(a) = &cli.adjoint {
        overrides.push(format!("train.adjoint=\"{a}\""));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(dir) = cli.out_dir {
        cfg.io.out_dir = dir;
    }
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Train { dataset, init, verbose } => {
            if dataset.is_some() {
                cfg.io.dataset = dataset;
            }
            commands::train(&cfg, init.as_deref(), verbose)
        }
        Command::Simulate {
            weights,
            z0,
            compare_fh,
            out,
        } => commands::simulate(
            &cfg,
            &SimulateArgs {
                weights,
                z0,
                compare_fh,
                out,
                mode: cli.mode,
            },
        ),
        Command::Gradcheck { horizon, fd_step, tol } => commands::gradcheck_cmd(
            &cfg,
            &GradcheckArgs {
                horizon,
                fd_step,
                tolerance: tol,
            },
        ),
        Command::ExportPlot { weights, z0 } => commands::export_plot(
            &cfg,
            &PlotArgs {
                weights,
                z0,
                mode: cli.mode,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, line) = diagnose(&e);
            eprintln!("{line}");
            ExitCode::from(code as u8)
        }
    }
}
