//! `bartvar`: fit, forecast and evaluate tree-based Bayesian VARs from the command line.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
//! 1 anything else. Failures print one JSON record to stderr.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use bartvar::par::Parallelism;
use bartvar::Error;
use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::manifest::{Invocation, RunManifest};

#[derive(Parser, Debug)]
#[command(version, about, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Replay the run recorded in a manifest (inputs must be unchanged).
    #[arg(long, requires = "out")]
    from_manifest: Option<PathBuf>,

    /// Output directory for a replay.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads; 1 is the serial reference mode.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Apply transformation codes and write the transformed panel.
    Transform(Common),
    /// Run the sampler and write the chain and its checkpoint.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Write predictive means and path quantiles.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Use a previously written chain instead of fitting.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Run the expanding-window evaluation.
    Evaluate(Common),
    /// Write posterior inclusion probabilities.
    Pip {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Sample points from a Dirichlet distribution.
    PriorDraws {
        /// Comma-separated concentration parameters.
        #[arg(long, value_delimiter = ',', required = true)]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 5000)]
        draws: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Checkpoint { .. }) {
        1
    } else {
        2
    }
}

fn kind(e: &Error) -> &'static str {
    match exit_code(e) {
        3 => "numerical",
        2 => "configuration",
        _ => "runtime",
    }
}

fn plan(cli: Cli) -> Result<(RunManifest, PathBuf), Error> {
    if let Some(path) = cli.from_manifest {
        let recorded = RunManifest::read(&path)?;
        recorded.verify_inputs()?;
        if let Some(config) = &recorded.config {
            config.validate()?;
        }
        let out = cli.out.expect("clap requires --out");
        let manifest = RunManifest::new(recorded.invocation, recorded.config, cli.threads);
        return Ok((manifest, out));
    }
    let command = cli
        .command
        .ok_or_else(|| Error::Config("a command or --from-manifest is required".into()))?;
    let with_config = |invocation: Invocation, common: Common| -> Result<(RunManifest, PathBuf), Error> {
        let config = RunConfig::from_file(&common.config)?;
        Ok((RunManifest::new(invocation, Some(config), cli.threads), common.out))
    };
    match command {
        Command::Transform(c) => with_config(Invocation::Transform, c),
        Command::Fit { common, resume } => with_config(Invocation::Fit { resume }, common),
        Command::Forecast { common, chain } => with_config(Invocation::Forecast { chain }, common),
        Command::Evaluate(c) => with_config(Invocation::Evaluate, c),
        Command::Pip { common, chain } => with_config(Invocation::Pip { chain }, common),
        Command::PriorDraws { alpha, draws, seed, out } => Ok((
            RunManifest::new(Invocation::PriorDraws { alpha, draws, seed }, None, cli.threads),
            out,
        )),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let threads = cli.threads.max(1);
    if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?;
    }
    let (mut manifest, out) = plan(cli)?;
    commands::execute(&mut manifest, &out, Parallelism::from_threads(threads))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({
                "error": { "kind": kind(&e), "exit_code": code, "message": e.to_string() }
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
