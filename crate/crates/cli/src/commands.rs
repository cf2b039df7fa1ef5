//! Command implementations. Each writes its artifacts into `out` and records
//! them in the manifest.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use bartvar::data::read_transform_codes;
use bartvar::evaluation::write_pip_csv;
use bartvar::gibbs::{run_chain_with, ChainOptions, Checkpoint};
use bartvar::par::Parallelism;
use bartvar::rng::{derive_seed, stage, substream};
use bartvar::split_prior::dirichlet_draws;
use bartvar::{expanding_window, pip, simulate_forecast_paths, ChainOutput, Error, Result, TimeSeriesPanel, TransformCode};

use crate::config::RunConfig;
use crate::manifest::{Invocation, RunManifest, RunStatus};

pub const TRANSFORMED_FILE: &str = "transformed.csv";
pub const CHAIN_FILE: &str = "chain.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PIP_FILE: &str = "pip.csv";
pub const PRIOR_DRAWS_FILE: &str = "dirichlet_draws.csv";

/// Execute `manifest.invocation`, filling in inputs, outputs and timings.
/// On failure the manifest is still written, marked aborted.
pub fn execute(manifest: &mut RunManifest, out: &Path, parallelism: Parallelism) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let result = dispatch(manifest, out, parallelism);
    if let Err(e) = &result {
        manifest.status = RunStatus::Aborted;
        manifest.error = Some(e.to_string());
        // Artifacts written before the failure, such as the last checkpoint.
        let partial = out.join(CHECKPOINT_FILE);
        if partial.is_file() && !manifest.outputs.iter().any(|o| o.path == partial) {
            manifest.add_output(&partial)?;
        }
    }
    manifest.write(out)?;
    result
}

fn dispatch(manifest: &mut RunManifest, out: &Path, parallelism: Parallelism) -> Result<()> {
    if let Invocation::PriorDraws { alpha, draws, seed } = manifest.invocation.clone() {
        let path = out.join(PRIOR_DRAWS_FILE);
        manifest.timed("prior-draws", || prior_draws(&alpha, draws, seed, &path))?;
        return manifest.add_output(&path);
    }
    let config = manifest
        .config
        .clone()
        .ok_or_else(|| Error::Config("this command needs a configuration".into()))?;
    for file in config.input_files() {
        manifest.add_input(&file)?;
    }
    let panel = manifest.timed("transform", || load_panel(&config))?;
    match manifest.invocation.clone() {
        Invocation::Transform => {
            let path = out.join(TRANSFORMED_FILE);
            panel.write_csv(&path)?;
            manifest.add_output(&path)
        }
        Invocation::Fit { resume } => {
            fit(manifest, &config, &panel, out, parallelism, resume)?;
            Ok(())
        }
        Invocation::Forecast { chain } => {
            let chain = chain_for(manifest, &config, &panel, out, parallelism, chain.as_deref())?;
            let h = config.forecast.horizon;
            let seed = derive_seed(config.seed, &[stage::FORECAST]);
            let set = manifest.timed("forecast", || simulate_forecast_paths(&chain, &chain.recent, h, seed, parallelism))?;
            if set.draws.is_empty() {
                return Err(Error::NotPositiveDefinite("every forecast draw was excluded".into()));
            }
            let path = out.join(FORECAST_FILE);
            write_forecast_csv(&path, &chain.names, &set, config.forecast.interval)?;
            manifest.add_output(&path)
        }
        Invocation::Evaluate => {
            let sampler = config.sampler_config(Parallelism::Serial);
            let settings = config.evaluation_settings(parallelism)?;
            let report = manifest.timed("evaluate", || expanding_window(&sampler, &panel, &settings))?;
            let path = out.join(REPORT_FILE);
            report.write_json(&path)?;
            manifest.add_output(&path)?;
            for table in report.write_csv_tables(out)? {
                manifest.add_output(&table)?;
            }
            Ok(())
        }
        Invocation::Pip { chain } => {
            let chain = chain_for(manifest, &config, &panel, out, parallelism, chain.as_deref())?;
            let path = out.join(PIP_FILE);
            write_pip_csv(&path, &chain.names, &pip(&chain))?;
            manifest.add_output(&path)
        }
        Invocation::PriorDraws { .. } => unreachable!("handled above"),
    }
}

/// Read the raw panel and apply its transformation codes.
pub fn load_panel(config: &RunConfig) -> Result<TimeSeriesPanel> {
    let codes = match &config.data.transform_codes {
        Some(path) => read_transform_codes(path)?,
        None => level_codes(&config.data.panel)?,
    };
    TimeSeriesPanel::read_csv(&config.data.panel, &codes)?.transformed()
}

fn level_codes(panel: &Path) -> Result<HashMap<String, TransformCode>> {
    let mut reader = csv::Reader::from_path(panel)?;
    Ok(reader
        .headers()?
        .iter()
        .skip(1)
        .map(|name| (name.trim().to_owned(), TransformCode::Level))
        .collect())
}

fn fit(
    manifest: &mut RunManifest,
    config: &RunConfig,
    panel: &TimeSeriesPanel,
    out: &Path,
    parallelism: Parallelism,
    resume: bool,
) -> Result<ChainOutput> {
    let standardized = panel.standardize()?;
    let sampler = config.sampler_config(parallelism);
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let previous = if resume {
        manifest.add_input(&checkpoint_path)?;
        Some(Checkpoint::read(&checkpoint_path)?)
    } else {
        None
    };
    let options = ChainOptions {
        checkpoint_path: Some(checkpoint_path.clone()),
        stop_after: None,
    };
    let chain = manifest.timed("fit", || run_chain_with(&sampler, &standardized, &options, previous))?;
    let path = out.join(CHAIN_FILE);
    chain.write_json(&path)?;
    manifest.add_output(&checkpoint_path)?;
    manifest.add_output(&path)?;
    Ok(chain)
}

fn chain_for(
    manifest: &mut RunManifest,
    config: &RunConfig,
    panel: &TimeSeriesPanel,
    out: &Path,
    parallelism: Parallelism,
    chain: Option<&Path>,
) -> Result<ChainOutput> {
    match chain {
        Some(path) => {
            manifest.add_input(path)?;
            ChainOutput::read_json(path)
        }
        None => fit(manifest, config, panel, out, parallelism, false),
    }
}

fn write_forecast_csv(
    path: &Path,
    names: &[String],
    set: &bartvar::ForecastSet,
    (lower, upper): (f64, f64),
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["horizon", "variable", "mean", "lower", "median", "upper"])?;
    let means = set.point_forecasts();
    for h in 0..set.horizon {
        for (j, name) in names.iter().enumerate() {
            w.write_record([
                (h + 1).to_string(),
                name.clone(),
                means[h][j].to_string(),
                set.path_quantile(h, j, lower).to_string(),
                set.path_quantile(h, j, 0.5).to_string(),
                set.path_quantile(h, j, upper).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn prior_draws(alpha: &[f64], draws: usize, seed: u64, path: &PathBuf) -> Result<()> {
    if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::Config(format!("alpha: every entry must be positive, got {alpha:?}")));
    }
    let mut rng = substream(seed, &[]);
    let points = dirichlet_draws(alpha, draws, &mut rng);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=alpha.len()).map(|i| format!("s{i}")))?;
    for p in points {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
