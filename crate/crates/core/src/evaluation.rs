//! Pseudo out-of-sample evaluation over an expanding window.
//!
//! An origin `t` trains on the first `t` observations of the transformed
//! panel and forecasts observations `t, t+1, ...` (0-based rows). Origins run
//! from `t0` to `T - 1`. With a refit stride above one, origins between refits
//! reuse the latest chain with updated lags.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{lpds_joint_original, lpds_marginal_original, pip, rmse, simulate_forecast_paths};
use crate::data::TimeSeriesPanel;
use crate::gibbs::{run_chain, ChainOutput, SamplerConfig};
use crate::par::{map_range, Parallelism};
use crate::rng::{derive_seed, stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    pub t0: usize,
    pub h_max: usize,
    #[serde(default = "one")]
    pub refit_stride: usize,
    #[serde(default)]
    pub rmspe: bool,
    #[serde(default)]
    pub benchmark: Option<PathBuf>,
    /// Parallelism across origins.
    #[serde(default)]
    pub parallelism: Parallelism,
}

fn one() -> usize {
    1
}

/// Benchmark point forecasts keyed by (origin, horizon, variable).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkTable {
    entries: HashMap<(usize, usize, String), f64>,
}

#[derive(Debug, Deserialize)]
struct BenchmarkRow {
    origin: usize,
    horizon: usize,
    variable: String,
    mean: f64,
}

impl BenchmarkTable {
    /// Read a CSV with header `origin,horizon,variable,mean`.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut entries = HashMap::new();
        for row in reader.deserialize() {
            let row: BenchmarkRow = row?;
            entries.insert((row.origin, row.horizon, row.variable), row.mean);
        }
        Ok(BenchmarkTable { entries })
    }

    pub fn insert(&mut self, origin: usize, horizon: usize, variable: &str, mean: f64) {
        self.entries.insert((origin, horizon, variable.to_string()), mean);
    }

    pub fn get(&self, origin: usize, horizon: usize, variable: &str) -> Option<f64> {
        self.entries.get(&(origin, horizon, variable.to_string())).copied()
    }
}

/// Scores and forecasts at one origin, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginResult {
    pub origin: usize,
    /// Origin of the chain used (differs from `origin` between refits).
    pub fitted_at: usize,
    pub joint_lpds: f64,
    pub marginal_lpds: Vec<f64>,
    /// Predictive means per horizon and variable.
    pub point: Vec<Vec<f64>>,
    /// Realized values per horizon, where observed.
    pub actual: Vec<Option<Vec<f64>>>,
    pub excluded_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmspeEntry {
    pub variable: String,
    pub horizon: usize,
    pub model_rmse: f64,
    pub benchmark_rmse: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub names: Vec<String>,
    pub regime: String,
    pub t0: usize,
    pub h_max: usize,
    pub refit_stride: usize,
    pub origins: Vec<OriginResult>,
    pub cumulative_joint_lpds: Vec<f64>,
    /// Per origin, per variable.
    pub cumulative_marginal_lpds: Vec<Vec<f64>>,
    pub rmspe: Vec<RmspeEntry>,
    /// Inclusion probabilities from the last fitted chain, per equation and predictor.
    pub pip: Vec<Vec<f64>>,
}

/// Sampler configuration used for the fit at `origin`.
pub fn origin_config(config: &SamplerConfig, origin: usize) -> SamplerConfig {
    SamplerConfig {
        seed: derive_seed(config.seed, &[stage::ORIGIN, origin as u64]),
        ..config.clone()
    }
}

/// Fit on the first `origin` rows of the transformed panel.
pub fn fit_at_origin(config: &SamplerConfig, panel: &TimeSeriesPanel, origin: usize) -> Result<ChainOutput> {
    let train = panel.head(origin).standardize()?;
    run_chain(&origin_config(config, origin), &train)
}

/// Forecast from `chain` at `origin` and score against the panel.
pub fn score_origin(
    chain: &ChainOutput,
    panel: &TimeSeriesPanel,
    origin: usize,
    fitted_at: usize,
    config: &SamplerConfig,
    h_max: usize,
) -> Result<OriginResult> {
    let p = chain.lag_order;
    let n = panel.n_vars();
    if origin < p || origin >= panel.n_obs() {
        return Err(Error::Config(format!("origin {origin} outside [{p}, {})", panel.n_obs())));
    }
    let recent = nalgebra::DMatrix::from_fn(p, n, |r, j| chain.scaling[j].to_standard(panel.values[(origin - p + r, j)]));
    let seed = derive_seed(config.seed, &[stage::FORECAST, origin as u64]);
    let set = simulate_forecast_paths(chain, &recent, h_max, seed, Parallelism::Serial)?;
    let comps = set.components(0);
    let y: Vec<f64> = (0..n).map(|j| panel.values[(origin, j)]).collect();
    let joint = lpds_joint_original(&y, &comps, &set.scaling)?;
    let marginal = (0..n)
        .map(|j| lpds_marginal_original(y[j], j, &comps, &set.scaling))
        .collect::<Result<Vec<f64>>>()?;
    let actual = (0..h_max)
        .map(|h| {
            let row = origin + h;
            (row < panel.n_obs()).then(|| (0..n).map(|j| panel.values[(row, j)]).collect())
        })
        .collect();
    Ok(OriginResult {
        origin,
        fitted_at,
        joint_lpds: joint,
        marginal_lpds: marginal,
        point: set.point_forecasts(),
        actual,
        excluded_draws: set.excluded,
    })
}

/// Run the expanding-window evaluation on a transformed (unstandardized) panel.
pub fn expanding_window(
    config: &SamplerConfig,
    panel: &TimeSeriesPanel,
    settings: &EvaluationSettings,
) -> Result<EvaluationReport> {
    let t_total = panel.n_obs();
    if settings.t0 >= t_total {
        return Err(Error::Config(format!("t0 = {} must be below T = {t_total}", settings.t0)));
    }
    if settings.h_max == 0 || settings.refit_stride == 0 {
        return Err(Error::Config("h_max and refit_stride must be at least 1".into()));
    }
    let benchmark = match (&settings.rmspe, &settings.benchmark) {
        (true, None) => return Err(Error::Config("RMSPE requested but no benchmark file given".into())),
        (true, Some(path)) if !path.is_file() => {
            return Err(Error::Config(format!("benchmark file {} not found", path.display())))
        }
        (true, Some(path)) => Some(BenchmarkTable::read_csv(path)?),
        (false, _) => None,
    };
    let origins: Vec<usize> = (settings.t0..t_total).collect();
    let groups: Vec<&[usize]> = origins.chunks(settings.refit_stride).collect();
    let results = map_range(settings.parallelism, groups.len(), |g| -> Result<(Vec<OriginResult>, Vec<Vec<f64>>)> {
        let fitted_at = groups[g][0];
        let chain = fit_at_origin(config, panel, fitted_at)?;
        let scored = groups[g]
            .iter()
            .map(|&t| score_origin(&chain, panel, t, fitted_at, config, settings.h_max))
            .collect::<Result<Vec<_>>>()?;
        Ok((scored, pip(&chain)))
    });
    let mut per_origin = Vec::with_capacity(origins.len());
    let mut last_pip = Vec::new();
    for r in results {
        let (scored, pip) = r?;
        per_origin.extend(scored);
        last_pip = pip;
    }
    Ok(assemble_report(config, panel, settings, per_origin, last_pip, benchmark.as_ref()))
}

/// Aggregate per-origin results into running sums and RMSPE tables.
pub fn assemble_report(
    config: &SamplerConfig,
    panel: &TimeSeriesPanel,
    settings: &EvaluationSettings,
    origins: Vec<OriginResult>,
    pip: Vec<Vec<f64>>,
    benchmark: Option<&BenchmarkTable>,
) -> EvaluationReport {
    let n = panel.n_vars();
    let mut cumulative_joint = Vec::with_capacity(origins.len());
    let mut cumulative_marginal = Vec::with_capacity(origins.len());
    let (mut acc, mut acc_m) = (0.0, vec![0.0; n]);
    for o in &origins {
        acc += o.joint_lpds;
        for j in 0..n {
            acc_m[j] += o.marginal_lpds[j];
        }
        cumulative_joint.push(acc);
        cumulative_marginal.push(acc_m.clone());
    }
    let mut rmspe = Vec::new();
    for j in 0..n {
        let name = &panel.names[j];
        for h in 0..settings.h_max {
            let (mut f, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
            for o in &origins {
                let Some(actual) = &o.actual[h] else { continue };
                let bench = benchmark.and_then(|t| t.get(o.origin, h + 1, name));
                if benchmark.is_some() && bench.is_none() {
                    continue;
                }
                f.push(o.point[h][j]);
                a.push(actual[j]);
                b.extend(bench);
            }
            if f.is_empty() {
                continue;
            }
            let model_rmse = rmse(&f, &a);
            let benchmark_rmse = benchmark.map(|_| rmse(&b, &a));
            let ratio = benchmark_rmse.filter(|r| *r > 0.0).map(|r| model_rmse / r);
            rmspe.push(RmspeEntry {
                variable: name.clone(),
                horizon: h + 1,
                model_rmse,
                benchmark_rmse,
                ratio,
            });
        }
    }
    EvaluationReport {
        names: panel.names.clone(),
        regime: config.regime.name().to_string(),
        t0: settings.t0,
        h_max: settings.h_max,
        refit_stride: settings.refit_stride,
        origins,
        cumulative_joint_lpds: cumulative_joint,
        cumulative_marginal_lpds: cumulative_marginal,
        rmspe,
        pip,
    }
}

impl EvaluationReport {
    pub fn total_joint_lpds(&self) -> f64 {
        self.cumulative_joint_lpds.last().copied().unwrap_or(0.0)
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Write `lpds.csv`, `rmspe.csv` and `pip.csv` into `dir`.
    pub fn write_csv_tables<P: AsRef<Path>>(&self, dir: P) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let lpds_path = dir.join("lpds.csv");
        let mut w = csv::Writer::from_path(&lpds_path)?;
        let mut header = vec!["origin".to_string(), "joint".into(), "cumulative_joint".into()];
        for name in &self.names {
            header.push(format!("{name}_marginal"));
            header.push(format!("{name}_cumulative_marginal"));
        }
        w.write_record(&header)?;
        for (i, o) in self.origins.iter().enumerate() {
            let mut rec = vec![o.origin.to_string(), o.joint_lpds.to_string(), self.cumulative_joint_lpds[i].to_string()];
            for j in 0..self.names.len() {
                rec.push(o.marginal_lpds[j].to_string());
                rec.push(self.cumulative_marginal_lpds[i][j].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;

        let rmspe_path = dir.join("rmspe.csv");
        let mut w = csv::Writer::from_path(&rmspe_path)?;
        w.write_record(["variable", "horizon", "model_rmse", "benchmark_rmse", "ratio"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.rmspe {
            w.write_record([
                e.variable.clone(),
                e.horizon.to_string(),
                e.model_rmse.to_string(),
                opt(e.benchmark_rmse),
                opt(e.ratio),
            ])?;
        }
        w.flush()?;

        let pip_path = dir.join("pip.csv");
        write_pip_csv(&pip_path, &self.names, &self.pip)?;
        Ok(vec![lpds_path, rmspe_path, pip_path])
    }
}

/// PIP table with one row per (equation, predictor) and its lag and variable.
pub fn write_pip_csv<P: AsRef<Path>>(path: P, names: &[String], pip: &[Vec<f64>]) -> Result<()> {
    let n = names.len();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "equation,predictor,lag,pip")?;
    for (j, row) in pip.iter().enumerate() {
        for (q, v) in row.iter().enumerate() {
            let lag = crate::data::lag_of_column(q, n);
            let var = &names[crate::data::variable_of_column(q, n)];
            writeln!(out, "{},{var},{lag},{v}", names[j])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::std_normal;
    use crate::factor::Volatility;
    use crate::rng::substream;
    use crate::split_prior::SplitRegime;

    fn panel(n: usize, t: usize) -> TimeSeriesPanel {
        let mut rng = substream(42, &[0]);
        let mut cols = vec![vec![0.0; t]; n];
        for s in 1..t {
            for i in 0..n {
                cols[i][s] = 0.7 * cols[i][s - 1] + std_normal(&mut rng);
            }
        }
        TimeSeriesPanel::from_columns((0..n).map(|i| format!("x{i}")).collect(), &cols).unwrap()
    }

    fn config() -> SamplerConfig {
        SamplerConfig {
            n_trees: 8,
            lags: 2,
            n_burn: 10,
            n_save: 20,
            regime: SplitRegime::Uniform,
            volatility: Volatility::Homoskedastic,
            ..SamplerConfig::new(3)
        }
    }

    fn settings(t0: usize) -> EvaluationSettings {
        EvaluationSettings {
            t0,
            h_max: 2,
            refit_stride: 1,
            rmspe: false,
            benchmark: None,
            parallelism: Parallelism::Serial,
        }
    }

    #[test]
    fn last_origin_only() {
        let p = panel(2, 40);
        let report = expanding_window(&config(), &p, &settings(39)).unwrap();
        assert_eq!(report.origins.len(), 1);
        assert_eq!(report.origins[0].actual[1], None);
    }

    #[test]
    fn cumulative_lpds_is_running_sum_and_composes() {
        let p = panel(3, 45);
        let cfg = config();
        let report = expanding_window(&cfg, &p, &settings(37)).unwrap();
        assert_eq!(report.origins.len(), 8);
        let mut running = 0.0;
        for (i, t) in (37..45).enumerate() {
            let chain = fit_at_origin(&cfg, &p, t).unwrap();
            let scripted = score_origin(&chain, &p, t, t, &cfg, 2).unwrap();
            assert_eq!(scripted, report.origins[i]);
            running += scripted.joint_lpds;
            assert!((report.cumulative_joint_lpds[i] - running).abs() < 1e-12);
        }
        let pooled = expanding_window(&cfg, &p, &EvaluationSettings { parallelism: Parallelism::Pool, ..settings(37) }).unwrap();
        assert_eq!(pooled, report);
    }

    #[test]
    fn rmspe_requires_benchmark() {
        let p = panel(2, 30);
        let s = EvaluationSettings { rmspe: true, ..settings(28) };
        assert!(matches!(expanding_window(&config(), &p, &s), Err(Error::Config(_))));
        let s = EvaluationSettings { rmspe: true, benchmark: Some("/does/not/exist.csv".into()), ..settings(28) };
        assert!(matches!(expanding_window(&config(), &p, &s), Err(Error::Config(_))));
    }

    #[test]
    fn benchmark_csv_and_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        let p = panel(2, 30);
        let mut text = String::from("origin,horizon,variable,mean\n");
        for t in 27..30 {
            for name in ["x0", "x1"] {
                text.push_str(&format!("{t},1,{name},0.0\n"));
            }
        }
        std::fs::write(&path, text).unwrap();
        let s = EvaluationSettings { rmspe: true, benchmark: Some(path), h_max: 1, refit_stride: 2, ..settings(27) };
        let report = expanding_window(&config(), &p, &s).unwrap();
        assert_eq!(report.origins[1].fitted_at, 27);
        assert_eq!(report.rmspe.len(), 2);
        for e in &report.rmspe {
            assert!(e.ratio.unwrap() > 0.0);
        }
        let files = report.write_csv_tables(dir.path().join("out")).unwrap();
        assert!(files.iter().all(|f| f.exists()));
    }
}
