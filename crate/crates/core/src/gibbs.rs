//! Full posterior sampler.
//!
//! One sweep updates, in order:
//! 1. every equation's trees, then its split probabilities (equations in parallel),
//! 2. factor loadings rows and horseshoe scales,
//! 3. factors period by period,
//! 4. log-variance paths and their hyperparameters, or constant variances.
//!
//! Randomness for each block is drawn from a substream keyed by
//! `(seed, stage, sweep, index)`, so serial and parallel runs agree exactly and
//! a run resumed from a checkpoint continues the same stream.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bart::{calibrate_tau2, update_forest, EquationForest, ForestSweepStats, REFRESH_EVERY};
use crate::data::{build_design, DesignPair, Scaling, TimeSeriesPanel};
use crate::error::{Error, Result};
use crate::factor::{FactorVolState, Volatility};
use crate::par::{for_each_mut, Parallelism};
use crate::rng::{stage, substream};
use crate::split_prior::{ar_residual_variances, SplitPriorState, SplitRegime};
use crate::sv::SvParams;
use crate::tree::{RegressionTree, TreePriorParams};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Tree-shape prior and leaf scale. `leaf_sd` overrides the data-based
/// calibration of the ensemble prior standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreePriorSettings {
    pub gamma: f64,
    pub beta: f64,
    pub leaf_sd: Option<f64>,
}

impl Default for TreePriorSettings {
    fn default() -> Self {
        TreePriorSettings {
            gamma: 0.95,
            beta: 0.2,
            leaf_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_trees: usize,
    pub lags: usize,
    /// Upper bound on the number of factors; `None` means min(4, n - 1).
    pub n_factors: Option<usize>,
    pub regime: SplitRegime,
    pub volatility: Volatility,
    pub n_burn: usize,
    pub n_save: usize,
    pub thin: usize,
    pub seed: u64,
    pub tree_prior: TreePriorSettings,
    pub parallelism: Parallelism,
    /// Sweeps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        SamplerConfig {
            n_trees: 200,
            lags: 4,
            n_factors: None,
            regime: SplitRegime::Minnesota {
                lambda1: 1.0,
                lambda2: 0.5,
            },
            volatility: Volatility::Stochastic,
            n_burn: 1000,
            n_save: 1000,
            thin: 1,
            seed,
            tree_prior: TreePriorSettings::default(),
            parallelism: Parallelism::Serial,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_trees == 0 {
            return fail("n_trees must be at least 1".into());
        }
        if self.lags == 0 {
            return fail("lags must be at least 1".into());
        }
        if self.n_save == 0 {
            return fail("n_save must be at least 1".into());
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        let g = self.tree_prior.gamma;
        if !(g > 0.0 && g < 1.0) {
            return fail(format!("tree_prior.gamma must lie in (0, 1), got {g}"));
        }
        if !(self.tree_prior.beta >= 0.0 && self.tree_prior.beta.is_finite()) {
            return fail(format!("tree_prior.beta must be non-negative, got {}", self.tree_prior.beta));
        }
        if let Some(sd) = self.tree_prior.leaf_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return fail(format!("tree_prior.leaf_sd must be positive, got {sd}"));
            }
        }
        self.regime.validate()
    }

    pub fn factor_count(&self, n_vars: usize) -> usize {
        self.n_factors.unwrap_or_else(|| 4.min(n_vars.saturating_sub(1)))
    }

    pub fn total_sweeps(&self) -> usize {
        self.n_burn + self.n_save * self.thin
    }
}

/// Per-equation sampler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationState {
    pub forest: EquationForest,
    pub split: SplitPriorState,
    pub tree_prior: TreePriorParams,
    pub stats: ForestSweepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    /// Completed sweeps.
    pub sweep: usize,
    pub equations: Vec<EquationState>,
    pub vol: FactorVolState,
}

fn column_variance(y: &DMatrix<f64>, j: usize) -> f64 {
    let col = y.column(j);
    let n = col.len() as f64;
    let mean = col.sum() / n;
    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

impl SamplerState {
    pub fn initial(config: &SamplerConfig, panel: &TimeSeriesPanel, design: &DesignPair) -> Result<Self> {
        let (rows, n) = design.y.shape();
        let k = design.n_predictors();
        let ar_var = match config.regime {
            SplitRegime::Minnesota { .. } => Some(ar_residual_variances(panel, config.lags)?),
            _ => None,
        };
        let equations = (0..n)
            .map(|j| {
                let y: Vec<f64> = design.y.column(j).iter().copied().collect();
                let tau2 = match config.tree_prior.leaf_sd {
                    Some(sd) => sd * sd / config.n_trees as f64,
                    None => calibrate_tau2(&y, config.n_trees),
                };
                let split = match config.regime {
                    SplitRegime::Uniform => SplitPriorState::uniform(k),
                    SplitRegime::Sparse { lambda, update_lambda } => SplitPriorState::sparse(k, lambda, update_lambda),
                    SplitRegime::Minnesota { lambda1, lambda2 } => SplitPriorState::minnesota(
                        j,
                        n,
                        config.lags,
                        lambda1,
                        lambda2,
                        ar_var.as_deref().expect("computed for this regime"),
                    ),
                };
                EquationState {
                    forest: EquationForest::stumps(j, config.n_trees, rows),
                    split,
                    tree_prior: TreePriorParams {
                        gamma: config.tree_prior.gamma,
                        beta: config.tree_prior.beta,
                        tau2,
                    },
                    stats: ForestSweepStats::default(),
                }
            })
            .collect();
        let var: Vec<f64> = (0..n).map(|j| column_variance(&design.y, j)).collect();
        let vol = FactorVolState::new(n, config.factor_count(n), rows, config.volatility, &var);
        Ok(SamplerState {
            sweep: 0,
            equations,
            vol,
        })
    }

    /// T x n matrix Y - G(X).
    pub fn tree_residuals(&self, design: &DesignPair) -> DMatrix<f64> {
        let mut e = design.y.clone();
        for (j, eq) in self.equations.iter().enumerate() {
            for t in 0..e.nrows() {
                e[(t, j)] -= eq.forest.fit_cache[t];
            }
        }
        e
    }
}

/// Advance `state` by one sweep. On error `state` is left at its value before the sweep.
pub fn gibbs_sweep(state: &mut SamplerState, design: &DesignPair, config: &SamplerConfig) -> Result<()> {
    let mut next = state.clone();
    let sweep = next.sweep as u64;
    let seed = config.seed;
    let mode = config.parallelism;
    let k = design.n_predictors();
    {
        let vol = &next.vol;
        let refresh = next.sweep > 0 && next.sweep.is_multiple_of(REFRESH_EVERY);
        for_each_mut(mode, &mut next.equations, |j, eq| {
            let y = design.y.column(j);
            let common = vol.common_component(j);
            let target: Vec<f64> = (0..y.len()).map(|t| y[t] - common[t]).collect();
            let prec = vol.precisions(j);
            if refresh {
                eq.forest.refresh(&design.x);
            }
            let s = eq.split.s.clone();
            let stats = update_forest(&mut eq.forest, &target, &prec, &eq.tree_prior, &s, &design.x, seed, sweep);
            eq.stats.proposed += stats.proposed;
            eq.stats.accepted += stats.accepted;
            let mut rng = substream(seed, &[stage::TREES, sweep, j as u64, u64::MAX]);
            eq.split.update(eq.forest.split_counts(k), &mut rng);
        });
    }
    let resid = next.tree_residuals(design);
    next.vol.update_loadings(&resid, seed, sweep, mode)?;
    next.vol.update_factors(&resid, seed, sweep, mode)?;
    next.vol.update_volatility(&resid, seed, sweep, mode)?;
    next.sweep += 1;
    *state = next;
    Ok(())
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub forests: Vec<Vec<RegressionTree>>,
    pub loadings: DMatrix<f64>,
    pub sv: Vec<SvParams>,
    /// Log-variances of the n + r series at the last sample period.
    pub terminal_log_var: Vec<f64>,
    pub split_probs: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub split_counts: Vec<Vec<usize>>,
}

impl Draw {
    fn from_state(state: &SamplerState) -> Self {
        Draw {
            forests: state.equations.iter().map(|e| e.forest.trees.clone()).collect(),
            loadings: state.vol.loadings.clone(),
            sv: state.vol.sv.clone(),
            terminal_log_var: state.vol.terminal_log_var(),
            split_probs: state.equations.iter().map(|e| e.split.s.clone()).collect(),
            lambda: state.equations.iter().map(|e| e.split.lambda).collect(),
            split_counts: state.equations.iter().map(|e| e.split.counts.clone()).collect(),
        }
    }

    /// Forest prediction of equation `j` at lag vector `xrow`.
    pub fn mean(&self, j: usize, xrow: &[f64]) -> f64 {
        self.forests[j].iter().map(|t| t.evaluate(xrow)).sum()
    }
}

/// Retained draws plus what is needed to forecast from the end of the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub names: Vec<String>,
    pub lag_order: usize,
    pub volatility: Volatility,
    pub scaling: Vec<Scaling>,
    /// Last `lag_order` observations in standardized units, oldest first.
    pub recent: DMatrix<f64>,
    pub draws: Vec<Draw>,
    pub acceptance: Vec<ForestSweepStats>,
}

impl ChainOutput {
    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.names.len() * self.lag_order
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn write_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: SamplerConfig,
    pub state: SamplerState,
    pub draws: Vec<Draw>,
}

impl Checkpoint {
    pub fn read<P: AsRef<Path>>(path: P) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cp.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "checkpoint schema version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                cp.schema_version
            )));
        }
        Ok(cp)
    }

    fn write(&self, path: &Path) -> std::io::Result<()> {
        let tmp = path.with_extension("tmp");
        let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        serde_json::to_writer(&mut file, self)?;
        file.flush()?;
        drop(file);
        std::fs::rename(tmp, path)
    }
}

/// Where and how often to checkpoint.
#[derive(Debug, Clone, Default)]
pub struct ChainOptions {
    pub checkpoint_path: Option<PathBuf>,
    /// Stop after this many total sweeps (for tests of interrupted runs).
    pub stop_after: Option<usize>,
}

/// Run burn-in and retained sweeps on a standardized panel.
pub fn run_chain(config: &SamplerConfig, panel: &TimeSeriesPanel) -> Result<ChainOutput> {
    run_chain_with(config, panel, &ChainOptions::default(), None)
}

/// Run or resume a chain. With `resume`, sampling continues from the
/// checkpointed state and reproduces the uninterrupted run exactly.
pub fn run_chain_with(
    config: &SamplerConfig,
    panel: &TimeSeriesPanel,
    options: &ChainOptions,
    resume: Option<Checkpoint>,
) -> Result<ChainOutput> {
    config.validate()?;
    let design = build_design(panel, config.lags)?;
    let (mut state, mut draws) = match resume {
        Some(cp) => {
            if cp.config != *config {
                return Err(Error::Config("checkpoint was written with a different configuration".into()));
            }
            (cp.state, cp.draws)
        }
        None => (SamplerState::initial(config, panel, &design)?, Vec::with_capacity(config.n_save)),
    };
    let total = config.total_sweeps();
    let limit = options.stop_after.map_or(total, |s| s.min(total));
    while state.sweep < limit {
        gibbs_sweep(&mut state, &design, config)?;
        let done = state.sweep;
        if done > config.n_burn && (done - config.n_burn).is_multiple_of(config.thin) {
            draws.push(Draw::from_state(&state));
        }
        let due = config.checkpoint_every > 0 && done % config.checkpoint_every == 0;
        if let Some(path) = options.checkpoint_path.as_deref().filter(|_| due || done == limit) {
            let cp = Checkpoint {
                schema_version: CHECKPOINT_SCHEMA_VERSION,
                config: config.clone(),
                state: state.clone(),
                draws: draws.clone(),
            };
            cp.write(path).map_err(|source| Error::Checkpoint {
                completed_sweeps: done,
                source,
            })?;
        }
    }
    let t = panel.n_obs();
    Ok(ChainOutput {
        names: panel.names.clone(),
        lag_order: config.lags,
        volatility: config.volatility,
        scaling: panel.scaling_or_identity(),
        recent: panel.values.rows(t - config.lags, config.lags).into_owned(),
        draws,
        acceptance: state.equations.iter().map(|e| e.stats).collect(),
    })
}
