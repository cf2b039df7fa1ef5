//! Run configuration: one TOML file with a section per stage.
//!
//! Parsing fills every default explicitly so the resolved value can be
//! written into the run manifest and replayed without the original file.

use std::path::{Path, PathBuf};

use bartvar::evaluation::EvaluationSettings;
use bartvar::gibbs::TreePriorSettings;
use bartvar::par::Parallelism;
use bartvar::{Error, Result, SamplerConfig, SplitRegime, Volatility};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub tree_prior: TreePriorSection,
    #[serde(default)]
    pub split_prior: SplitPriorSection,
    #[serde(default)]
    pub forecast: ForecastSection,
    #[serde(default)]
    pub evaluation: Option<EvaluationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Raw panel CSV: `date,NAME1,NAME2,...`.
    pub panel: PathBuf,
    /// Sidecar `mnemonic,code` file; without it every series is used in levels.
    #[serde(default)]
    pub transform_codes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub n_trees: usize,
    pub lags: usize,
    pub n_factors: Option<usize>,
    pub volatility: Volatility,
    pub n_burn: usize,
    pub n_save: usize,
    pub thin: usize,
    /// Sweeps between checkpoints during `fit`; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let base = SamplerConfig::new(0);
        SamplerSection {
            n_trees: base.n_trees,
            lags: base.lags,
            n_factors: None,
            volatility: base.volatility,
            n_burn: base.n_burn,
            n_save: base.n_save,
            thin: base.thin,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreePriorSection {
    pub gamma: f64,
    pub beta: f64,
    /// Leaf sd before division by sqrt(M); calibrated from the data when absent.
    pub leaf_sd: Option<f64>,
}

impl Default for TreePriorSection {
    fn default() -> Self {
        let base = TreePriorSettings::default();
        TreePriorSection {
            gamma: base.gamma,
            beta: base.beta,
            leaf_sd: base.leaf_sd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeName {
    Uniform,
    Sparse,
    Minnesota,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitPriorSection {
    pub regime: RegimeName,
    /// Minnesota own-lag tightness.
    pub lambda1: f64,
    /// Minnesota cross-variable tightness.
    pub lambda2: f64,
    /// Sparse concentration (initial value when it is sampled).
    pub lambda: f64,
    pub update_lambda: bool,
}

impl Default for SplitPriorSection {
    fn default() -> Self {
        SplitPriorSection {
            regime: RegimeName::Minnesota,
            lambda1: 1.0,
            lambda2: 0.5,
            lambda: 1.0,
            update_lambda: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub horizon: usize,
    /// Lower and upper path quantiles reported next to the median.
    pub interval: (f64, f64),
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection {
            horizon: 4,
            interval: (0.05, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// First forecast origin: rows before it form the initial training window.
    pub t0: usize,
    #[serde(default = "one")]
    pub h_max: usize,
    #[serde(default = "one")]
    pub refit_stride: usize,
    #[serde(default)]
    pub rmspe: bool,
    /// CSV with columns origin,horizon,variable,mean.
    #[serde(default)]
    pub benchmark: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_error(field, format!("must be positive, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(field_error(field, "must be at least 1"))
    }
}

impl RunConfig {
    /// Parse, resolve relative paths against `base`, and validate.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.data.panel);
        if let Some(p) = self.data.transform_codes.as_mut() {
            join(p);
        }
        if let Some(p) = self.evaluation.as_mut().and_then(|e| e.benchmark.as_mut()) {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        at_least_one("sampler.n_trees", s.n_trees)?;
        at_least_one("sampler.lags", s.lags)?;
        at_least_one("sampler.n_save", s.n_save)?;
        at_least_one("sampler.thin", s.thin)?;
        let t = &self.tree_prior;
        if !(t.gamma > 0.0 && t.gamma < 1.0) {
            return Err(field_error("tree_prior.gamma", format!("must lie in (0, 1), got {}", t.gamma)));
        }
        if !(t.beta >= 0.0 && t.beta.is_finite()) {
            return Err(field_error("tree_prior.beta", format!("must be non-negative, got {}", t.beta)));
        }
        if let Some(sd) = t.leaf_sd {
            positive("tree_prior.leaf_sd", sd)?;
        }
        let sp = &self.split_prior;
        match sp.regime {
            RegimeName::Uniform => {}
            RegimeName::Sparse => positive("split_prior.lambda", sp.lambda)?,
            RegimeName::Minnesota => {
                positive("split_prior.lambda1", sp.lambda1)?;
                positive("split_prior.lambda2", sp.lambda2)?;
            }
        }
        at_least_one("forecast.horizon", self.forecast.horizon)?;
        let (lo, hi) = self.forecast.interval;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(field_error("forecast.interval", format!("needs 0 <= lower < upper <= 1, got ({lo}, {hi})")));
        }
        if let Some(e) = &self.evaluation {
            at_least_one("evaluation.h_max", e.h_max)?;
            at_least_one("evaluation.refit_stride", e.refit_stride)?;
            if e.rmspe && e.benchmark.is_none() {
                return Err(field_error("evaluation.benchmark", "required when rmspe = true"));
            }
        }
        self.sampler_config(Parallelism::Serial).validate()
    }

    pub fn regime(&self) -> SplitRegime {
        let sp = &self.split_prior;
        match sp.regime {
            RegimeName::Uniform => SplitRegime::Uniform,
            RegimeName::Sparse => SplitRegime::Sparse {
                lambda: sp.lambda,
                update_lambda: sp.update_lambda,
            },
            RegimeName::Minnesota => SplitRegime::Minnesota {
                lambda1: sp.lambda1,
                lambda2: sp.lambda2,
            },
        }
    }

    pub fn sampler_config(&self, parallelism: Parallelism) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            n_trees: s.n_trees,
            lags: s.lags,
            n_factors: s.n_factors,
            regime: self.regime(),
            volatility: s.volatility,
            n_burn: s.n_burn,
            n_save: s.n_save,
            thin: s.thin,
            seed: self.seed,
            tree_prior: TreePriorSettings {
                gamma: self.tree_prior.gamma,
                beta: self.tree_prior.beta,
                leaf_sd: self.tree_prior.leaf_sd,
            },
            parallelism,
            checkpoint_every: s.checkpoint_every,
        }
    }

    pub fn evaluation_settings(&self, parallelism: Parallelism) -> Result<EvaluationSettings> {
        let e = self
            .evaluation
            .as_ref()
            .ok_or_else(|| Error::Config("evaluation: section is required for `evaluate`".into()))?;
        Ok(EvaluationSettings {
            t0: e.t0,
            h_max: e.h_max,
            refit_stride: e.refit_stride,
            rmspe: e.rmspe,
            benchmark: e.benchmark.clone(),
            parallelism,
        })
    }

    /// Every input file the configuration points at.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut files = vec![self.data.panel.clone()];
        files.extend(self.data.transform_codes.clone());
        if let Some(p) = self.evaluation.as_ref().and_then(|e| e.benchmark.clone()) {
            files.push(p);
        }
        files
    }
}
