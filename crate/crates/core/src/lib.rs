//! Tree-based Bayesian vector autoregression.
//!
//! Conditional means are sums of regression trees fit equation by equation,
//! with Dirichlet priors on split-variable probabilities (uniform, sparse or
//! lag-structured). Errors follow a factor model with stochastic volatility
//! and horseshoe-shrunk loadings.

pub mod bart;
pub mod data;
pub mod dist;
pub mod error;
pub mod evaluation;
pub mod factor;
pub mod forecast;
pub mod gibbs;
pub mod par;
pub mod rng;
pub mod split_prior;
pub mod sv;
pub mod tree;

pub use data::{build_design, DesignPair, Scaling, TimeSeriesPanel, TransformCode};
pub use error::{Error, Result};
pub use evaluation::{expanding_window, EvaluationReport, EvaluationSettings};
pub use factor::Volatility;
pub use forecast::{lpds_joint, lpds_marginal, pip, rmspe_ratio, simulate_forecast_paths, ForecastSet};
pub use gibbs::{run_chain, ChainOutput, SamplerConfig};
pub use par::Parallelism;
pub use split_prior::SplitRegime;
pub use tree::{RegressionTree, TreePriorParams};
