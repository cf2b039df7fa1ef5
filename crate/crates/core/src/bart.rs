//! Bayesian backfitting for a single equation's forest.
//!
//! Each tree is updated against the partial residual of the other trees and
//! the common factor component. Observation precisions enter the leaf
//! marginal likelihood, so the same code serves the stochastic-volatility and
//! homoskedastic error models.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{std_normal, LN_2PI};
use crate::rng::{stage, substream};
use crate::tree::{propose_move, MoveKind, RegressionTree, TreePriorParams};

/// Sweeps between full recomputations of the cached forest fit.
pub const REFRESH_EVERY: usize = 100;

/// Trees for one equation plus cached per-tree fits and their running sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationForest {
    pub equation: usize,
    pub trees: Vec<RegressionTree>,
    pub tree_fits: Vec<Vec<f64>>,
    pub fit_cache: Vec<f64>,
}

impl EquationForest {
    /// `n_trees` stumps at zero over `n_rows` observations.
    pub fn stumps(equation: usize, n_trees: usize, n_rows: usize) -> Self {
        EquationForest {
            equation,
            trees: vec![RegressionTree::stump(0.0); n_trees],
            tree_fits: vec![vec![0.0; n_rows]; n_trees],
            fit_cache: vec![0.0; n_rows],
        }
    }

    pub fn from_trees(equation: usize, trees: Vec<RegressionTree>, x: &DMatrix<f64>) -> Self {
        let mut forest = EquationForest {
            equation,
            tree_fits: Vec::new(),
            fit_cache: Vec::new(),
            trees,
        };
        forest.refresh(x);
        forest
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Recompute every tree fit and the running sum from scratch.
    pub fn refresh(&mut self, x: &DMatrix<f64>) {
        self.tree_fits = self.trees.iter().map(|t| t.predict(x)).collect();
        self.fit_cache = direct_sum(&self.tree_fits, x.nrows());
    }

    /// Largest absolute gap between the cached sum and a direct re-evaluation.
    pub fn cache_drift(&self, x: &DMatrix<f64>) -> f64 {
        let fits: Vec<Vec<f64>> = self.trees.iter().map(|t| t.predict(x)).collect();
        direct_sum(&fits, x.nrows())
            .iter()
            .zip(&self.fit_cache)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Forest prediction at one lag vector.
    pub fn evaluate(&self, xrow: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.evaluate(xrow)).sum()
    }

    /// Number of internal nodes using each of the `k` predictors.
    pub fn split_counts(&self, k: usize) -> Vec<usize> {
        count_splits(&self.trees, k)
    }
}

fn direct_sum(fits: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
    let mut total = vec![0.0; n_rows];
    for fit in fits {
        for (acc, v) in total.iter_mut().zip(fit) {
            *acc += v;
        }
    }
    total
}

/// Row-wise `F * loadings'`.
pub fn common_component(factors: &DMatrix<f64>, loadings: &[f64]) -> Vec<f64> {
    (0..factors.nrows())
        .map(|t| (0..factors.ncols()).map(|c| factors[(t, c)] * loadings[c]).sum())
        .collect()
}

/// Response minus the factor component and every tree except `tree`.
pub fn partial_residuals(
    y: &[f64],
    factors: &DMatrix<f64>,
    loadings: &[f64],
    forest: &EquationForest,
    tree: usize,
) -> Vec<f64> {
    let common = common_component(factors, loadings);
    y.iter()
        .enumerate()
        .map(|(t, yt)| yt - common[t] - forest.fit_cache[t] + forest.tree_fits[tree][t])
        .collect()
}

/// Sufficient statistics of a leaf: sum of precisions and of precision-weighted residuals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafStats {
    pub sum_w: f64,
    pub sum_wr: f64,
}

impl LeafStats {
    pub fn over(rows: &[usize], residuals: &[f64], precisions: &[f64]) -> Self {
        rows.iter().fold(LeafStats::default(), |acc, &t| LeafStats {
            sum_w: acc.sum_w + precisions[t],
            sum_wr: acc.sum_wr + precisions[t] * residuals[t],
        })
    }

    /// Partition-dependent part of the leaf marginal likelihood. Finite for zero precision.
    pub fn log_core(&self, tau2: f64) -> f64 {
        let post_prec = 1.0 / tau2 + self.sum_w;
        -0.5 * (tau2 * self.sum_w).ln_1p() + 0.5 * self.sum_wr * self.sum_wr / post_prec
    }

    /// Posterior mean and variance of the leaf value.
    pub fn posterior(&self, tau2: f64) -> (f64, f64) {
        let v = 1.0 / (1.0 / tau2 + self.sum_w);
        (v * self.sum_wr, v)
    }
}

/// Log marginal likelihood of the residuals in one leaf with the leaf mean
/// integrated against N(0, tau2). Empty leaves contribute 0.
pub fn leaf_marginal_loglik(residuals: &[f64], precisions: &[f64], tau2: f64) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let rows: Vec<usize> = (0..residuals.len()).collect();
    let stats = LeafStats::over(&rows, residuals, precisions);
    let fixed: f64 = residuals
        .iter()
        .zip(precisions)
        .map(|(r, w)| -0.5 * LN_2PI + 0.5 * w.ln() - 0.5 * w * r * r)
        .sum();
    stats.log_core(tau2) + fixed
}

/// Sum of leaf core terms; differences between trees equal differences of
/// the full marginal likelihood.
fn tree_log_core(
    tree: &RegressionTree,
    rows: &[Vec<usize>],
    residuals: &[f64],
    precisions: &[f64],
    tau2: f64,
) -> f64 {
    tree.leaves()
        .into_iter()
        .map(|leaf| LeafStats::over(&rows[leaf], residuals, precisions).log_core(tau2))
        .sum()
}

/// Outcome of one Metropolis-Hastings step on a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub kind: Option<MoveKind>,
    pub accepted: bool,
}

/// One GROW / PRUNE / CHANGE step on `tree` with the leaf values integrated out.
/// Leaf values are left untouched; call [`draw_leaf_means`] afterwards.
pub fn mh_step_tree<R: Rng + ?Sized>(
    tree: &mut RegressionTree,
    residuals: &[f64],
    precisions: &[f64],
    params: &TreePriorParams,
    s: &[f64],
    x: &DMatrix<f64>,
    rng: &mut R,
) -> StepOutcome {
    let rows = tree.node_rows(x);
    let Some(proposal) = propose_move(tree, s, x, &rows, rng) else {
        return StepOutcome {
            kind: None,
            accepted: false,
        };
    };
    let new_rows = proposal.tree.node_rows(x);
    let u: f64 = rng.random();
    if !proposal.tree.all_nodes_populated(&new_rows) {
        return StepOutcome {
            kind: Some(proposal.kind),
            accepted: false,
        };
    }
    let tau2 = params.tau2;
    let log_lik = tree_log_core(&proposal.tree, &new_rows, residuals, precisions, tau2)
        - tree_log_core(tree, &rows, residuals, precisions, tau2);
    let log_prior = proposal.tree.log_structure_prior_with_rows(params, s, x, &new_rows)
        - tree.log_structure_prior_with_rows(params, s, x, &rows);
    let log_alpha = log_lik + log_prior + proposal.log_ratio;
    // NaN compares false and rejects.
    let accepted = u.ln() < log_alpha;
    if accepted {
        *tree = proposal.tree;
    }
    StepOutcome {
        kind: Some(proposal.kind),
        accepted,
    }
}

/// Redraw every leaf value from its conjugate Gaussian conditional.
pub fn draw_leaf_means<R: Rng + ?Sized>(
    tree: &mut RegressionTree,
    residuals: &[f64],
    precisions: &[f64],
    tau2: f64,
    x: &DMatrix<f64>,
    rng: &mut R,
) {
    let rows = tree.node_rows(x);
    for leaf in tree.leaves() {
        let (mean, var) = LeafStats::over(&rows[leaf], residuals, precisions).posterior(tau2);
        tree.set_leaf_value(leaf, mean + var.sqrt() * std_normal(rng));
    }
}

/// Split counts per predictor summed over `trees`.
pub fn count_splits(trees: &[RegressionTree], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for tree in trees {
        tree.accumulate_split_counts(&mut counts);
    }
    counts
}

/// Acceptance tallies for one forest sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestSweepStats {
    pub proposed: usize,
    pub accepted: usize,
}

/// Backfit every tree once. `target` is the response net of the factor
/// component. Tree `m` draws from the substream tagged `(sweep, equation, m)`.
#[allow(clippy::too_many_arguments)]
pub fn update_forest(
    forest: &mut EquationForest,
    target: &[f64],
    precisions: &[f64],
    params: &TreePriorParams,
    s: &[f64],
    x: &DMatrix<f64>,
    seed: u64,
    sweep: u64,
) -> ForestSweepStats {
    let mut stats = ForestSweepStats::default();
    let mut residuals = vec![0.0; target.len()];
    for m in 0..forest.trees.len() {
        let mut rng = substream(seed, &[stage::TREES, sweep, forest.equation as u64, m as u64]);
        for (t, r) in residuals.iter_mut().enumerate() {
            *r = target[t] - forest.fit_cache[t] + forest.tree_fits[m][t];
        }
        let tree = &mut forest.trees[m];
        let outcome = mh_step_tree(tree, &residuals, precisions, params, s, x, &mut rng);
        if outcome.kind.is_some() {
            stats.proposed += 1;
        }
        if outcome.accepted {
            stats.accepted += 1;
        }
        draw_leaf_means(tree, &residuals, precisions, params.tau2, x, &mut rng);
        let new_fit = tree.predict(x);
        for (t, v) in new_fit.iter().enumerate() {
            forest.fit_cache[t] += v - forest.tree_fits[m][t];
        }
        forest.tree_fits[m] = new_fit;
    }
    stats
}

/// Leaf prior variance: the standardized response range spans four prior
/// standard deviations of the ensemble sum.
pub fn calibrate_tau2(y: &[f64], n_trees: usize) -> f64 {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let sd = if hi > lo { (hi - lo) / 4.0 } else { 1.0 };
    sd * sd / n_trees.max(1) as f64
}
