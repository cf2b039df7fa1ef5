//! Posterior predictive simulation and density scores.
//!
//! Paths are simulated in standardized units. Scores are reported in original
//! units by adding the log-Jacobian of the de-standardization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{next_lag_vector, Scaling};
use crate::dist::{log_mean_exp, std_normal, LN_2PI};
use crate::error::{Error, Result};
use crate::factor::{FactorVolState, Volatility};
use crate::gibbs::ChainOutput;
use crate::par::{map_range, Parallelism};
use crate::rng::{stage, substream};

/// One posterior draw's predictive moments and simulated path, horizon by horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDraw {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub path: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub horizon: usize,
    pub scaling: Vec<Scaling>,
    pub draws: Vec<PredictiveDraw>,
    /// Draws dropped because a predictive covariance was not positive definite.
    pub excluded: usize,
}

/// Simulate `h_max`-step paths from every retained draw, starting after the
/// rows of `recent` (standardized, oldest first, at least `lag_order` rows).
/// Draw `m` uses the substream `(seed, FORECAST, m)`.
pub fn simulate_forecast_paths(
    chain: &ChainOutput,
    recent: &DMatrix<f64>,
    h_max: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<ForecastSet> {
    let p = chain.lag_order;
    let n = chain.n_vars();
    if recent.nrows() < p || recent.ncols() != n {
        return Err(Error::InsufficientData(format!(
            "forecasting needs {p} recent rows of {n} variables, got {}x{}",
            recent.nrows(),
            recent.ncols()
        )));
    }
    if h_max == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    let start = recent.rows(recent.nrows() - p, p).into_owned();
    let sims = map_range(mode, chain.draws.len(), |m| {
        let draw = &chain.draws[m];
        let mut rng = substream(seed, &[stage::FORECAST, m as u64]);
        let mut history = start.clone();
        let mut h = draw.terminal_log_var.clone();
        let mut out = PredictiveDraw {
            means: Vec::with_capacity(h_max),
            covariances: Vec::with_capacity(h_max),
            path: Vec::with_capacity(h_max),
        };
        for _ in 0..h_max {
            if chain.volatility == Volatility::Stochastic {
                for (hi, params) in h.iter_mut().zip(&draw.sv) {
                    *hi = params.step(*hi, &mut rng);
                }
            }
            let cov = FactorVolState::covariance(&draw.loadings, &h);
            let chol = cov.clone().cholesky()?;
            let xrow = next_lag_vector(&history, p);
            let mean: Vec<f64> = (0..n).map(|j| draw.mean(j, &xrow)).collect();
            let z = DVector::from_fn(n, |_, _| std_normal(&mut rng));
            let shock = chol.l() * z;
            let y: Vec<f64> = (0..n).map(|j| mean[j] + shock[j]).collect();
            history = shift_in(&history, &y);
            out.means.push(mean);
            out.covariances.push(cov);
            out.path.push(y);
        }
        Some(out)
    });
    let total = sims.len();
    let draws: Vec<PredictiveDraw> = sims.into_iter().flatten().collect();
    let excluded = total - draws.len();
    if excluded > 0 {
        log::warn!("{excluded} of {total} forecast draws excluded: covariance not positive definite");
    }
    Ok(ForecastSet {
        horizon: h_max,
        scaling: chain.scaling.clone(),
        draws,
        excluded,
    })
}

fn shift_in(history: &DMatrix<f64>, y: &[f64]) -> DMatrix<f64> {
    let (p, n) = history.shape();
    DMatrix::from_fn(p, n, |r, c| if r + 1 < p { history[(r + 1, c)] } else { y[c] })
}

impl ForecastSet {
    /// Predictive mean in original units, per horizon and variable.
    pub fn point_forecasts(&self) -> Vec<Vec<f64>> {
        let n = self.scaling.len();
        let count = self.draws.len() as f64;
        (0..self.horizon)
            .map(|h| {
                (0..n)
                    .map(|j| {
                        let m = self.draws.iter().map(|d| d.means[h][j]).sum::<f64>() / count;
                        self.scaling[j].to_original(m)
                    })
                    .collect()
            })
            .collect()
    }

    /// Quantile of the simulated paths in original units.
    pub fn path_quantile(&self, h: usize, j: usize, q: f64) -> f64 {
        let mut v: Vec<f64> = self.draws.iter().map(|d| d.path[h][j]).collect();
        v.sort_by(f64::total_cmp);
        let idx = ((v.len() - 1) as f64 * q).round() as usize;
        self.scaling[j].to_original(v[idx])
    }

    /// Gaussian components (standardized units) at horizon index `h`.
    pub fn components(&self, h: usize) -> Vec<(Vec<f64>, DMatrix<f64>)> {
        self.draws.iter().map(|d| (d.means[h].clone(), d.covariances[h].clone())).collect()
    }
}

/// Multivariate normal log-density, `None` when `cov` is not positive definite.
pub fn mvn_logpdf(y: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Option<f64> {
    let n = y.len();
    let chol = cov.clone().cholesky()?;
    let d = DVector::from_fn(n, |i, _| y[i] - mean[i]);
    let z = chol.l().solve_lower_triangular(&d)?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-0.5 * (n as f64 * LN_2PI + log_det + z.norm_squared()))
}

/// Log of the average Gaussian density over components. Non-PD components are skipped.
pub fn lpds_joint(y: &[f64], components: &[(Vec<f64>, DMatrix<f64>)]) -> Result<f64> {
    let terms: Vec<f64> = components
        .iter()
        .filter_map(|(m, c)| mvn_logpdf(y, m, c))
        .collect();
    if terms.is_empty() {
        return Err(Error::NotPositiveDefinite("every predictive covariance".into()));
    }
    Ok(log_mean_exp(&terms))
}

/// Univariate version of [`lpds_joint`] with components `(mean, variance)`.
pub fn lpds_marginal(y: f64, components: &[(f64, f64)]) -> Result<f64> {
    let terms: Vec<f64> = components
        .iter()
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .map(|&(m, v)| -0.5 * (LN_2PI + v.ln() + (y - m) * (y - m) / v))
        .collect();
    if terms.is_empty() {
        return Err(Error::NotPositiveDefinite("every predictive variance".into()));
    }
    Ok(log_mean_exp(&terms))
}

/// Joint score of an observation in original units given standardized components.
pub fn lpds_joint_original(y: &[f64], components: &[(Vec<f64>, DMatrix<f64>)], scaling: &[Scaling]) -> Result<f64> {
    let z: Vec<f64> = y.iter().zip(scaling).map(|(v, s)| s.to_standard(*v)).collect();
    let log_jac: f64 = scaling.iter().map(|s| s.scale.ln()).sum();
    Ok(lpds_joint(&z, components)? - log_jac)
}

/// Marginal score of variable `j` in original units.
pub fn lpds_marginal_original(y: f64, j: usize, components: &[(Vec<f64>, DMatrix<f64>)], scaling: &[Scaling]) -> Result<f64> {
    let margins: Vec<(f64, f64)> = components.iter().map(|(m, c)| (m[j], c[(j, j)])).collect();
    Ok(lpds_marginal(scaling[j].to_standard(y), &margins)? - scaling[j].scale.ln())
}

pub fn rmse(forecasts: &[f64], actuals: &[f64]) -> f64 {
    let ss: f64 = forecasts.iter().zip(actuals).map(|(f, a)| (f - a) * (f - a)).sum();
    (ss / forecasts.len() as f64).sqrt()
}

/// RMSE of the model relative to the benchmark; below one favours the model.
pub fn rmspe_ratio(forecasts: &[f64], actuals: &[f64], benchmark: &[f64]) -> Result<f64> {
    if forecasts.is_empty() || forecasts.len() != actuals.len() || benchmark.len() != actuals.len() {
        return Err(Error::Length {
            needed: actuals.len().max(1),
            got: forecasts.len().min(benchmark.len()),
        });
    }
    let bench = rmse(benchmark, actuals);
    if bench == 0.0 {
        return Err(Error::UndefinedRatio("benchmark RMSE is zero".into()));
    }
    Ok(rmse(forecasts, actuals) / bench)
}

/// Fraction of retained draws in which each predictor splits at least once,
/// per equation.
pub fn pip(chain: &ChainOutput) -> Vec<Vec<f64>> {
    let n = chain.n_vars();
    let k = chain.n_predictors();
    let count = chain.draws.len() as f64;
    (0..n)
        .map(|j| {
            (0..k)
                .map(|q| chain.draws.iter().filter(|d| d.split_counts[j][q] >= 1).count() as f64 / count)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::Draw;
    use crate::sv::SvParams;
    use crate::tree::{RegressionTree, SplitRule};

    fn chain_with(draws: Vec<Draw>, n: usize, p: usize, volatility: Volatility) -> ChainOutput {
        ChainOutput {
            names: (0..n).map(|i| format!("v{i}")).collect(),
            lag_order: p,
            volatility,
            scaling: vec![Scaling::IDENTITY; n],
            recent: DMatrix::zeros(p, n),
            draws,
            acceptance: Vec::new(),
        }
    }

    fn simple_draw(forest: Vec<RegressionTree>, sv: SvParams, log_var: f64) -> Draw {
        Draw {
            forests: vec![forest],
            loadings: DMatrix::zeros(1, 0),
            sv: vec![sv],
            terminal_log_var: vec![log_var],
            split_probs: vec![vec![1.0]],
            lambda: vec![1.0],
            split_counts: vec![vec![0]],
        }
    }

    #[test]
    fn pure_noise_predictive_is_standard_normal() {
        let draw = simple_draw(vec![RegressionTree::stump(0.0)], SvParams::default(), 0.0);
        let chain = chain_with(vec![draw; 100_000], 1, 1, Volatility::Homoskedastic);
        let set = simulate_forecast_paths(&chain, &DMatrix::zeros(1, 1), 1, 3, Parallelism::Serial).unwrap();
        let ys: Vec<f64> = set.draws.iter().map(|d| d.path[0][0]).collect();
        let n = ys.len() as f64;
        let m = ys.iter().sum::<f64>() / n;
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m.abs() < 0.01);
        assert!((v - 1.0).abs() < 0.02);
    }

    #[test]
    fn frozen_volatility_stays_at_terminal_value() {
        let sv = SvParams { mu: 0.0, phi: 1.0, sigma2: 0.0 };
        let draw = simple_draw(vec![RegressionTree::stump(0.0)], sv, 0.7);
        let chain = chain_with(vec![draw; 3], 1, 1, Volatility::Stochastic);
        let set = simulate_forecast_paths(&chain, &DMatrix::zeros(1, 1), 5, 1, Parallelism::Serial).unwrap();
        for d in &set.draws {
            for c in &d.covariances {
                assert!((c[(0, 0)] - 0.7f64.exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_step_recursion_matches_hand_rolled_simulation() {
        // y_{t+1} = (y_t <= 0 ? -1 : 2) + e, e ~ N(0, 0.25).
        let mut tree = RegressionTree::stump(0.0);
        let (l, r) = tree.grow(0, SplitRule { predictor: 0, cutpoint: 0.0 });
        tree.set_leaf_value(l, -1.0);
        tree.set_leaf_value(r, 2.0);
        let draw = simple_draw(vec![tree], SvParams::default(), 0.25f64.ln());
        let reps = 40_000;
        let chain = chain_with(vec![draw; reps], 1, 1, Volatility::Homoskedastic);
        let start = DMatrix::from_element(1, 1, 0.5);
        let set = simulate_forecast_paths(&chain, &start, 2, 9, Parallelism::Serial).unwrap();
        let two: Vec<f64> = set.draws.iter().map(|d| d.path[1][0]).collect();

        let mut rng = substream(1234, &[1]);
        let oracle: Vec<f64> = (0..reps)
            .map(|_| {
                let y1 = 2.0 + 0.5 * std_normal(&mut rng);
                let m2 = if y1 <= 0.0 { -1.0 } else { 2.0 };
                m2 + 0.5 * std_normal(&mut rng)
            })
            .collect();
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
        };
        let (ma, va) = stats(&two);
        let (mb, vb) = stats(&oracle);
        let se = ((va + vb) / reps as f64).sqrt();
        assert!((ma - mb).abs() < 3.0 * se);
        assert!((va - vb).abs() < 3.0 * (2.0 * (va * va + vb * vb) / reps as f64).sqrt());
    }

    #[test]
    fn parallel_forecast_matches_serial() {
        let draw = simple_draw(vec![RegressionTree::stump(0.3)], SvParams::default(), 0.0);
        let chain = chain_with(vec![draw; 50], 1, 1, Volatility::Stochastic);
        let a = simulate_forecast_paths(&chain, &DMatrix::zeros(1, 1), 4, 5, Parallelism::Serial).unwrap();
        let b = simulate_forecast_paths(&chain, &DMatrix::zeros(1, 1), 4, 5, Parallelism::Pool).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_pd_draws_are_excluded() {
        let good = simple_draw(vec![RegressionTree::stump(0.0)], SvParams::default(), 0.0);
        let bad = simple_draw(vec![RegressionTree::stump(0.0)], SvParams::default(), f64::NEG_INFINITY);
        let chain = chain_with(vec![good, bad], 1, 1, Volatility::Homoskedastic);
        let set = simulate_forecast_paths(&chain, &DMatrix::zeros(1, 1), 1, 5, Parallelism::Serial).unwrap();
        assert_eq!(set.excluded, 1);
        assert_eq!(set.draws.len(), 1);
    }

    #[test]
    fn lpds_examples() {
        let one = vec![(vec![0.0], DMatrix::from_element(1, 1, 1.0))];
        let v = lpds_joint(&[0.0], &one).unwrap();
        assert!((v + 0.5 * LN_2PI).abs() < 1e-15);
        assert!((v + 0.9189).abs() < 1e-4);
        let many = vec![one[0].clone(); 7];
        assert!((lpds_joint(&[0.0], &many).unwrap() - v).abs() < 1e-14);
        assert_eq!(lpds_marginal(0.0, &[(0.0, 1.0)]).unwrap(), v);
        let bad = vec![(vec![0.0], DMatrix::from_element(1, 1, -1.0))];
        assert!(matches!(lpds_joint(&[0.0], &bad), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn diagonal_marginals_sum_to_joint() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 1.3]));
        let mean = vec![0.1, -0.4, 2.0];
        let y = [0.3, 0.2, 1.0];
        let comp = vec![(mean.clone(), cov.clone())];
        let joint = lpds_joint(&y, &comp).unwrap();
        let sum: f64 = (0..3).map(|j| lpds_marginal(y[j], &[(mean[j], cov[(j, j)])]).unwrap()).sum();
        assert!((joint - sum).abs() < 1e-12);
    }

    #[test]
    fn destandardized_score_matches_direct_evaluation() {
        let scaling = vec![Scaling { center: 1.0, scale: 2.0 }, Scaling { center: -3.0, scale: 0.5 }];
        let comps = vec![
            (vec![0.1, 0.2], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8])),
            (vec![-0.5, 0.0], DMatrix::from_row_slice(2, 2, &[0.6, -0.1, -0.1, 1.1])),
        ];
        let y = [1.7, -2.6];
        let scaled = lpds_joint_original(&y, &comps, &scaling).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let direct: Vec<(Vec<f64>, DMatrix<f64>)> = comps
            .iter()
            .map(|(m, c)| {
                (
                    m.iter().zip(&scaling).map(|(v, s)| s.to_original(*v)).collect(),
                    &d * c * &d,
                )
            })
            .collect();
        assert!((scaled - lpds_joint(&y, &direct).unwrap()).abs() < 1e-8);
        let marg = lpds_marginal_original(y[1], 1, &comps, &scaling).unwrap();
        let direct_m: Vec<(f64, f64)> = direct.iter().map(|(m, c)| (m[1], c[(1, 1)])).collect();
        assert!((marg - lpds_marginal(y[1], &direct_m).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn rmspe_examples() {
        let actual = [1.0, 2.0];
        assert_eq!(rmspe_ratio(&[0.0, 3.0], &actual, &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(rmspe_ratio(&actual, &actual, &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(rmspe_ratio(&[2.0, 3.0], &actual, &[3.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(rmspe_ratio(&[0.0, 0.0], &actual, &actual), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn pip_counts() {
        let mut draws = Vec::new();
        for i in 0..500 {
            let mut d = simple_draw(vec![RegressionTree::stump(0.0)], SvParams::default(), 0.0);
            d.split_counts = vec![vec![3, 0, usize::from(i % 2 == 0)]];
            draws.push(d);
        }
        let mut chain = chain_with(draws, 1, 3, Volatility::Homoskedastic);
        chain.lag_order = 3;
        assert_eq!(pip(&chain), vec![vec![1.0, 0.0, 0.5]]);
    }
}
