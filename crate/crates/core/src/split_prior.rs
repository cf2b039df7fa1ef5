//! Split-probability priors for one equation: uniform BART, sparse Dirichlet
//! with a hyperprior on its concentration, and the Minnesota-structured
//! Dirichlet whose scales decay with lag and shrink cross-variable lags.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{lag_of_column, variable_of_column, TimeSeriesPanel};
use crate::dist::dirichlet_log;
use crate::error::{Error, Result};

/// Own-lag scale grid used for prior-elicitation sweeps.
pub const LAMBDA1_GRID: [f64; 5] = [1.0, 3.0, 5.0, 10.0, 20.0];
/// Cross-lag scale grid used for prior-elicitation sweeps.
pub const LAMBDA2_GRID: [f64; 6] = [0.5, 1.0, 1.5, 2.5, 5.0, 10.0];

/// Points on the lambda / (lambda + k) grid used by [`update_lambda`].
pub const LAMBDA_GRID_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "lowercase")]
pub enum SplitRegime {
    Uniform,
    Sparse { lambda: f64, update_lambda: bool },
    Minnesota { lambda1: f64, lambda2: f64 },
}

impl SplitRegime {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            SplitRegime::Uniform => Ok(()),
            SplitRegime::Sparse { lambda, .. } => positive("lambda", lambda),
            SplitRegime::Minnesota { lambda1, lambda2 } => {
                positive("lambda1", lambda1)?;
                positive("lambda2", lambda2)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitRegime::Uniform => "uniform",
            SplitRegime::Sparse { .. } => "sparse",
            SplitRegime::Minnesota { .. } => "minnesota",
        }
    }
}

/// Split probabilities and Dirichlet state for one equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPriorState {
    pub regime: SplitRegime,
    pub s: Vec<f64>,
    pub log_s: Vec<f64>,
    pub phi: Vec<f64>,
    /// Current sparse concentration (sum of `phi` outside the uniform regime).
    pub lambda: f64,
    pub counts: Vec<usize>,
}

impl SplitPriorState {
    pub fn uniform(k: usize) -> Self {
        let s = vec![1.0 / k as f64; k];
        SplitPriorState {
            regime: SplitRegime::Uniform,
            log_s: s.iter().map(|p| p.ln()).collect(),
            s,
            phi: vec![1.0; k],
            lambda: k as f64,
            counts: vec![0; k],
        }
    }

    pub fn sparse(k: usize, lambda: f64, update_lambda: bool) -> Self {
        let s = vec![1.0 / k as f64; k];
        SplitPriorState {
            regime: SplitRegime::Sparse { lambda, update_lambda },
            log_s: s.iter().map(|p| p.ln()).collect(),
            s,
            phi: sparse_scales(k, lambda),
            lambda,
            counts: vec![0; k],
        }
    }

    /// Minnesota state for `equation`, starting `s` at its prior mean.
    pub fn minnesota(equation: usize, n: usize, p: usize, lambda1: f64, lambda2: f64, sigma2: &[f64]) -> Self {
        let phi = minnesota_scales(equation, n, p, lambda1, lambda2, sigma2);
        let total: f64 = phi.iter().sum();
        let s: Vec<f64> = phi.iter().map(|f| f / total).collect();
        SplitPriorState {
            regime: SplitRegime::Minnesota { lambda1, lambda2 },
            log_s: s.iter().map(|p| p.ln()).collect(),
            s,
            lambda: total,
            phi,
            counts: vec![0; n * p],
        }
    }

    pub fn n_predictors(&self) -> usize {
        self.s.len()
    }

    /// Gibbs update given the forest's split counts: draw `s`, then the sparse
    /// concentration when it is random.
    pub fn update<R: Rng + ?Sized>(&mut self, counts: Vec<usize>, rng: &mut R) {
        self.counts = counts;
        if self.regime == SplitRegime::Uniform {
            return;
        }
        let (s, log_s) = update_split_probs(&self.phi, &self.counts, rng);
        self.s = s;
        self.log_s = log_s;
        if let SplitRegime::Sparse { update_lambda: true, .. } = self.regime {
            let k = self.s.len();
            self.lambda = update_lambda(Some(&self.log_s), k, rng);
            self.phi = sparse_scales(k, self.lambda);
        }
    }
}

/// Residual variance of a least-squares AR(p) with intercept, per variable.
pub fn ar_residual_variances(panel: &TimeSeriesPanel, p: usize) -> Result<Vec<f64>> {
    let t = panel.n_obs();
    if t <= p + 2 {
        return Err(Error::InsufficientData(format!("{t} observations for an AR({p})")));
    }
    (0..panel.n_vars())
        .map(|j| {
            let y = panel.column(j);
            ar_residual_variance(&y, p).map_err(|_| Error::DegenerateVariance(panel.names[j].clone()))
        })
        .collect()
}

fn ar_residual_variance(y: &[f64], p: usize) -> Result<f64> {
    let rows = y.len() - p;
    let z = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { y[r + p - c] });
    let target = DVector::from_iterator(rows, y[p..].iter().copied());
    let ztz = z.transpose() * &z;
    let scale = ztz.diagonal().max();
    let chol = ztz
        .cholesky()
        .ok_or_else(|| Error::DegenerateVariance("singular AR regression".into()))?;
    // Cholesky lets numerically singular systems through with tiny pivots.
    let min_pivot = chol.l().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
    if min_pivot <= 1e-10 * scale {
        return Err(Error::DegenerateVariance("singular AR regression".into()));
    }
    let coef = chol.solve(&(z.transpose() * &target));
    let resid = target - z * coef;
    let dof = rows.saturating_sub(p + 1).max(1) as f64;
    let var = resid.norm_squared() / dof;
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance("zero residual variance".into()));
    }
    Ok(var)
}

/// Minnesota Dirichlet scales for `equation`: lambda1 / l^2 on own lags and
/// lambda2 (sigma_i^2 / sigma_j^2) / l^2 on lags of other variables j.
pub fn minnesota_scales(equation: usize, n: usize, p: usize, lambda1: f64, lambda2: f64, sigma2: &[f64]) -> Vec<f64> {
    assert_eq!(sigma2.len(), n);
    (0..n * p)
        .map(|q| {
            let l = lag_of_column(q, n) as f64;
            let j = variable_of_column(q, n);
            if j == equation {
                lambda1 / (l * l)
            } else {
                lambda2 * (sigma2[equation] / sigma2[j]) / (l * l)
            }
        })
        .collect()
}

/// Symmetric sparse scales lambda / k.
pub fn sparse_scales(k: usize, lambda: f64) -> Vec<f64> {
    vec![lambda / k as f64; k]
}

/// Conjugate draw s ~ Dirichlet(phi + m). Returns `(s, log s)`.
pub fn update_split_probs<R: Rng + ?Sized>(phi: &[f64], counts: &[usize], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let alpha = posterior_concentration(phi, counts);
    dirichlet_log(&alpha, rng)
}

/// Posterior Dirichlet parameters phi + m.
pub fn posterior_concentration(phi: &[f64], counts: &[usize]) -> Vec<f64> {
    assert_eq!(phi.len(), counts.len());
    phi.iter().zip(counts).map(|(f, &m)| f + m as f64).collect()
}

/// Draw lambda from its full conditional given `log_s` (or from the prior when
/// `None`), with lambda / (lambda + k) ~ Beta(1/2, 1).
///
/// The unit interval is cut into [`LAMBDA_GRID_SIZE`] cells. Each cell carries
/// its exact prior mass times the Dirichlet likelihood at the cell midpoint,
/// and the draw within the chosen cell follows the prior shape.
pub fn update_lambda<R: Rng + ?Sized>(log_s: Option<&[f64]>, k: usize, rng: &mut R) -> f64 {
    let weights = lambda_grid_log_weights(log_s, k);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let cell = crate::tree::sample_categorical(&probs, rng);
    let (lo, hi) = cell_bounds(cell);
    let v: f64 = rng.random();
    let root = lo.sqrt() + v * (hi.sqrt() - lo.sqrt());
    let u = (root * root).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    k as f64 * u / (1.0 - u)
}

fn cell_bounds(cell: usize) -> (f64, f64) {
    let g = LAMBDA_GRID_SIZE as f64;
    (cell as f64 / g, (cell + 1) as f64 / g)
}

/// Unnormalized log posterior mass of each lambda grid cell.
pub fn lambda_grid_log_weights(log_s: Option<&[f64]>, k: usize) -> Vec<f64> {
    let kf = k as f64;
    let sum_log_s: Option<f64> = log_s.map(|ls| ls.iter().sum());
    (0..LAMBDA_GRID_SIZE)
        .map(|cell| {
            let (lo, hi) = cell_bounds(cell);
            // Beta(1/2, 1) has CDF sqrt(u).
            let log_prior = (hi.sqrt() - lo.sqrt()).ln();
            match sum_log_s {
                None => log_prior,
                Some(sls) => {
                    let u = 0.5 * (lo + hi);
                    let lambda = kf * u / (1.0 - u);
                    let a = lambda / kf;
                    log_prior + ln_gamma(lambda) - kf * ln_gamma(a) + (a - 1.0) * sls
                }
            }
        })
        .collect()
}

/// Poisson rate lambda * sum_{i<B} 1 / (lambda + i) approximating the number
/// of distinct predictors used by B splits.
pub fn expected_active_predictors(lambda: f64, branches: usize) -> f64 {
    lambda * (0..branches).map(|i| 1.0 / (lambda + i as f64)).sum::<f64>()
}

/// `m` independent Dirichlet(alpha) draws.
pub fn dirichlet_draws<R: Rng + ?Sized>(alpha: &[f64], m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..m).map(|_| dirichlet_log(alpha, rng).0).collect()
}

/// One row of the scale export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub equation: String,
    pub variable: String,
    pub lag: usize,
    pub phi: f64,
}

pub fn scale_table(names: &[String], p: usize, states: &[SplitPriorState]) -> Vec<ScaleRow> {
    let n = names.len();
    states
        .iter()
        .enumerate()
        .flat_map(|(eq, st)| {
            (0..n * p).map(move |q| ScaleRow {
                equation: names[eq].clone(),
                variable: names[variable_of_column(q, n)].clone(),
                lag: lag_of_column(q, n),
                phi: st.phi[q],
            })
        })
        .collect()
}

pub fn write_scale_csv<P: AsRef<Path>>(path: P, rows: &[ScaleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::std_normal;
    use crate::rng::substream;

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn minnesota_scale_values() {
        let phi = minnesota_scales(0, 2, 2, 1.0, 0.5, &[1.0, 1.0]);
        // columns: (v0,l1), (v1,l1), (v0,l2), (v1,l2)
        assert_eq!(phi[0], 1.0);
        assert_eq!(phi[2], 0.25);
        assert_eq!(phi[1], 0.5);
        assert_eq!(phi[3], 0.125);
    }

    #[test]
    fn minnesota_uses_equation_over_regressor_variance_ratio() {
        let phi = minnesota_scales(1, 2, 1, 1.0, 0.5, &[4.0, 2.0]);
        assert!((phi[0] - 0.5 * 2.0 / 4.0).abs() < 1e-15);
        assert_eq!(phi[1], 1.0);
    }

    #[test]
    fn minnesota_decays_as_inverse_square_lag() {
        let n = 3;
        let p = 8;
        let phi = minnesota_scales(1, n, p, 3.0, 1.5, &[0.7, 1.3, 2.9]);
        for j in 0..n {
            for l in 1..=p {
                let ratio = phi[(l - 1) * n + j] / phi[j];
                assert!((ratio - 1.0 / (l * l) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sparse_scale_values() {
        assert_eq!(sparse_scales(4, 1.0), vec![0.25; 4]);
        assert_eq!(sparse_scales(1, 3.0), vec![3.0]);
        assert_eq!(sparse_scales(10, 20.0), vec![2.0; 10]);
    }

    #[test]
    fn conjugate_parameters_are_phi_plus_counts() {
        assert_eq!(posterior_concentration(&[0.3, 1.7, 2.0], &[0, 4, 1]), vec![0.3, 5.7, 3.0]);
    }

    #[test]
    fn symmetric_dirichlet_mean() {
        let mut rng = substream(1, &[1]);
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| update_split_probs(&[1.0; 3], &[0; 3], &mut rng).0).collect();
        for c in 0..3 {
            let col: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            let (m, se) = mean_and_se(&col);
            assert!((m - 1.0 / 3.0).abs() < 3.0 * se, "{m}");
        }
    }

    #[test]
    fn posterior_mean_rises_with_counts() {
        let phi = [1.0, 1.0];
        let mean = |m: usize| {
            let a = posterior_concentration(&phi, &[m, 0]);
            a[0] / a.iter().sum::<f64>()
        };
        for m in 0..20 {
            assert!(mean(m + 1) > mean(m));
        }
    }

    #[test]
    fn lambda_prior_recovers_beta_half_one() {
        let mut rng = substream(2, &[1]);
        let k = 10;
        let n = 10_000;
        let mut u: Vec<f64> = (0..n)
            .map(|_| {
                let l = update_lambda(None, k, &mut rng);
                l / (l + k as f64)
            })
            .collect();
        u.sort_by(f64::total_cmp);
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = x.sqrt();
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov-Smirnov critical value at level 0.01
        assert!(d < 1.628 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn concentrated_s_pulls_lambda_down() {
        let k = 20;
        let mut rng = substream(3, &[1]);
        let mut concentrated = vec![1e-8; k];
        concentrated[0] = 1.0 - 1e-8 * (k - 1) as f64;
        let log_c: Vec<f64> = concentrated.iter().map(|p: &f64| p.ln()).collect();
        let draws = 4000;
        let mut post: Vec<f64> = (0..draws).map(|_| update_lambda(Some(&log_c), k, &mut rng)).collect();
        let mut prior: Vec<f64> = (0..draws).map(|_| update_lambda(None, k, &mut rng)).collect();
        post.sort_by(f64::total_cmp);
        prior.sort_by(f64::total_cmp);
        for q in [0.25, 0.5, 0.75] {
            let i = (q * draws as f64) as usize;
            assert!(post[i] < prior[i], "quantile {q}: {} vs {}", post[i], prior[i]);
        }
    }

    #[test]
    fn uniform_s_raises_lambda_mode() {
        let k = 200;
        let log_u = vec![-(k as f64).ln(); k];
        let argmax = |w: &[f64]| w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let prior_w = lambda_grid_log_weights(None, k);
        let post_w = lambda_grid_log_weights(Some(&log_u), k);
        assert!(argmax(&post_w) > argmax(&prior_w));
    }

    #[test]
    fn poisson_rate_values() {
        assert!((expected_active_predictors(1.0, 1) - 1.0).abs() < 1e-15);
        assert!((expected_active_predictors(1.0, 2) - 1.5).abs() < 1e-15);
        // The first split always activates one predictor.
        assert!((expected_active_predictors(1e-12, 50) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dirichlet_draw_properties() {
        let mut rng = substream(4, &[1]);
        for d in dirichlet_draws(&[1e6, 1e6], 200, &mut rng) {
            assert!((d[0] - 0.5).abs() < 0.002);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let sparse = dirichlet_draws(&[0.01, 0.01], 2000, &mut rng);
        let peaked = sparse.iter().filter(|d| d[0].max(d[1]) > 0.95).count();
        assert!(peaked as f64 > 0.9 * 2000.0);

        let alpha = [1.0, 0.25, 1.0 / 9.0];
        let total: f64 = alpha.iter().sum();
        let draws = dirichlet_draws(&alpha, 10_000, &mut rng);
        for c in 0..3 {
            let col: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            let (m, se) = mean_and_se(&col);
            assert!((m - alpha[c] / total).abs() < 3.0 * se);
        }
    }

    #[test]
    fn huge_symmetric_scale_is_uniform() {
        let mut rng = substream(5, &[1]);
        for k in [2usize, 10, 100] {
            let (s, _) = update_split_probs(&vec![1e6; k], &vec![3; k], &mut rng);
            let dev = s.iter().map(|x| (x - 1.0 / k as f64).abs()).fold(0.0, f64::max);
            assert!(dev < 0.01);
        }
    }

    #[test]
    fn ar_variance_recovers_innovation_variance() {
        let mut rng = substream(6, &[1]);
        let mut y = vec![0.0];
        for _ in 0..5000 {
            let prev = *y.last().unwrap();
            y.push(0.6 * prev + std_normal(&mut rng));
        }
        let panel = TimeSeriesPanel::from_columns(vec!["y".into()], &[y]).unwrap();
        let v = ar_residual_variances(&panel, 1).unwrap()[0];
        assert!(v > 0.9 && v < 1.1, "{v}");

        let wn: Vec<f64> = (0..4000).map(|_| 2.0 * std_normal(&mut rng)).collect();
        let m = wn.iter().sum::<f64>() / wn.len() as f64;
        let sv = wn.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (wn.len() - 1) as f64;
        let panel = TimeSeriesPanel::from_columns(vec!["w".into()], &[wn]).unwrap();
        let v = ar_residual_variances(&panel, 1).unwrap()[0];
        assert!((v / sv - 1.0).abs() < 0.05);
    }

    #[test]
    fn constant_series_has_no_ar_variance() {
        let panel = TimeSeriesPanel::from_columns(vec!["c".into()], &[vec![2.0; 50]]).unwrap();
        assert!(matches!(ar_residual_variances(&panel, 2), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn sparse_update_keeps_valid_simplex() {
        let mut st = SplitPriorState::sparse(6, 1.0, true);
        let mut rng = substream(7, &[1]);
        for i in 0..100 {
            st.update(vec![i % 3, 0, 5, 0, 0, 1], &mut rng);
            assert!((st.s.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(st.s.iter().all(|&p| p >= 0.0));
            assert!(st.lambda > 0.0);
            assert!(st.phi.iter().all(|&f| (f - st.lambda / 6.0).abs() < 1e-12));
        }
    }
}
