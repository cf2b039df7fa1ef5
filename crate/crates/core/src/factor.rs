//! Factor stochastic-volatility error block: loadings with horseshoe column
//! shrinkage, latent factors, and the per-series log-variance paths.
//!
//! Rows `0..n` of the log-variance matrix are the idiosyncratic series and
//! rows `n..n+r` the factors.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{inv_gamma, std_normal};
use crate::error::{Error, Result};
use crate::par::{map_range, Parallelism};
use crate::rng::{stage, substream};
use crate::sv::{sample_sigma2_homoskedastic, sample_sv_hyper, sample_sv_path, SvParams, SvPriors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Volatility {
    #[default]
    Stochastic,
    Homoskedastic,
}

/// Global-local scales for the loadings matrix. Entry (i, j) has prior
/// variance `local[(i, j)] * global[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horseshoe {
    pub local: DMatrix<f64>,
    pub local_aux: DMatrix<f64>,
    pub global: Vec<f64>,
    pub global_aux: Vec<f64>,
}

impl Horseshoe {
    pub fn new(n: usize, r: usize) -> Self {
        Horseshoe {
            local: DMatrix::from_element(n, r, 1.0),
            local_aux: DMatrix::from_element(n, r, 1.0),
            global: vec![1.0; r],
            global_aux: vec![1.0; r],
        }
    }

    pub fn prior_variance(&self, i: usize, j: usize) -> f64 {
        self.local[(i, j)] * self.global[j]
    }

    pub fn row_prior_variances(&self, i: usize) -> Vec<f64> {
        (0..self.global.len()).map(|j| self.prior_variance(i, j)).collect()
    }
}

/// Scales of one loadings column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScales {
    pub local: Vec<f64>,
    pub local_aux: Vec<f64>,
    pub global: f64,
    pub global_aux: f64,
}

/// Bounds on every horseshoe scale draw. Exact-zero columns otherwise drive
/// the scales to 0 and their auxiliaries to infinity.
pub const SCALE_BOUNDS: (f64, f64) = (1e-10, 1e10);

fn bounded_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    inv_gamma(shape, scale, rng).clamp(SCALE_BOUNDS.0, SCALE_BOUNDS.1)
}

/// One pass of the inverse-gamma auxiliary sampler for a horseshoe column.
pub fn sample_horseshoe<R: Rng + ?Sized>(column: &[f64], scales: &mut ColumnScales, rng: &mut R) {
    let p = column.len();
    for (i, &b) in column.iter().enumerate() {
        let lam = bounded_inv_gamma(1.0, 1.0 / scales.local_aux[i] + b * b / (2.0 * scales.global), rng);
        scales.local[i] = lam;
        scales.local_aux[i] = bounded_inv_gamma(1.0, 1.0 + 1.0 / lam, rng);
    }
    let ss: f64 = column.iter().zip(&scales.local).map(|(b, l)| b * b / l).sum();
    scales.global = bounded_inv_gamma(0.5 * (p + 1) as f64, 1.0 / scales.global_aux + 0.5 * ss, rng);
    scales.global_aux = bounded_inv_gamma(1.0, 1.0 + 1.0 / scales.global, rng);
}

/// Draw beta ~ N(P^-1 X'y, P^-1) with P = X'X + diag(1 / prior_var).
pub fn sample_loadings_row<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &[f64],
    prior_var: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let r = x.ncols();
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NumericalDomain("non-finite loadings regression input".into()));
    }
    let mut prec = x.transpose() * x;
    for j in 0..r {
        prec[(j, j)] += 1.0 / prior_var[j];
    }
    let xty = x.transpose() * DVector::from_column_slice(y);
    gaussian_from_precision(prec, xty, rng)
}

/// Draw from N(P^-1 b, P^-1).
fn gaussian_from_precision<R: Rng + ?Sized>(prec: DMatrix<f64>, b: DVector<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let r = b.len();
    let chol = prec
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("conditional precision".into()))?;
    let mean = chol.solve(&b);
    let z = DVector::from_fn(r, |_, _| std_normal(rng));
    let l_t = chol.l().transpose();
    let noise = l_t
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::NotPositiveDefinite("conditional precision".into()))?;
    let draw = mean + noise;
    if draw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDomain("non-finite Gaussian draw".into()));
    }
    Ok(draw.iter().copied().collect())
}

/// f_t ~ N(B L' Omega^-1 e, B), B = (H^-1 + L' Omega^-1 L)^-1, with
/// diagonal variances `omega` (length n) and `factor_var` (length r).
pub fn sample_factors_t<R: Rng + ?Sized>(
    loadings: &DMatrix<f64>,
    omega: &[f64],
    factor_var: &[f64],
    residual: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (n, r) = loadings.shape();
    let mut prec = DMatrix::zeros(r, r);
    let mut b = DVector::zeros(r);
    for a in 0..r {
        prec[(a, a)] = 1.0 / factor_var[a];
        for i in 0..n {
            b[a] += loadings[(i, a)] * residual[i] / omega[i];
        }
        for c in 0..=a {
            let v: f64 = (0..n).map(|i| loadings[(i, a)] * loadings[(i, c)] / omega[i]).sum();
            prec[(a, c)] += v;
            if c != a {
                prec[(c, a)] += v;
            }
        }
    }
    gaussian_from_precision(prec, b, rng)
}

/// Error-block state shared by all equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorVolState {
    pub volatility: Volatility,
    /// n x r.
    pub loadings: DMatrix<f64>,
    /// T x r.
    pub factors: DMatrix<f64>,
    /// (n + r) x T log-variances.
    pub log_var: DMatrix<f64>,
    pub sv: Vec<SvParams>,
    pub horseshoe: Horseshoe,
    /// Homoskedastic inverse-gamma prior (shape, scale) per equation.
    pub sigma2_prior: Vec<(f64, f64)>,
    pub sv_priors: SvPriors,
    /// Factor log-variance levels are pinned at zero to fix the factor scale.
    pub factor_sv_priors: SvPriors,
}

impl FactorVolState {
    /// Initial state: zero loadings and factors, log-variances at the log of
    /// each residual variance.
    pub fn new(n: usize, r: usize, t: usize, volatility: Volatility, residual_var: &[f64]) -> Self {
        let mut log_var = DMatrix::zeros(n + r, t);
        let mut sv = vec![SvParams::default(); n + r];
        for i in 0..n {
            let lv = residual_var[i].max(1e-8).ln();
            log_var.row_mut(i).fill(lv);
            sv[i].mu = lv;
        }
        FactorVolState {
            volatility,
            loadings: DMatrix::zeros(n, r),
            factors: DMatrix::zeros(t, r),
            log_var,
            sv,
            horseshoe: Horseshoe::new(n, r),
            sigma2_prior: residual_var.iter().map(|v| (3.0, 0.5 * v.max(1e-8))).collect(),
            sv_priors: SvPriors::default(),
            factor_sv_priors: SvPriors {
                mu_var: 0.0,
                ..SvPriors::default()
            },
        }
    }

    pub fn n_series(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.log_var.ncols()
    }

    /// Observation precisions exp(-h_{i,t}) of equation `i`.
    pub fn precisions(&self, i: usize) -> Vec<f64> {
        self.log_var.row(i).iter().map(|h| (-h).exp()).collect()
    }

    /// F * loadings_i' over time.
    pub fn common_component(&self, i: usize) -> Vec<f64> {
        let loadings: Vec<f64> = self.loadings.row(i).iter().copied().collect();
        crate::bart::common_component(&self.factors, &loadings)
    }

    /// Sigma = L diag(exp(h_fac)) L' + diag(exp(h_idio)) at the given log-variances.
    pub fn covariance(loadings: &DMatrix<f64>, log_var: &[f64]) -> DMatrix<f64> {
        let (n, r) = loadings.shape();
        let h = DMatrix::from_diagonal(&DVector::from_iterator(r, log_var[n..].iter().map(|v| v.exp())));
        let mut sigma = loadings * h * loadings.transpose();
        for i in 0..n {
            sigma[(i, i)] += log_var[i].exp();
        }
        sigma
    }

    /// Covariance at time index t.
    pub fn covariance_at(&self, t: usize) -> DMatrix<f64> {
        let lv: Vec<f64> = self.log_var.column(t).iter().copied().collect();
        Self::covariance(&self.loadings, &lv)
    }

    /// Update loadings rows and horseshoe scales. `tree_resid` is T x n: Y - G(X).
    pub fn update_loadings(&mut self, tree_resid: &DMatrix<f64>, seed: u64, sweep: u64, mode: Parallelism) -> Result<()> {
        let (n, r, t) = (self.n_series(), self.n_factors(), self.n_obs());
        if r == 0 {
            return Ok(());
        }
        let rows = map_range(mode, n, |i| {
            let mut rng = substream(seed, &[stage::LOADINGS, sweep, i as u64]);
            let scale: Vec<f64> = (0..t).map(|s| (-0.5 * self.log_var[(i, s)]).exp()).collect();
            let x = DMatrix::from_fn(t, r, |s, j| self.factors[(s, j)] * scale[s]);
            let y: Vec<f64> = (0..t).map(|s| tree_resid[(s, i)] * scale[s]).collect();
            sample_loadings_row(&x, &y, &self.horseshoe.row_prior_variances(i), &mut rng)
        });
        for (i, row) in rows.into_iter().enumerate() {
            let row = row?;
            for j in 0..r {
                self.loadings[(i, j)] = row[j];
            }
        }
        for j in 0..r {
            let mut rng = substream(seed, &[stage::HORSESHOE, sweep, j as u64]);
            let hs = &mut self.horseshoe;
            let mut scales = ColumnScales {
                local: hs.local.column(j).iter().copied().collect(),
                local_aux: hs.local_aux.column(j).iter().copied().collect(),
                global: hs.global[j],
                global_aux: hs.global_aux[j],
            };
            let column: Vec<f64> = self.loadings.column(j).iter().copied().collect();
            sample_horseshoe(&column, &mut scales, &mut rng);
            for i in 0..n {
                hs.local[(i, j)] = scales.local[i];
                hs.local_aux[(i, j)] = scales.local_aux[i];
            }
            hs.global[j] = scales.global;
            hs.global_aux[j] = scales.global_aux;
        }
        Ok(())
    }

    /// Draw every f_t given the loadings and volatilities.
    pub fn update_factors(&mut self, tree_resid: &DMatrix<f64>, seed: u64, sweep: u64, mode: Parallelism) -> Result<()> {
        let (n, r, t) = (self.n_series(), self.n_factors(), self.n_obs());
        if r == 0 {
            return Ok(());
        }
        let draws = map_range(mode, t, |s| {
            let mut rng = substream(seed, &[stage::FACTORS, sweep, s as u64]);
            let omega: Vec<f64> = (0..n).map(|i| self.log_var[(i, s)].exp()).collect();
            let fvar: Vec<f64> = (0..r).map(|j| self.log_var[(n + j, s)].exp()).collect();
            let e: Vec<f64> = (0..n).map(|i| tree_resid[(s, i)]).collect();
            sample_factors_t(&self.loadings, &omega, &fvar, &e, &mut rng)
        });
        for (s, f) in draws.into_iter().enumerate() {
            let f = f?;
            for j in 0..r {
                self.factors[(s, j)] = f[j];
            }
        }
        Ok(())
    }

    /// Update log-variance paths and their hyperparameters, or the constant
    /// variances in homoskedastic mode.
    pub fn update_volatility(&mut self, tree_resid: &DMatrix<f64>, seed: u64, sweep: u64, mode: Parallelism) -> Result<()> {
        let (n, r, t) = (self.n_series(), self.n_factors(), self.n_obs());
        let shocks_of = |i: usize| -> Vec<f64> {
            if i < n {
                let common = self.common_component(i);
                (0..t).map(|s| tree_resid[(s, i)] - common[s]).collect()
            } else {
                self.factors.column(i - n).iter().copied().collect()
            }
        };
        match self.volatility {
            Volatility::Homoskedastic => {
                let vars = map_range(mode, n, |i| {
                    let mut rng = substream(seed, &[stage::VOLATILITY, sweep, i as u64]);
                    let (a, b) = self.sigma2_prior[i];
                    sample_sigma2_homoskedastic(&shocks_of(i), a, b, &mut rng)
                });
                for (i, v) in vars.into_iter().enumerate() {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::NumericalDomain(format!("variance draw {v} for series {i}")));
                    }
                    self.log_var.row_mut(i).fill(v.ln());
                }
            }
            Volatility::Stochastic => {
                let updated = map_range(mode, n + r, |i| {
                    let mut rng = substream(seed, &[stage::VOLATILITY, sweep, i as u64]);
                    let current: Vec<f64> = self.log_var.row(i).iter().copied().collect();
                    let (h, _) = sample_sv_path(&shocks_of(i), &current, &self.sv[i], &mut rng);
                    let priors = if i < n { &self.sv_priors } else { &self.factor_sv_priors };
                    let params = sample_sv_hyper(&h, &self.sv[i], priors, &mut rng);
                    (h, params)
                });
                for (i, (h, params)) in updated.into_iter().enumerate() {
                    if h.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NumericalDomain(format!("log-variance path of series {i}")));
                    }
                    for (s, v) in h.into_iter().enumerate() {
                        self.log_var[(i, s)] = v;
                    }
                    self.sv[i] = params;
                }
            }
        }
        Ok(())
    }

    /// Terminal log-variances of all n + r series.
    pub fn terminal_log_var(&self) -> Vec<f64> {
        let t = self.n_obs();
        self.log_var.column(t - 1).iter().copied().collect()
    }
}

/// Write log-variance paths as CSV: one row per series, one column per time.
pub fn write_volatility_csv<P: AsRef<Path>>(path: P, names: &[String], log_var: &DMatrix<f64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..log_var.ncols()).map(|t| format!("t{t}")).collect();
    writeln!(out, "series,{}", header.join(","))?;
    for i in 0..log_var.nrows() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("factor{}", i + 1 - names.len()));
        let vals: Vec<String> = log_var.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{name},{}", vals.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn moments(draws: &[Vec<f64>], j: usize) -> (f64, f64) {
        let n = draws.len() as f64;
        let m = draws.iter().map(|d| d[j]).sum::<f64>() / n;
        let v = draws.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn scalar_loadings_conjugacy() {
        let mut rng = substream(1, &[1]);
        let x = DMatrix::from_element(1, 1, 1.0);
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| sample_loadings_row(&x, &[1.0], &[1.0], &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&draws, 0);
        assert!((m - 0.5).abs() < 3.0 * (0.5f64 / 1e4).sqrt());
        assert!((v - 0.5).abs() < 3.0 * 0.5 * (2.0f64 / 1e4).sqrt());
    }

    #[test]
    fn loadings_prior_dominant_limit() {
        let mut rng = substream(2, &[1]);
        let x = DMatrix::from_element(3, 2, 1.0);
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| sample_loadings_row(&x, &[5.0, 5.0, 5.0], &[1e-10, 1e-10], &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&draws, 1);
        assert!(m.abs() < 3.0 * (1e-10f64 / 1e4).sqrt());
        assert!((v - 1e-10).abs() < 3.0 * 1e-10 * (2.0f64 / 1e4).sqrt());
    }

    #[test]
    fn loadings_equal_unweighted_regression_when_volatility_is_zero() {
        let mut rng = substream(3, &[1]);
        let t = 30;
        let f = DMatrix::from_fn(t, 2, |_, _| std_normal(&mut rng));
        let y: Vec<f64> = (0..t).map(|s| 0.8 * f[(s, 0)] - 0.3 * f[(s, 1)] + 0.2 * std_normal(&mut rng)).collect();
        let prior = [2.0, 0.5];
        // Oracle: explicit 2x2 inverse.
        let (a, b, d) = (
            (0..t).map(|s| f[(s, 0)].powi(2)).sum::<f64>() + 1.0 / prior[0],
            (0..t).map(|s| f[(s, 0)] * f[(s, 1)]).sum::<f64>(),
            (0..t).map(|s| f[(s, 1)].powi(2)).sum::<f64>() + 1.0 / prior[1],
        );
        let det = a * d - b * b;
        let (g0, g1) = (
            (0..t).map(|s| f[(s, 0)] * y[s]).sum::<f64>(),
            (0..t).map(|s| f[(s, 1)] * y[s]).sum::<f64>(),
        );
        let mean = [(d * g0 - b * g1) / det, (a * g1 - b * g0) / det];
        let var = [d / det, a / det];
        let draws: Vec<Vec<f64>> = (0..20_000).map(|_| sample_loadings_row(&f, &y, &prior, &mut rng).unwrap()).collect();
        for j in 0..2 {
            let (m, v) = moments(&draws, j);
            assert!((m - mean[j]).abs() < 3.0 * (var[j] / 2e4).sqrt());
            assert!((v - var[j]).abs() < 3.0 * var[j] * (2.0f64 / 2e4).sqrt());
        }
    }

    #[test]
    fn non_finite_loadings_input_is_rejected() {
        let mut rng = substream(4, &[1]);
        let x = DMatrix::from_element(1, 1, f64::NAN);
        assert!(matches!(sample_loadings_row(&x, &[1.0], &[1.0], &mut rng), Err(Error::NumericalDomain(_))));
    }

    #[test]
    fn factor_draw_examples() {
        let mut rng = substream(5, &[1]);
        let l = DMatrix::from_element(1, 1, 1.0);
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| sample_factors_t(&l, &[1.0], &[1.0], &[2.0], &mut rng).unwrap()).collect();
        let (m, v) = moments(&draws, 0);
        assert!((m - 1.0).abs() < 3.0 * (0.5f64 / 1e4).sqrt());
        assert!((v - 0.5).abs() < 3.0 * 0.5 * (2.0f64 / 1e4).sqrt());
        let zero = DMatrix::zeros(3, 2);
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| sample_factors_t(&zero, &[1.0; 3], &[0.5, 2.0], &[1.0, 1.0, 1.0], &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&draws, 1);
        assert!(m.abs() < 3.0 * (2.0f64 / 1e4).sqrt());
        assert!((v - 2.0).abs() < 3.0 * 2.0 * (2.0f64 / 1e4).sqrt());
    }

    #[test]
    fn factor_draw_moments_multivariate() {
        let mut rng = substream(6, &[1]);
        let l = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -0.3, 0.8]);
        let omega = [0.5, 1.0, 2.0];
        let fvar = [1.5, 0.7];
        let e = [1.0, -0.5, 0.3];
        let mut prec = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / fvar[0], 1.0 / fvar[1]]));
        let oinv = DMatrix::from_diagonal(&DVector::from_vec(omega.iter().map(|o| 1.0 / o).collect()));
        prec += l.transpose() * &oinv * &l;
        let cov = prec.try_inverse().unwrap();
        let mean = &cov * l.transpose() * &oinv * DVector::from_vec(e.to_vec());
        let n = 20_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_factors_t(&l, &omega, &fvar, &e, &mut rng).unwrap()).collect();
        for j in 0..2 {
            let (m, v) = moments(&draws, j);
            assert!((m - mean[j]).abs() < 3.0 * (cov[(j, j)] / n as f64).sqrt());
            assert!((v - cov[(j, j)]).abs() < 3.0 * cov[(j, j)] * (2.0 / n as f64).sqrt());
        }
    }

    fn prior_loading_draws(n: usize, rng: &mut crate::rng::SamplerRng) -> Vec<f64> {
        // Successive conditionals with no data keep (beta, scales) at the prior.
        let mut scales = ColumnScales { local: vec![1.0], local_aux: vec![1.0], global: 1.0, global_aux: 1.0 };
        let mut beta = 0.0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            sample_horseshoe(&[beta], &mut scales, rng);
            beta = (scales.local[0] * scales.global).sqrt() * std_normal(rng);
            out.push(beta);
        }
        out
    }

    #[test]
    fn horseshoe_prior_has_heavy_tails() {
        let mut rng = substream(7, &[1]);
        let draws = prior_loading_draws(100_000, &mut rng);
        let n = draws.len() as f64;
        let m = draws.iter().sum::<f64>() / n;
        let m2 = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m4 = draws.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
        assert!(m4 / (m2 * m2) > 3.0);
    }

    fn median(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        xs[xs.len() / 2]
    }

    #[test]
    fn zero_column_shrinks_global_scale() {
        let mut rng = substream(8, &[1]);
        let column = vec![0.0; 20];
        let mut scales = ColumnScales { local: vec![1.0; 20], local_aux: vec![1.0; 20], global: 1.0, global_aux: 1.0 };
        let mut globals = Vec::new();
        for i in 0..6000 {
            sample_horseshoe(&column, &mut scales, &mut rng);
            if i >= 1000 {
                globals.push(scales.global);
            }
        }
        // Half-Cauchy(0, 1) on the global sd puts the prior median of its square at 1.
        assert!(median(globals) < 1.0);
    }

    #[test]
    fn large_loading_keeps_large_local_scale() {
        let mut rng = substream(9, &[1]);
        let mut column = vec![0.0; 10];
        column[3] = 4.0;
        let mut scales = ColumnScales { local: vec![1.0; 10], local_aux: vec![1.0; 10], global: 1.0, global_aux: 1.0 };
        let mut local: Vec<Vec<f64>> = vec![Vec::new(); 10];
        for it in 0..6000 {
            sample_horseshoe(&column, &mut scales, &mut rng);
            if it >= 1000 {
                for i in 0..10 {
                    local[i].push(scales.local[i]);
                }
            }
        }
        let big = median(local[3].clone());
        for i in (0..10).filter(|&i| i != 3) {
            assert!(big > median(local[i].clone()));
        }
    }

    #[test]
    fn covariance_is_positive_definite() {
        let mut rng = substream(10, &[1]);
        for _ in 0..100 {
            let l = DMatrix::from_fn(4, 2, |_, _| std_normal(&mut rng));
            let lv: Vec<f64> = (0..6).map(|_| std_normal(&mut rng)).collect();
            let sigma = FactorVolState::covariance(&l, &lv);
            assert!((&sigma - sigma.transpose()).abs().max() < 1e-12);
            assert!(sigma.cholesky().is_some());
        }
    }

    #[test]
    fn volatility_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.csv");
        let lv = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        write_volatility_csv(&path, &["a".into(), "b".into()], &lv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "series,t0,t1");
        assert_eq!(lines[1], "a,0,1");
        assert_eq!(lines[3], "factor1,4,5");
    }
}
