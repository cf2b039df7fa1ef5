//! Univariate stochastic volatility: log-variance paths via a Gaussian
//! mixture approximation to log chi-squared and forward-filter backward-sample,
//! plus the AR(1) hyperparameter updates and the homoskedastic alternative.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{inv_gamma, normal_logpdf, std_normal, truncated_normal};
use crate::tree::sample_categorical;

/// Ten-component approximation to log chi-squared with one degree of freedom.
pub const MIX_PROB: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
pub const MIX_MEAN: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65,
];
pub const MIX_VAR: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

/// Guards log(e^2) against exact zeros.
pub const LOG_OFFSET: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub mu: f64,
    pub phi: f64,
    pub sigma2: f64,
}

impl Default for SvParams {
    fn default() -> Self {
        SvParams {
            mu: 0.0,
            phi: 0.9,
            sigma2: 0.1,
        }
    }
}

impl SvParams {
    pub fn stationary_variance(&self) -> f64 {
        self.sigma2 / (1.0 - self.phi * self.phi)
    }

    /// One-step-ahead draw of the log-variance.
    pub fn step<R: Rng + ?Sized>(&self, h: f64, rng: &mut R) -> f64 {
        self.mu + self.phi * (h - self.mu) + self.sigma2.sqrt() * std_normal(rng)
    }
}

/// Hyperpriors: mu ~ N(mu_mean, mu_var), (phi + 1)/2 ~ Beta(phi_a, phi_b),
/// sigma2 ~ Gamma(1/2, rate = 1 / (2 sigma2_scale)). `mu_var == 0` pins mu at `mu_mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvPriors {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub phi_a: f64,
    pub phi_b: f64,
    pub sigma2_scale: f64,
}

impl Default for SvPriors {
    fn default() -> Self {
        SvPriors {
            mu_mean: 0.0,
            mu_var: 100.0,
            phi_a: 5.0,
            phi_b: 1.5,
            sigma2_scale: 1.0,
        }
    }
}

impl SvPriors {
    fn log_phi_prior(&self, phi: f64) -> f64 {
        let u = 0.5 * (phi + 1.0);
        (self.phi_a - 1.0) * u.ln() + (self.phi_b - 1.0) * (1.0 - u).ln()
    }
}

/// Transformed observations log(e^2 + offset).
pub fn log_squared(shocks: &[f64]) -> Vec<f64> {
    shocks.iter().map(|e| (e * e + LOG_OFFSET).ln()).collect()
}

/// Draw the mixture component for each time point given the current path.
pub fn sample_indicators<R: Rng + ?Sized>(log_sq: &[f64], h: &[f64], rng: &mut R) -> Vec<u8> {
    let mut w = [0.0; 10];
    log_sq
        .iter()
        .zip(h)
        .map(|(y, ht)| {
            let d = y - ht;
            let mut max = f64::NEG_INFINITY;
            for j in 0..10 {
                w[j] = MIX_PROB[j].ln() + normal_logpdf(d, MIX_MEAN[j], MIX_VAR[j]);
                max = max.max(w[j]);
            }
            for v in w.iter_mut() {
                *v = (*v - max).exp();
            }
            sample_categorical(&w, rng) as u8
        })
        .collect()
}

/// Forward-filter backward-sample for h_t = mu + phi (h_{t-1} - mu) + eta_t,
/// observed as obs_t = h_t + noise with variance obs_var_t. Infinite
/// observation variance skips the update at that time.
pub fn ffbs<R: Rng + ?Sized>(obs: &[f64], obs_var: &[f64], params: &SvParams, rng: &mut R) -> Vec<f64> {
    let n = obs.len();
    let SvParams { mu, phi, sigma2 } = *params;
    let mut filt_mean = vec![0.0; n];
    let mut filt_var = vec![0.0; n];
    let (mut pred_mean, mut pred_var) = (mu, params.stationary_variance());
    for t in 0..n {
        let (m, v) = if obs_var[t].is_finite() {
            let gain = pred_var / (pred_var + obs_var[t]);
            (pred_mean + gain * (obs[t] - pred_mean), (1.0 - gain) * pred_var)
        } else {
            (pred_mean, pred_var)
        };
        filt_mean[t] = m;
        filt_var[t] = v;
        pred_mean = mu + phi * (m - mu);
        pred_var = phi * phi * v + sigma2;
    }
    let mut h = vec![0.0; n];
    if n == 0 {
        return h;
    }
    h[n - 1] = filt_mean[n - 1] + filt_var[n - 1].sqrt() * std_normal(rng);
    for t in (0..n - 1).rev() {
        let (m, v) = (filt_mean[t], filt_var[t]);
        let denom = phi * phi * v + sigma2;
        let (mean, var) = if denom > 0.0 {
            let gain = phi * v / denom;
            (m + gain * (h[t + 1] - mu - phi * (m - mu)), v - gain * phi * v)
        } else {
            // Degenerate state noise: h_{t+1} pins h_t when phi != 0.
            (if phi != 0.0 { mu + (h[t + 1] - mu) / phi } else { m }, 0.0)
        };
        h[t] = mean + var.max(0.0).sqrt() * std_normal(rng);
    }
    h
}

/// Draw a log-variance path given raw shocks and the current path.
/// Returns the new path and the mixture indicators used.
pub fn sample_sv_path<R: Rng + ?Sized>(
    shocks: &[f64],
    h_current: &[f64],
    params: &SvParams,
    rng: &mut R,
) -> (Vec<f64>, Vec<u8>) {
    let log_sq = log_squared(shocks);
    let z = sample_indicators(&log_sq, h_current, rng);
    let obs: Vec<f64> = log_sq.iter().zip(&z).map(|(y, &j)| y - MIX_MEAN[j as usize]).collect();
    let obs_var: Vec<f64> = z.iter().map(|&j| MIX_VAR[j as usize]).collect();
    (ffbs(&obs, &obs_var, params, rng), z)
}

/// Update (mu, phi, sigma2) given the path: sigma2 by independence MH from the
/// inverse-gamma full conditional under a flat prior, mu by conjugacy, phi by
/// independence MH from the truncated regression proposal.
pub fn sample_sv_hyper<R: Rng + ?Sized>(h: &[f64], current: &SvParams, priors: &SvPriors, rng: &mut R) -> SvParams {
    let mut p = *current;
    let n = h.len();
    if n < 2 {
        return p;
    }
    let ss = |p: &SvParams| -> f64 {
        let x1 = h[0] - p.mu;
        let mut s = x1 * x1 * (1.0 - p.phi * p.phi);
        for t in 1..n {
            let e = h[t] - p.mu - p.phi * (h[t - 1] - p.mu);
            s += e * e;
        }
        s
    };

    // sigma2: proposal IG((n-1)/2, SS/2) absorbs the likelihood and the
    // sigma2^(-1/2) part of the prior; the remaining exp(-sigma2 / (2 scale)) is the MH ratio.
    let prop = inv_gamma(0.5 * (n - 1) as f64, 0.5 * ss(&p), rng);
    let log_a = -(prop - p.sigma2) / (2.0 * priors.sigma2_scale);
    if prop.is_finite() && prop > 0.0 && rng.random::<f64>().ln() < log_a {
        p.sigma2 = prop;
    }

    // mu: Gaussian full conditional, or fixed under a point-mass prior.
    if priors.mu_var == 0.0 {
        p.mu = priors.mu_mean;
        return sample_phi(&x_of(h, p.mu), p, priors, rng);
    }
    let one_m = 1.0 - p.phi;
    let mut prec = 1.0 / priors.mu_var + (1.0 - p.phi * p.phi) / p.sigma2;
    let mut num = priors.mu_mean / priors.mu_var + h[0] * (1.0 - p.phi * p.phi) / p.sigma2;
    prec += (n - 1) as f64 * one_m * one_m / p.sigma2;
    num += one_m * (1..n).map(|t| h[t] - p.phi * h[t - 1]).sum::<f64>() / p.sigma2;
    p.mu = num / prec + std_normal(rng) / prec.sqrt();
    sample_phi(&x_of(h, p.mu), p, priors, rng)
}

fn x_of(h: &[f64], mu: f64) -> Vec<f64> {
    h.iter().map(|v| v - mu).collect()
}

/// phi: regression of x_t on x_{t-1}, truncated to (-1, 1).
fn sample_phi<R: Rng + ?Sized>(x: &[f64], mut p: SvParams, priors: &SvPriors, rng: &mut R) -> SvParams {
    let n = x.len();
    let sxx: f64 = x[..n - 1].iter().map(|v| v * v).sum();
    let sxy: f64 = (1..n).map(|t| x[t] * x[t - 1]).sum();
    if sxx > 0.0 {
        let mean = sxy / sxx;
        let sd = (p.sigma2 / sxx).sqrt();
        let prop = truncated_normal(mean, sd, -1.0, 1.0, rng);
        if prop.abs() < 1.0 {
            let log_target = |phi: f64| {
                priors.log_phi_prior(phi) + normal_logpdf(x[0], 0.0, p.sigma2 / (1.0 - phi * phi))
            };
            let log_a = log_target(prop) - log_target(p.phi);
            if rng.random::<f64>().ln() < log_a {
                p.phi = prop;
            }
        }
    }
    p
}

/// Draw sigma2 ~ IG(shape + T/2, scale + sum(r^2)/2).
pub fn sample_sigma2_homoskedastic<R: Rng + ?Sized>(residuals: &[f64], shape: f64, scale: f64, rng: &mut R) -> f64 {
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    inv_gamma(shape + 0.5 * residuals.len() as f64, scale + 0.5 * ss, rng)
}
