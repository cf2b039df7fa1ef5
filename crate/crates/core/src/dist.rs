//! Small sampling and density helpers shared by the samplers.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as StatrsNormal};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma(shape, scale) draw.
pub fn gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, scale)
        .expect("gamma parameters must be positive and finite")
        .sample(rng)
}

/// Log of a Gamma(shape, 1) draw, accurate for very small shapes where the
/// draw itself underflows.
pub fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        gamma(shape, 1.0, rng).ln()
    } else {
        let g = gamma(shape + 1.0, 1.0, rng).ln();
        let u: f64 = rng.random::<f64>();
        // u is in [0, 1); guard the endpoint.
        g + u.max(f64::MIN_POSITIVE).ln() / shape
    }
}

/// Inverse-gamma draw with density proportional to x^(-shape-1) exp(-scale/x).
pub fn inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    scale / gamma(shape, 1.0, rng)
}

/// Dirichlet draw computed on the log scale. Returns `(probs, log_probs)`.
pub fn dirichlet_log<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_draw(a, rng)).collect();
    let norm = log_sum_exp(&logs);
    let log_probs: Vec<f64> = logs.iter().map(|l| l - norm).collect();
    let mut probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    (probs, log_probs)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// log(mean(exp(xs))).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Normal(mean, sd) truncated to (lo, hi).
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    for _ in 0..64 {
        let x = mean + sd * std_normal(rng);
        if x > lo && x < hi {
            return x;
        }
    }
    let n = StatrsNormal::new(mean, sd).expect("positive sd");
    let (a, b) = (n.cdf(lo), n.cdf(hi));
    let u = a + (b - a) * rng.random::<f64>();
    n.inverse_cdf(u).clamp(lo.next_up(), hi.next_down())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [0.1, -2.0, 1.5];
        let direct = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
    }

    #[test]
    fn tiny_shape_dirichlet_stays_on_simplex() {
        let mut rng = substream(1, &[1]);
        for _ in 0..100 {
            let (p, lp) = dirichlet_log(&[1e-3, 1e-3, 1e-3], &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(lp.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = substream(2, &[1]);
        for _ in 0..1000 {
            let x = truncated_normal(5.0, 0.1, -1.0, 1.0, &mut rng);
            assert!(x > -1.0 && x < 1.0);
        }
    }
}
