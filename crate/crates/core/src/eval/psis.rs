//! Pareto-smoothed importance sampling leave-one-out cross-validation.
//!
//! Importance ratios per observation are the reciprocal likelihoods; the
//! largest 20% are replaced by quantiles of a generalized Pareto distribution
//! fitted with the Zhang-Stephens profile posterior, truncated at the raw
//! maximum. The tail index doubles as a reliability diagnostic.

use ndarray::Array2;

use crate::error::Error;
use crate::math::log_sum_exp;
use crate::Result;

#[derive(Debug, Clone)]
pub struct LooResult {
    pub elpd_loo: f64,
    /// Effective number of parameters: in-sample lpd minus elpd.
    pub p_loo: f64,
    pub se_loo: f64,
    /// Deviance-scale value, -2 * elpd_loo (lower is better).
    pub looic: f64,
    pub elpd_pointwise: Vec<f64>,
    /// GPD tail index per observation; -inf when the tail is degenerate.
    pub pareto_k: Vec<f64>,
    /// Observations with k > 0.7 (unreliable importance weights).
    pub flagged: Vec<usize>,
    /// Observations dropped for non-finite log-likelihoods.
    pub excluded: Vec<usize>,
}

/// Generalized Pareto shape/scale via the Zhang-Stephens grid posterior over
/// theta = xi/sigma, with the weak shape prior centered at 0.5.
fn gpd_fit(exceedances: &[f64]) -> Option<(f64, f64)> {
    let x = {
        let mut x = exceedances.to_vec();
        x.sort_by(f64::total_cmp);
        x
    };
    let n = x.len();
    let x_max = *x.last()?;
    if n < 5 || x_max <= 0.0 {
        return None;
    }
    let quart = x[(n as f64 / 4.0 + 0.5).floor() as usize - 1].max(x_max * 1e-12);
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let mut thetas = Vec::with_capacity(m);
    let mut logliks = Vec::with_capacity(m);
    for j in 1..=m {
        let theta = 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * quart);
        let xi = x.iter().map(|&v| (-theta * v).ln_1p()).sum::<f64>() / n as f64;
        if xi == 0.0 || !xi.is_finite() {
            continue;
        }
        let ll = n as f64 * ((-theta / xi).ln() - xi - 1.0);
        if ll.is_finite() {
            thetas.push(theta);
            logliks.push(ll);
        }
    }
    if thetas.is_empty() {
        return None;
    }
    let norm = log_sum_exp(&logliks);
    let theta_hat: f64 = thetas
        .iter()
        .zip(&logliks)
        .map(|(t, l)| t * (l - norm).exp())
        .sum();
    if theta_hat == 0.0 || !theta_hat.is_finite() {
        return None;
    }
    let xi = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -xi / theta_hat;
    if !(sigma > 0.0) {
        return None;
    }
    // weakly informative shrinkage of the shape toward 0.5
    let xi = (xi * n as f64 + 5.0) / (n as f64 + 10.0);
    Some((xi, sigma))
}

fn gpd_quantile(p: f64, xi: f64, sigma: f64) -> f64 {
    if xi.abs() < 1e-12 {
        -sigma * (1.0 - p).ln()
    } else {
        sigma / xi * ((1.0 - p).powf(-xi) - 1.0)
    }
}

/// Smooths one observation's log ratios in place; returns the tail index.
fn smooth_tail(log_ratios: &mut [f64]) -> f64 {
    let s = log_ratios.len();
    let tail = ((0.2 * s as f64).ceil() as usize).min(s - 1);
    let max_lr = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&i, &j| log_ratios[i].total_cmp(&log_ratios[j]));
    let cutoff_idx = order[s - tail - 1];
    let cutoff = (log_ratios[cutoff_idx] - max_lr).exp();
    let exceed: Vec<f64> = order[s - tail..]
        .iter()
        .map(|&i| (log_ratios[i] - max_lr).exp() - cutoff)
        .collect();
    if exceed.iter().all(|&e| e <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let Some((xi, sigma)) = gpd_fit(&exceed) else {
        return f64::NEG_INFINITY;
    };
    for (z, &i) in order[s - tail..].iter().enumerate() {
        let p = (z as f64 + 0.5) / tail as f64;
        let q = cutoff + gpd_quantile(p, xi, sigma);
        // never exceed the raw maximum ratio
        log_ratios[i] = (q.min(1.0).max(f64::MIN_POSITIVE)).ln() + max_lr;
    }
    xi
}

/// `loglik` is draws x observations. Observations with any non-finite entry
/// are excluded (reported, not scored).
pub fn psis_loo(loglik: &Array2<f64>) -> Result<LooResult> {
    let (s, n) = (loglik.shape()[0], loglik.shape()[1]);
    if s < 100 {
        return Err(Error::Domain(format!(
            "need at least 100 draws for importance smoothing, got {s}"
        )));
    }
    if n == 0 {
        return Err(Error::Domain("no observations to score".into()));
    }
    let mut elpd_pointwise = Vec::with_capacity(n);
    let mut pareto_k = Vec::with_capacity(n);
    let mut flagged = Vec::new();
    let mut excluded = Vec::new();
    let mut p_loo = 0.0;
    for i in 0..n {
        let col: Vec<f64> = (0..s).map(|d| loglik[(d, i)]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            excluded.push(i);
            pareto_k.push(f64::NAN);
            continue;
        }
        let mut log_w: Vec<f64> = col.iter().map(|v| -v).collect();
        let k = smooth_tail(&mut log_w);
        pareto_k.push(k);
        if k > 0.7 {
            flagged.push(i);
        }
        let joint: Vec<f64> = log_w.iter().zip(&col).map(|(w, l)| w + l).collect();
        let elpd_i = log_sum_exp(&joint) - log_sum_exp(&log_w);
        let lpd_i = log_sum_exp(&col) - (s as f64).ln();
        elpd_pointwise.push(elpd_i);
        p_loo += lpd_i - elpd_i;
    }
    if elpd_pointwise.is_empty() {
        return Err(Error::Numerical(
            "every observation had non-finite log-likelihoods".into(),
        ));
    }
    let elpd_loo: f64 = elpd_pointwise.iter().sum();
    let m = elpd_pointwise.len() as f64;
    let mean = elpd_loo / m;
    let var = if elpd_pointwise.len() > 1 {
        elpd_pointwise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(LooResult {
        elpd_loo,
        p_loo,
        se_loo: (m * var).sqrt(),
        looic: -2.0 * elpd_loo,
        elpd_pointwise,
        pareto_k,
        flagged,
        excluded,
    })
}
