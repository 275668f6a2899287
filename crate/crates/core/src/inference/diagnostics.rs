//! Convergence diagnostics: split-chain rank-normalized potential scale
//! reduction and effective sample sizes for bulk and tails.

use super::nuts::PosteriorDraws;
use crate::math::{mean, normal_quantile, variance};

/// Splits each chain in half, dropping the middle draw when odd.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Replaces pooled values by normal scores: midranks mapped through the
/// standard normal quantile with the Blom-style (r - 3/8)/(S + 1/4) offset.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.first().map_or(0, |c| c.len());
    let total = chains.len() * n;
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    for (ci, c) in chains.iter().enumerate() {
        for (di, &v) in c.iter().enumerate() {
            indexed.push((v, ci * n + di));
        }
    }
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[indexed[k].1] = midrank;
        }
        i = j + 1;
    }
    let s = total as f64;
    chains
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            (0..c.len())
                .map(|di| normal_quantile((ranks[ci * n + di] - 0.375) / (s + 0.25)))
                .collect()
        })
        .collect()
}

/// Degenerate input for rank statistics: any non-finite draw, or every draw
/// equal to every other.
fn all_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().any(|c| c.iter().any(|v| !v.is_finite()))
        || chains.iter().all(|c| c.iter().all(|&v| v == first))
}

/// Classic potential scale reduction on already-transformed chains.
fn psrf(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains
        .iter()
        .map(|c| variance(c) * n / (n - 1.0))
        .collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = mean(&vars);
    if w <= 0.0 {
        return f64::NAN;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Split-chain rank-normalized R-hat, taken as the max over three views:
/// normal scores of the draws (bulk), normal scores of absolute deviations
/// from the median (folded, catches scale mismatch), and the raw-scale
/// statistic (rank normalization alone saturates under large mean shifts).
/// NaN when every draw is identical, where the statistic is undefined.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    if all_constant(&split) {
        return f64::NAN;
    }
    let bulk = psrf(&rank_normalize(&split));
    let mut pooled: Vec<f64> = split.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let median = 0.5 * (pooled[(pooled.len() - 1) / 2] + pooled[pooled.len() / 2]);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|v| (v - median).abs()).collect())
        .collect();
    let tail = if all_constant(&folded) {
        bulk
    } else {
        psrf(&rank_normalize(&folded))
    };
    bulk.max(tail).max(psrf(&split))
}

/// Effective sample size from Geyer's initial monotone positive sequence,
/// computed on split chains with cross-chain variance pooling.
fn ess_base(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    if m < 2 || n < 4 || all_constant(chains) {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains
        .iter()
        .map(|c| variance(c) * n as f64 / (n as f64 - 1.0))
        .collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b = if m > 1 {
        n as f64 / (m as f64 - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = w * (n as f64 - 1.0) / n as f64 + b / n as f64;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }

    // per-chain autocovariances averaged across chains
    let autocov = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for (c, mu) in chains.iter().zip(&means) {
            let mut s = 0.0;
            for t in 0..n - lag {
                s += (c[t] - mu) * (c[t + lag] - mu);
            }
            acc += s / n as f64;
        }
        acc / m as f64
    };

    let rho = |cov: f64| 1.0 - (w - cov) / var_plus;
    // Geyer pairs (rho_2k + rho_2k+1), rho_0 fixed at 1: keep while positive,
    // clamped to a non-increasing staircase (initial monotone sequence)
    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let even = if lag == 0 { 1.0 } else { rho(autocov(lag)) };
        let pair = even + rho(autocov(lag + 1));
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        pair_sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * pair_sum).max(1.0 / ((m * n) as f64).log10());
    let total = (m * n) as f64;
    (total / tau).min(total * total.log10())
}

/// Bulk ESS: Geyer estimator on rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    if all_constant(&split) {
        return f64::NAN;
    }
    ess_base(&rank_normalize(&split))
}

/// Tail ESS: the smaller of the ESS values of the 5% and 95% quantile
/// indicator sequences, rank-normalized.
pub fn ess_tail(chains: &[Vec<f64>]) -> f64 {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    if all_constant(&split) {
        return f64::NAN;
    }
    let mut pooled: Vec<f64> = split.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let quantile = |q: f64| -> f64 {
        let idx = (q * (pooled.len() - 1) as f64).round() as usize;
        pooled[idx]
    };
    let mut min_ess = f64::INFINITY;
    for q in [0.05, 0.95] {
        let cut = quantile(q);
        let ind: Vec<Vec<f64>> = split
            .iter()
            .map(|c| c.iter().map(|&v| f64::from(u8::from(v <= cut))).collect())
            .collect();
        if all_constant(&ind) {
            return f64::NAN;
        }
        let e = ess_base(&rank_normalize(&ind));
        if e < min_ess {
            min_ess = e;
        }
    }
    min_ess
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q5: f64,
    pub q50: f64,
    pub q95: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    /// True when the draws were constant and R-hat/ESS are undefined.
    pub constant: bool,
}

fn chains_of(draws: &PosteriorDraws, param: usize) -> Vec<Vec<f64>> {
    (0..draws.n_chains())
        .map(|c| {
            (0..draws.n_draws())
                .map(|d| draws.draws[(c, d, param)])
                .collect()
        })
        .collect()
}

/// Per-parameter posterior summary with convergence diagnostics.
pub fn summarize(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    (0..draws.dim())
        .map(|p| {
            let chains = chains_of(draws, p);
            let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
            pooled.sort_by(f64::total_cmp);
            let q = |frac: f64| {
                let pos = frac * (pooled.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let w = pos - lo as f64;
                pooled[lo] * (1.0 - w) + pooled[hi] * w
            };
            let m = mean(&pooled);
            let sd = variance(&pooled).sqrt();
            let r = rhat(&chains);
            ParamSummary {
                name: draws.names[p].clone(),
                mean: m,
                sd,
                q5: q(0.05),
                q50: q(0.5),
                q95: q(0.95),
                rhat: r,
                ess_bulk: ess_bulk(&chains),
                ess_tail: ess_tail(&chains),
                constant: r.is_nan() && sd == 0.0,
            }
        })
        .collect()
}
