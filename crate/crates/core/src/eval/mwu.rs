//! Mann-Whitney rank-sum test with midrank ties: exact enumeration for small
//! samples, tie-corrected Normal approximation otherwise.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::math::normal_cdf;
use crate::Result;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UTest {
    pub u: f64,
    /// One-sided p for the alternative that `a` is stochastically smaller
    /// than `b` (small U favors the alternative).
    pub p_one_sided: f64,
    /// True when every pooled value is identical; p is reported as 0.5.
    pub degenerate: bool,
    /// True when the exact conditional distribution was enumerated.
    pub exact: bool,
}

const EXACT_LIMIT: usize = 12;

/// Midranks of the pooled sample, in pooled order.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

fn u_from_ranks(ranks: &[f64], idx: &[usize], n_a: usize) -> f64 {
    let r: f64 = idx.iter().map(|&i| ranks[i]).sum();
    r - (n_a * (n_a + 1)) as f64 / 2.0
}

/// Walks all C(n, k) index subsets in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        f(&c);
        // advance the rightmost index that can still move
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if c[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("both samples must be nonempty".into()));
    }
    for v in a.iter().chain(b) {
        if !v.is_finite() {
            return Err(Error::Domain("samples must be finite".into()));
        }
    }
    let (n_a, n_b) = (a.len(), b.len());
    let n = n_a + n_b;
    let mut pooled = Vec::with_capacity(n);
    pooled.extend_from_slice(a);
    pooled.extend_from_slice(b);

    if pooled.iter().all(|&v| v == pooled[0]) {
        return Ok(UTest {
            u: (n_a * n_b) as f64 / 2.0,
            p_one_sided: 0.5,
            degenerate: true,
            exact: false,
        });
    }

    let ranks = midranks(&pooled);
    let a_idx: Vec<usize> = (0..n_a).collect();
    let u_obs = u_from_ranks(&ranks, &a_idx, n_a);

    if n <= EXACT_LIMIT {
        // exact conditional distribution given the observed pooled values
        let mut le = 0u64;
        let mut total = 0u64;
        for_each_combination(n, n_a, |c| {
            total += 1;
            if u_from_ranks(&ranks, c, n_a) <= u_obs + 1e-9 {
                le += 1;
            }
        });
        return Ok(UTest {
            u: u_obs,
            p_one_sided: le as f64 / total as f64,
            degenerate: false,
            exact: true,
        });
    }

    // Normal approximation with tie correction and continuity correction
    let mean = (n_a * n_b) as f64 / 2.0;
    let mut tie_term = 0.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let nf = n as f64;
    let var = (n_a * n_b) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(UTest {
            u: u_obs,
            p_one_sided: 0.5,
            degenerate: true,
            exact: false,
        });
    }
    let z = (u_obs + 0.5 - mean) / var.sqrt();
    Ok(UTest {
        u: u_obs,
        p_one_sided: normal_cdf(z),
        degenerate: false,
        exact: false,
    })
}
