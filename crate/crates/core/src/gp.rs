//! Low-rank Gaussian-process trend: squared-exponential + constant kernel,
//! deterministic inducing selection, and Woodbury/determinant-lemma algebra so
//! the per-patient marginal likelihood costs O(G m^2) instead of O(G^3).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::Error;
use crate::math::LN_2PI;
use crate::Result;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelParams {
    pub se_amplitude: f64,
    pub se_lengthscale: f64,
    pub const_amplitude: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.se_lengthscale > 0.0) || !self.se_lengthscale.is_finite() {
            return Err(Error::Domain(format!(
                "se_lengthscale must be positive, got {}",
                self.se_lengthscale
            )));
        }
        for (name, v) in [
            ("se_amplitude", self.se_amplitude),
            ("const_amplitude", self.const_amplitude),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Indices (into a time grid) and times of the inducing points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InducingSet {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
}

/// Deterministic inducing selection: the indices nearest an even grid over
/// `[0, G-1]`, deduplicated, then padded with the smallest unused indices.
pub fn select_inducing(times: &[f64], m: usize) -> Result<InducingSet> {
    let g = times.len();
    if m == 0 || m > g {
        return Err(Error::Domain(format!(
            "inducing count {m} out of range for grid of {g}"
        )));
    }
    let mut indices: Vec<usize> = Vec::with_capacity(m);
    if m == 1 {
        indices.push(0);
    } else {
        for i in 0..m {
            let pos = i as f64 * (g - 1) as f64 / (m - 1) as f64;
            let idx = pos.round() as usize;
            if !indices.contains(&idx) {
                indices.push(idx);
            }
        }
    }
    let mut next = 0usize;
    while indices.len() < m {
        while indices.contains(&next) {
            next += 1;
        }
        indices.push(next);
    }
    indices.sort_unstable();
    let sel_times = indices.iter().map(|&i| times[i]).collect();
    Ok(InducingSet {
        indices,
        times: sel_times,
    })
}

fn kernel_entry(d: f64, se2: f64, c2: f64, inv_2l2: f64) -> f64 {
    se2 * (-d * d * inv_2l2).exp() + c2
}

/// Dense kernel cross-matrix between two time vectors.
pub fn kernel(times_a: &[f64], times_b: &[f64], kp: &KernelParams) -> Result<Array2<f64>> {
    kp.validate()?;
    let se2 = kp.se_amplitude * kp.se_amplitude;
    let c2 = kp.const_amplitude * kp.const_amplitude;
    let inv_2l2 = 0.5 / (kp.se_lengthscale * kp.se_lengthscale);
    let mut out = Array2::zeros((times_a.len(), times_b.len()));
    for (i, &ta) in times_a.iter().enumerate() {
        for (j, &tb) in times_b.iter().enumerate() {
            out[(i, j)] = kernel_entry(ta - tb, se2, c2, inv_2l2);
        }
    }
    Ok(out)
}

/// Lower Cholesky in place on a row-major generic matrix; false when a pivot
/// is not strictly positive and finite.
pub(crate) fn chol_s<S: Scalar>(a: &mut [S], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - a[j * n + k].square();
        }
        let dv = d.value();
        if !(dv > 0.0) || !dv.is_finite() {
            return false;
        }
        let ld = d.sqrt();
        a[j * n + j] = ld;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / ld;
        }
    }
    true
}

pub(crate) fn solve_lower_s<S: Scalar>(l: &[S], n: usize, b: &mut [S]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

pub(crate) fn solve_lower_transpose_s<S: Scalar>(l: &[S], n: usize, b: &mut [S]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s = s - l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Marginal log-likelihood of `residual` under N(0, Q + sigma_y^2 I) where
/// Q is the inducing-point (Nystroem) approximation of the kernel Gram matrix.
///
/// Identity used, with U = K_gu and A = K_uu + U^T U / sigma^2:
///   (Q + s2 I)^{-1} = I/s2 - U A^{-1} U^T / s2^2
///   log det(Q + s2 I) = 2 G ln(sigma) + log det A - log det K_uu
#[allow(clippy::too_many_arguments)]
pub(crate) fn lowrank_marginal_loglik_s<S: Scalar>(
    residual: &[S],
    times: &[f64],
    inducing: &InducingSet,
    se_amp: S,
    lengthscale: S,
    const_amp: S,
    sigma_y: S,
    jitter: f64,
    zero: S,
) -> Option<S> {
    let g = times.len();
    let m = inducing.indices.len();
    let se2 = se_amp.square();
    let c2 = const_amp.square();
    let inv_2l2 = lengthscale.square().mul_f(2.0).recip();

    // U = K_gu, row-major G x m; only time differences are constants.
    let mut u = Vec::with_capacity(g * m);
    for &t in times {
        for &tu in &inducing.times {
            let d = t - tu;
            u.push(se2 * inv_2l2.mul_f(-d * d).exp() + c2);
        }
    }

    // B = U^T U, symmetric m x m.
    let mut b = vec![zero; m * m];
    for i in 0..m {
        for j in i..m {
            let mut s = zero;
            for row in 0..g {
                s = s + u[row * m + i] * u[row * m + j];
            }
            b[i * m + j] = s;
            b[j * m + i] = s;
        }
    }

    let sigma2 = sigma_y.square();
    let inv_sigma2 = sigma2.recip();
    let mut v = vec![zero; m];
    for (row, r) in residual.iter().enumerate() {
        for j in 0..m {
            v[j] = v[j] + u[row * m + j] * *r;
        }
    }
    let mut rtr = zero;
    for r in residual {
        rtr = rtr + r.square();
    }

    // K_uu from the inducing times, raw (jitter added per attempt).
    let mut kuu_raw = vec![zero; m * m];
    for i in 0..m {
        for j in i..m {
            let d = inducing.times[i] - inducing.times[j];
            let e = se2 * inv_2l2.mul_f(-d * d).exp() + c2;
            kuu_raw[i * m + j] = e;
            kuu_raw[j * m + i] = e;
        }
    }

    let mut jit = jitter;
    while jit <= 1e-2 * (1.0 + 1e-12) {
        let mut kuu = kuu_raw.clone();
        for i in 0..m {
            kuu[i * m + i] = kuu[i * m + i].add_f(jit);
        }
        let mut a = kuu.clone();
        for i in 0..m * m {
            a[i] = a[i] + b[i] * inv_sigma2;
        }
        if !chol_s(&mut kuu, m) {
            jit *= 10.0;
            continue;
        }
        if !chol_s(&mut a, m) {
            jit *= 10.0;
            continue;
        }
        let mut logdet_kuu = zero;
        let mut logdet_a = zero;
        for i in 0..m {
            logdet_kuu = logdet_kuu + kuu[i * m + i].ln();
            logdet_a = logdet_a + a[i * m + i].ln();
        }
        let mut w = v.clone();
        solve_lower_s(&a, m, &mut w);
        solve_lower_transpose_s(&a, m, &mut w);
        let mut vtw = zero;
        for j in 0..m {
            vtw = vtw + v[j] * w[j];
        }
        let quad = (rtr - vtw * inv_sigma2) * inv_sigma2;
        let logdet = sigma2.ln().mul_f(g as f64) + (logdet_a - logdet_kuu).mul_f(2.0);
        let ll = (logdet + quad).add_f(g as f64 * LN_2PI).mul_f(-0.5);
        if !ll.value().is_finite() {
            return None;
        }
        return Some(ll);
    }
    None
}

/// f64 entry point with argument validation.
pub fn lowrank_marginal_loglik(
    residual: &[f64],
    times: &[f64],
    inducing: &InducingSet,
    kp: &KernelParams,
    sigma_y: f64,
    jitter: f64,
) -> Result<f64> {
    kp.validate()?;
    if residual.len() != times.len() {
        return Err(Error::Domain(format!(
            "residual length {} vs {} times",
            residual.len(),
            times.len()
        )));
    }
    if inducing.indices.iter().any(|&i| i >= times.len()) {
        return Err(Error::Domain("inducing index out of range".into()));
    }
    if !(sigma_y > 0.0) {
        return Err(Error::Domain(format!("sigma_y must be positive, got {sigma_y}")));
    }
    lowrank_marginal_loglik_s(
        residual,
        times,
        inducing,
        kp.se_amplitude,
        kp.se_lengthscale,
        kp.const_amplitude,
        sigma_y,
        jitter,
        0.0,
    )
    .ok_or_else(|| Error::Numerical("kernel factorization failed beyond jitter schedule".into()))
}

/// Diagonal of the low-rank Gram approximation at `times`: the per-point
/// prior variance the marginal likelihood actually uses (excluding noise).
pub fn lowrank_diag(
    times: &[f64],
    inducing: &InducingSet,
    kp: &KernelParams,
    jitter: f64,
) -> Result<Vec<f64>> {
    kp.validate()?;
    let m = inducing.times.len();
    if m == 0 {
        return Ok(vec![0.0; times.len()]);
    }
    let se2 = kp.se_amplitude * kp.se_amplitude;
    let c2 = kp.const_amplitude * kp.const_amplitude;
    let inv_2l2 = 0.5 / (kp.se_lengthscale * kp.se_lengthscale);
    let mut j = jitter.max(1e-12);
    while j <= 1e-2 {
        let mut kuu = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                kuu[a * m + b] = kernel_entry(inducing.times[a] - inducing.times[b], se2, c2, inv_2l2);
            }
            kuu[a * m + a] += j;
        }
        if !chol_s(&mut kuu, m) {
            j *= 10.0;
            continue;
        }
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let mut col: Vec<f64> = inducing
                .times
                .iter()
                .map(|&u| kernel_entry(t - u, se2, c2, inv_2l2))
                .collect();
            solve_lower_s(&kuu, m, &mut col);
            out.push(col.iter().map(|x| x * x).sum());
        }
        return Ok(out);
    }
    Err(Error::Numerical(
        "kernel factorization failed beyond jitter schedule".into(),
    ))
}

/// Posterior mean and pointwise variance of the trend at `query_times`, with
/// the training Gram matrix replaced by its low-rank-plus-noise form and exact
/// cross-covariances to the queries. Variance is clamped at zero.
pub fn trend_posterior(
    residual: &[f64],
    obs_times: &[f64],
    query_times: &[f64],
    inducing: &InducingSet,
    kp: &KernelParams,
    sigma_y: f64,
    jitter: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    kp.validate()?;
    if residual.len() != obs_times.len() {
        return Err(Error::Domain(format!(
            "residual length {} vs {} observation times",
            residual.len(),
            obs_times.len()
        )));
    }
    if inducing.indices.iter().any(|&i| i >= obs_times.len()) {
        return Err(Error::Domain("inducing index out of range".into()));
    }
    if !(sigma_y > 0.0) {
        return Err(Error::Domain(format!("sigma_y must be positive, got {sigma_y}")));
    }
    let g = obs_times.len();
    let m = inducing.indices.len();
    let se2 = kp.se_amplitude * kp.se_amplitude;
    let c2 = kp.const_amplitude * kp.const_amplitude;
    let inv_2l2 = 0.5 / (kp.se_lengthscale * kp.se_lengthscale);
    let sigma2 = sigma_y * sigma_y;

    let mut u = vec![0.0; g * m];
    for (row, &t) in obs_times.iter().enumerate() {
        for (col, &tu) in inducing.times.iter().enumerate() {
            u[row * m + col] = kernel_entry(t - tu, se2, c2, inv_2l2);
        }
    }

    // A = K_uu + U^T U / sigma^2, factored at the first workable jitter.
    let mut kuu_raw = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            kuu_raw[i * m + j] =
                kernel_entry(inducing.times[i] - inducing.times[j], se2, c2, inv_2l2);
        }
    }
    let mut a_chol = None;
    let mut jit = jitter;
    while jit <= 1e-2 * (1.0 + 1e-12) {
        let mut a = kuu_raw.clone();
        for i in 0..m {
            a[i * m + i] += jit;
        }
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for row in 0..g {
                    s += u[row * m + i] * u[row * m + j];
                }
                a[i * m + j] += s / sigma2;
            }
        }
        if chol_s(&mut a, m) {
            a_chol = Some(a);
            break;
        }
        jit *= 10.0;
    }
    let a_chol = a_chol.ok_or_else(|| {
        Error::Numerical("kernel factorization failed beyond jitter schedule".into())
    })?;

    let solve_a = |b: &mut Vec<f64>| {
        solve_lower_s(&a_chol, m, b);
        solve_lower_transpose_s(&a_chol, m, b);
    };

    // Precompute pieces of (Q + s2 I)^{-1} residual.
    let mut v_res = vec![0.0; m];
    for row in 0..g {
        for j in 0..m {
            v_res[j] += u[row * m + j] * residual[row];
        }
    }
    let mut w_res = v_res.clone();
    solve_a(&mut w_res);

    let k_tt = se2 + c2;
    let mut means = Vec::with_capacity(query_times.len());
    let mut vars = Vec::with_capacity(query_times.len());
    let mut k_t = vec![0.0; g];
    let mut ut_kt = vec![0.0; m];
    for &tq in query_times {
        for (row, &t) in obs_times.iter().enumerate() {
            k_t[row] = kernel_entry(tq - t, se2, c2, inv_2l2);
        }
        ut_kt.iter_mut().for_each(|x| *x = 0.0);
        let mut kt_res = 0.0;
        let mut kt_kt = 0.0;
        for row in 0..g {
            let kv = k_t[row];
            kt_res += kv * residual[row];
            kt_kt += kv * kv;
            for j in 0..m {
                ut_kt[j] += u[row * m + j] * kv;
            }
        }
        let mut a_ut_kt = ut_kt.clone();
        solve_a(&mut a_ut_kt);
        let dot_w = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mean = kt_res / sigma2 - dot_w(&ut_kt, &w_res) / (sigma2 * sigma2);
        let kt_qinv_kt = kt_kt / sigma2 - dot_w(&ut_kt, &a_ut_kt) / (sigma2 * sigma2);
        means.push(mean);
        vars.push((k_tt - kt_qinv_kt).max(0.0));
    }
    Ok((means, vars))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{dense_cholesky, dense_mvn_logpdf};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn kp(se: f64, ls: f64, c: f64) -> KernelParams {
        KernelParams {
            se_amplitude: se,
            se_lengthscale: ls,
            const_amplitude: c,
        }
    }

    #[test]
    fn kernel_single_point_values() {
        let k = kernel(&[0.0], &[0.0], &kp(1.0, 1.0, 2.0)).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0 + 4.0, max_relative = 1e-15);
        let k = kernel(&[0.0], &[1.0], &kp(1.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(k[(0, 0)], (-0.5f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn kernel_is_symmetric_and_psd_with_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(2..12);
            let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..300.0)).collect();
            times.sort_by(f64::total_cmp);
            let params = kp(
                rng.gen_range(0.0..2.0),
                rng.gen_range(5.0..200.0),
                rng.gen_range(0.0..2.0),
            );
            let k = kernel(&times, &times, &params).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(k[(i, j)], k[(j, i)]);
                }
            }
            // eigenvalues >= -1e-8 iff the jittered matrix factors
            let mut a: Vec<f64> = k.iter().cloned().collect();
            for i in 0..n {
                a[i * n + i] += 1e-8;
            }
            assert!(dense_cholesky(&mut a, n).is_ok());
        }
    }

    #[test]
    fn kernel_rejects_bad_params() {
        assert!(kernel(&[0.0], &[0.0], &kp(1.0, 0.0, 1.0)).is_err());
        assert!(kernel(&[0.0], &[0.0], &kp(-1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn inducing_endpoints_and_even_grid() {
        let times: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = select_inducing(&times, 2).unwrap();
        assert_eq!(s.indices, vec![0, 9]);
        let s = select_inducing(&times, 4).unwrap();
        assert_eq!(s.indices, vec![0, 3, 6, 9]);
        let s = select_inducing(&times, 10).unwrap();
        assert_eq!(s.indices, (0..10).collect::<Vec<_>>());
        assert!(select_inducing(&times, 0).is_err());
        assert!(select_inducing(&times, 11).is_err());
    }

    #[test]
    fn inducing_pads_after_dedup() {
        // 3 points, m=3: grid rounds to {0,1,2} anyway; with 2 points m=2 grid {0,1}
        let s = select_inducing(&[0.0, 1.0, 100.0], 3).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2]);
        // force collisions: m close to G with tiny G
        let s = select_inducing(&[0.0, 1.0], 2).unwrap();
        assert_eq!(s.indices, vec![0, 1]);
    }

    #[test]
    fn full_rank_lowrank_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let g = rng.gen_range(3..20);
            let mut times = vec![0.0];
            for _ in 1..g {
                times.push(times.last().unwrap() + rng.gen_range(1.0..3.0));
            }
            let params = kp(
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.1..1.0),
            );
            let sigma_y = rng.gen_range(0.3..1.0);
            let residual: Vec<f64> = (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let inducing = select_inducing(&times, g).unwrap();
            // jitter far below the comparison tolerance so the Nystroem form
            // and the exact Gram matrix agree to 1e-6
            let ll = lowrank_marginal_loglik(&residual, &times, &inducing, &params, sigma_y, 1e-10)
                .unwrap();
            let mut cov: Vec<f64> = kernel(&times, &times, &params)
                .unwrap()
                .iter()
                .cloned()
                .collect();
            for i in 0..g {
                cov[i * g + i] += sigma_y * sigma_y;
            }
            let dense = dense_mvn_logpdf(&cov, g, &residual).unwrap();
            assert_relative_eq!(ll, dense, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_amplitudes_give_iid_loglik() {
        let times: Vec<f64> = (0..30).map(|i| i as f64 * 10.0).collect();
        let residual: Vec<f64> = times.iter().map(|t| (t * 0.01).sin()).collect();
        let sigma_y = 0.7;
        let inducing = select_inducing(&times, 8).unwrap();
        let ll = lowrank_marginal_loglik(
            &residual,
            &times,
            &inducing,
            &kp(0.0, 100.0, 0.0),
            sigma_y,
            1e-6,
        )
        .unwrap();
        let iid: f64 = residual
            .iter()
            .map(|r| crate::math::normal_logpdf(*r, 0.0, sigma_y))
            .sum();
        assert_relative_eq!(ll, iid, epsilon = 1e-9);
    }

    #[test]
    fn small_case_matches_brute_force_nystroem() {
        // G=3, m=2: build Q explicitly with a dense inverse of jittered K_uu.
        let times = [0.0, 1.0, 2.0];
        let params = kp(1.2, 1.5, 0.4);
        let sigma_y = 0.5;
        let jitter = 1e-9;
        let residual = [0.3, -0.7, 1.1];
        let inducing = select_inducing(&times, 2).unwrap();
        assert_eq!(inducing.indices, vec![0, 2]);
        let kgu = kernel(&times, &inducing.times, &params).unwrap();
        let kuu = kernel(&inducing.times, &inducing.times, &params).unwrap();
        let (a, b, c, d) = (
            kuu[(0, 0)] + jitter,
            kuu[(0, 1)],
            kuu[(1, 0)],
            kuu[(1, 1)] + jitter,
        );
        let det = a * d - b * c;
        let kuu_inv = [d / det, -b / det, -c / det, a / det];
        let mut q = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for r in 0..2 {
                    for cc in 0..2 {
                        s += kgu[(i, r)] * kuu_inv[r * 2 + cc] * kgu[(j, cc)];
                    }
                }
                q[i * 3 + j] = s;
                if i == j {
                    q[i * 3 + j] += sigma_y * sigma_y;
                }
            }
        }
        let dense = dense_mvn_logpdf(&q, 3, &residual).unwrap();
        let ll =
            lowrank_marginal_loglik(&residual, &times, &inducing, &params, sigma_y, jitter).unwrap();
        assert_relative_eq!(ll, dense, epsilon = 1e-8);
    }

    #[test]
    fn loglik_decreases_when_residual_grows() {
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 5.0).collect();
        let residual: Vec<f64> = times.iter().map(|t| (t * 0.05).cos()).collect();
        let big: Vec<f64> = residual.iter().map(|r| r * 10.0).collect();
        let inducing = select_inducing(&times, 8).unwrap();
        let params = kp(1.0, 60.0, 0.5);
        let l1 = lowrank_marginal_loglik(&residual, &times, &inducing, &params, 0.4, 1e-6).unwrap();
        let l2 = lowrank_marginal_loglik(&big, &times, &inducing, &params, 0.4, 1e-6).unwrap();
        assert!(l2 < l1);
    }

    #[test]
    fn near_full_rank_approximation_is_close() {
        // Smooth residual, m = G-1: relative loglik deviation below 1%.
        let g = 24;
        let times: Vec<f64> = (0..g).map(|i| i as f64 * 15.0).collect();
        let residual: Vec<f64> = times.iter().map(|t| 0.8 * (t / 80.0).sin()).collect();
        let params = kp(1.0, 90.0, 0.3);
        let full = select_inducing(&times, g).unwrap();
        let near = select_inducing(&times, g - 1).unwrap();
        let l_full =
            lowrank_marginal_loglik(&residual, &times, &full, &params, 0.5, 1e-8).unwrap();
        let l_near =
            lowrank_marginal_loglik(&residual, &times, &near, &params, 0.5, 1e-8).unwrap();
        assert!(
            ((l_full - l_near) / l_full).abs() < 0.01,
            "full {l_full} vs near {l_near}"
        );
    }

    #[test]
    fn trend_zero_residual_zero_mean() {
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 10.0).collect();
        let inducing = select_inducing(&times, 6).unwrap();
        let (mean, var) = trend_posterior(
            &vec![0.0; 20],
            &times,
            &[5.0, 55.0, 500.0],
            &inducing,
            &kp(1.0, 50.0, 0.5),
            0.4,
            1e-6,
        )
        .unwrap();
        for m in mean {
            assert_relative_eq!(m, 0.0, epsilon = 1e-12);
        }
        for v in var {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn trend_mean_is_linear_in_residual() {
        let times: Vec<f64> = (0..15).map(|i| i as f64 * 12.0).collect();
        let inducing = select_inducing(&times, 5).unwrap();
        let params = kp(0.9, 40.0, 0.3);
        let r1: Vec<f64> = times.iter().map(|t| (t * 0.03).sin()).collect();
        let query = [30.0, 95.0];
        let (m1, _) =
            trend_posterior(&r1, &times, &query, &inducing, &params, 0.5, 1e-6).unwrap();
        let r2: Vec<f64> = r1.iter().map(|v| 2.0 * v).collect();
        let (m2, _) =
            trend_posterior(&r2, &times, &query, &inducing, &params, 0.5, 1e-6).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            assert_relative_eq!(2.0 * a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn trend_interpolates_as_noise_vanishes() {
        let g = 12;
        let times: Vec<f64> = (0..g).map(|i| i as f64 * 2.0).collect();
        let residual: Vec<f64> = times.iter().map(|t| 0.5 + (t * 0.2).sin()).collect();
        let inducing = select_inducing(&times, g).unwrap();
        // short lengthscale keeps the Gram matrix well conditioned, so the
        // sigma -> 0 limit is clean
        let params = kp(1.0, 1.5, 0.5);
        let (mean, _) = trend_posterior(
            &residual, &times, &times, &inducing, &params, 1e-4, 1e-10,
        )
        .unwrap();
        for (m, r) in mean.iter().zip(&residual) {
            assert_relative_eq!(m, r, epsilon = 1e-5);
        }
    }

    #[test]
    fn const_kernel_extrapolates_to_weighted_level() {
        // With a pure constant kernel the far-field mean is
        // c^2 * sum(r) / (sigma^2 + G c^2); compare against the closed form.
        let g = 25;
        let times: Vec<f64> = (0..g).map(|i| i as f64 * 10.0).collect();
        let residual: Vec<f64> = (0..g).map(|i| 1.0 + 0.3 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let c = 0.8;
        let sigma = 0.5;
        let params = kp(0.0, 50.0, c);
        let inducing = select_inducing(&times, 6).unwrap();
        let (mean, var) = trend_posterior(
            &residual,
            &times,
            &[1e5, 2e5],
            &inducing,
            &params,
            sigma,
            1e-10,
        )
        .unwrap();
        let sum_r: f64 = residual.iter().sum();
        let level = c * c * sum_r / (sigma * sigma + g as f64 * c * c);
        for m in &mean {
            assert_relative_eq!(*m, level, max_relative = 1e-4);
        }
        // far-field variance settles at a positive level
        assert!(var[0] > 0.0);
        assert_relative_eq!(var[0], var[1], max_relative = 1e-6);
    }

    #[test]
    fn bands_widen_monotonically_beyond_training() {
        let g = 40;
        let times: Vec<f64> = (0..g).map(|i| i as f64 * 15.0).collect();
        let residual: Vec<f64> = times.iter().map(|t| 0.6 * (t / 150.0).sin()).collect();
        let params = kp(1.0, 120.0, 0.7);
        let inducing = select_inducing(&times, 12).unwrap();
        let last = *times.last().unwrap();
        let query: Vec<f64> = (0..30).map(|i| last + i as f64 * 30.0).collect();
        let (_, var) =
            trend_posterior(&residual, &times, &query, &inducing, &params, 0.4, 1e-6).unwrap();
        for w in var.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-10,
                "variance not monotone: {} then {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn mismatched_lengths_error() {
        let inducing = select_inducing(&[0.0, 1.0], 2).unwrap();
        let e = lowrank_marginal_loglik(&[0.0], &[0.0, 1.0], &inducing, &kp(1.0, 1.0, 0.1), 0.5, 1e-6);
        assert!(e.is_err());
        let e = trend_posterior(
            &[0.0],
            &[0.0, 1.0],
            &[0.5],
            &inducing,
            &kp(1.0, 1.0, 0.1),
            0.5,
            1e-6,
        );
        assert!(e.is_err());
    }

    #[test]
    fn lowrank_diag_matches_kernel_at_full_rank() {
        let times: Vec<f64> = (0..12).map(|i| i as f64 * 2.0).collect();
        let k = kp(1.3, 5.0, 0.4);
        let full = select_inducing(&times, times.len()).unwrap();
        let d = lowrank_diag(&times, &full, &k, 1e-10).unwrap();
        let want = 1.3 * 1.3 + 0.4 * 0.4;
        for q in &d {
            assert_relative_eq!(*q, want, max_relative = 1e-6);
        }
        // a Nystrom approximation never overshoots the prior variance
        let sparse = select_inducing(&times, 4).unwrap();
        let d4 = lowrank_diag(&times, &sparse, &k, 1e-10).unwrap();
        for q in &d4 {
            assert!(*q <= want + 1e-9, "diag {q} above prior variance {want}");
        }
        // inducing points themselves reproduce the prior variance exactly
        for &i in &sparse.indices {
            assert_relative_eq!(d4[i], want, max_relative = 1e-6);
        }
    }
}
