//! Fit evaluation: trajectory reconstruction from posterior draws, the five
//! variance/error metrics over meal windows, coefficient-recovery cosine
//! similarity, a rank-sum test and PSIS-LOO model comparison.

pub mod mwu;
pub mod psis;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::PatientData;
use crate::error::Error;
use crate::gp::{lowrank_diag, select_inducing, trend_posterior, KernelParams};
use crate::inference::PosteriorDraws;
use crate::math::{mean, normal_cdf, normal_logpdf, variance};
use crate::model::{sum_responses, MeasurementLatents, ModelSpec, ResponseCoefficients};
use crate::params::{BlockId, Layout};
use crate::Result;

pub use mwu::{mann_whitney_u, UTest};
pub use psis::{psis_loo, LooResult};

/// Union of per-meal intervals [t-60, t+180] minutes around reported times,
/// merged where they overlap.
pub fn meal_windows(patient: &PatientData) -> Vec<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = patient
        .events
        .iter()
        .map(|e| (e.time_min - 60.0, e.time_min + 180.0))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for s in spans {
        match merged.last_mut() {
            Some(last) if s.0 <= last.1 => last.1 = last.1.max(s.1),
            _ => merged.push(s),
        }
    }
    merged
}

pub fn in_windows(windows: &[(f64, f64)], t: f64) -> bool {
    windows.iter().any(|&(lo, hi)| t >= lo && t <= hi)
}

/// Per-draw trajectory components for every patient: the GP trend posterior
/// given that draw's parameters, its pointwise variance, and the summed
/// treatment response, all on the full observation grid.
pub struct TrajectoryDraws {
    /// draws x times, one matrix per patient
    pub trend: Vec<Array2<f64>>,
    pub trend_var: Vec<Array2<f64>>,
    pub response: Vec<Array2<f64>>,
}

/// Evenly thinned pooled draw indices (chain-major) of size <= max_draws.
fn thin_indices(n_total: usize, max_draws: usize) -> Vec<usize> {
    if n_total <= max_draws {
        return (0..n_total).collect();
    }
    (0..max_draws)
        .map(|i| i * n_total / max_draws)
        .collect()
}

fn draw_row(posterior: &PosteriorDraws, pooled_idx: usize) -> Vec<f64> {
    let d = posterior.n_draws();
    let (c, i) = (pooled_idx / d, pooled_idx % d);
    (0..posterior.dim()).map(|p| posterior.draws[(c, i, p)]).collect()
}

/// Full-event-length latents from a draw's training-event blocks.
fn latents_for(layout: &Layout, row: &[f64], n: usize, patient: &PatientData) -> MeasurementLatents {
    let mut lat = MeasurementLatents::zeros(patient.events.len());
    if let Some(&d) = layout.get(row, BlockId::ReportBias(n)).first() {
        lat.report_bias = d;
    }
    let eps = layout.get(row, BlockId::TimeOffsets(n));
    let ld = layout.get(row, BlockId::LogAmountErrors(n));
    let mut k = 0;
    for (m, &in_train) in patient.train_events.iter().enumerate() {
        if in_train {
            if let Some(&e) = eps.get(k) {
                lat.time_offsets[m] = e;
            }
            if let Some(&v) = ld.get(k) {
                lat.log_amount_errors[m] = v;
            }
            k += 1;
        }
    }
    lat
}

fn kernel_for(layout: &Layout, row: &[f64], n: usize) -> KernelParams {
    KernelParams {
        se_amplitude: layout.get(row, BlockId::KernelSeAmp(n))[0],
        se_lengthscale: layout.get(row, BlockId::KernelSeLengthscale(n))[0],
        const_amplitude: layout.get(row, BlockId::KernelConstAmp(n))[0],
    }
}

/// Reconstructs trend and response trajectories for up to `max_draws` evenly
/// thinned posterior draws. The trend conditions on training points only and
/// is evaluated on the full grid.
pub fn trajectory_draws(
    posterior: &PosteriorDraws,
    layout: &Layout,
    spec: &ModelSpec,
    data: &[PatientData],
    max_draws: usize,
) -> Result<TrajectoryDraws> {
    if data.len() != layout.n_patients {
        return Err(Error::Domain(format!(
            "layout covers {} patients, data has {}",
            layout.n_patients,
            data.len()
        )));
    }
    let idx = thin_indices(posterior.n_chains() * posterior.n_draws(), max_draws.max(1));
    let s = idx.len();
    let mut out = TrajectoryDraws {
        trend: Vec::with_capacity(data.len()),
        trend_var: Vec::with_capacity(data.len()),
        response: Vec::with_capacity(data.len()),
    };
    for patient in data {
        let g = patient.obs_times.len();
        out.trend.push(Array2::zeros((s, g)));
        out.trend_var.push(Array2::zeros((s, g)));
        out.response.push(Array2::zeros((s, g)));
    }
    for (si, &pooled) in idx.iter().enumerate() {
        let row = draw_row(posterior, pooled);
        let sigma_y = layout.get(&row, BlockId::SigmaY)[0];
        for (n, patient) in data.iter().enumerate() {
            let coef = ResponseCoefficients {
                beta_h: layout.get(&row, BlockId::BetaH(n)).to_vec(),
                beta_l: layout.get(&row, BlockId::BetaL(n)).to_vec(),
            };
            let lat = latents_for(layout, &row, n, patient);
            let resp = sum_responses(
                patient,
                &coef,
                &lat,
                &patient.obs_times,
                spec.lengthscale_floor,
            )?;
            let train_times = patient.train_times();
            let residual: Vec<f64> = patient
                .obs_times
                .iter()
                .zip(patient.outcome.iter().zip(&resp))
                .zip(&patient.train_mask)
                .filter(|(_, &m)| m)
                .map(|((_, (y, r)), _)| y - r)
                .collect();
            let kp = kernel_for(layout, &row, n);
            let inducing = select_inducing(&train_times, spec.inducing_count.min(train_times.len()))?;
            let (tm, tv) = trend_posterior(
                &residual,
                &train_times,
                &patient.obs_times,
                &inducing,
                &kp,
                sigma_y,
                spec.jitter,
            )?;
            for i in 0..patient.obs_times.len() {
                out.trend[n][(si, i)] = tm[i];
                out.trend_var[n][(si, i)] = tv[i];
                out.response[n][(si, i)] = resp[i];
            }
        }
    }
    Ok(out)
}

/// Posterior-mean curves plus 5%/95% bands of the latent total trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub trend_mean: Vec<Vec<f64>>,
    pub response_mean: Vec<Vec<f64>>,
    pub total_mean: Vec<Vec<f64>>,
    pub band_lower: Vec<Vec<f64>>,
    pub band_upper: Vec<Vec<f64>>,
}

/// Quantile of an equally weighted mixture of Normals by bisection on the CDF.
fn mixture_quantile(means: &[f64], sds: &[f64], q: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (m, s) in means.iter().zip(sds) {
        lo = lo.min(m - 10.0 * s - 1e-9);
        hi = hi.max(m + 10.0 * s + 1e-9);
    }
    let cdf = |x: f64| {
        means
            .iter()
            .zip(sds)
            .map(|(m, s)| {
                if *s > 0.0 {
                    normal_cdf((x - m) / s)
                } else {
                    f64::from(u8::from(x >= *m))
                }
            })
            .sum::<f64>()
            / means.len() as f64
    };
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn summarize_trajectories(td: &TrajectoryDraws) -> TrajectorySummary {
    let mut out = TrajectorySummary {
        trend_mean: Vec::new(),
        response_mean: Vec::new(),
        total_mean: Vec::new(),
        band_lower: Vec::new(),
        band_upper: Vec::new(),
    };
    for n in 0..td.trend.len() {
        let (s, g) = (td.trend[n].shape()[0], td.trend[n].shape()[1]);
        let mut tm = vec![0.0; g];
        let mut rm = vec![0.0; g];
        let mut lo = vec![0.0; g];
        let mut hi = vec![0.0; g];
        for i in 0..g {
            let mut means = Vec::with_capacity(s);
            let mut sds = Vec::with_capacity(s);
            for si in 0..s {
                means.push(td.trend[n][(si, i)] + td.response[n][(si, i)]);
                sds.push(td.trend_var[n][(si, i)].max(0.0).sqrt());
                tm[i] += td.trend[n][(si, i)];
                rm[i] += td.response[n][(si, i)];
            }
            tm[i] /= s as f64;
            rm[i] /= s as f64;
            lo[i] = mixture_quantile(&means, &sds, 0.05);
            hi[i] = mixture_quantile(&means, &sds, 0.95);
        }
        let total = tm.iter().zip(&rm).map(|(a, b)| a + b).collect();
        out.trend_mean.push(tm);
        out.response_mean.push(rm);
        out.total_mean.push(total);
        out.band_lower.push(lo);
        out.band_upper.push(hi);
    }
    out
}

/// Indices of training points inside the patient's meal windows.
fn window_train_points(patient: &PatientData) -> Vec<usize> {
    let ws = meal_windows(patient);
    (0..patient.obs_times.len())
        .filter(|&i| patient.train_mask[i] && in_windows(&ws, patient.obs_times[i]))
        .collect()
}

fn window_test_points(patient: &PatientData) -> Vec<usize> {
    let ws = meal_windows(patient);
    (0..patient.obs_times.len())
        .filter(|&i| !patient.train_mask[i] && in_windows(&ws, patient.obs_times[i]))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceExplained {
    pub m1: f64,
    pub m2: f64,
    /// Per-patient ratios; NaN where outcome variance vanishes in windows.
    pub per_patient_m1: Vec<f64>,
    pub per_patient_m2: Vec<f64>,
    /// Patients whose windowed outcome variance is zero or near-empty.
    pub degenerate: Vec<usize>,
}

/// M1: share of windowed training-outcome variance carried by the trend.
/// M2: additional share carried once responses are added.
pub fn metric_m1_m2(
    trend_mean: &[Vec<f64>],
    response_mean: &[Vec<f64>],
    data: &[PatientData],
) -> Result<VarianceExplained> {
    check_fit_shape(trend_mean, data)?;
    check_fit_shape(response_mean, data)?;
    let mut per_m1 = Vec::with_capacity(data.len());
    let mut per_m2 = Vec::with_capacity(data.len());
    let mut degenerate = Vec::new();
    for (n, patient) in data.iter().enumerate() {
        let pts = window_train_points(patient);
        let y: Vec<f64> = pts.iter().map(|&i| patient.outcome[i]).collect();
        let vy = variance(&y);
        if pts.len() < 2 || vy <= 0.0 {
            per_m1.push(f64::NAN);
            per_m2.push(f64::NAN);
            degenerate.push(n);
            continue;
        }
        let t: Vec<f64> = pts.iter().map(|&i| trend_mean[n][i]).collect();
        let tr: Vec<f64> = pts
            .iter()
            .map(|&i| trend_mean[n][i] + response_mean[n][i])
            .collect();
        let m1 = variance(&t) / vy;
        per_m1.push(m1);
        per_m2.push(variance(&tr) / vy - m1);
    }
    let valid_m1: Vec<f64> = per_m1.iter().copied().filter(|v| v.is_finite()).collect();
    let valid_m2: Vec<f64> = per_m2.iter().copied().filter(|v| v.is_finite()).collect();
    if valid_m1.is_empty() {
        return Err(Error::Domain(
            "no patient has positive outcome variance inside meal windows".into(),
        ));
    }
    Ok(VarianceExplained {
        m1: mean(&valid_m1),
        m2: mean(&valid_m2),
        per_patient_m1: per_m1,
        per_patient_m2: per_m2,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// All training points.
    Train,
    /// Test points inside meal windows.
    Test,
}

/// Pointwise MSE of the posterior-mean total trajectory, averaged over
/// patients not marked excluded. Per-patient NaN where no points qualify.
pub fn metric_mse(
    total_mean: &[Vec<f64>],
    data: &[PatientData],
    split: Split,
    excluded: &[bool],
) -> Result<(f64, Vec<f64>)> {
    check_fit_shape(total_mean, data)?;
    if excluded.len() != data.len() {
        return Err(Error::Domain("exclusion mask length mismatch".into()));
    }
    let mut per = Vec::with_capacity(data.len());
    for (n, patient) in data.iter().enumerate() {
        let pts: Vec<usize> = match split {
            Split::Train => (0..patient.obs_times.len())
                .filter(|&i| patient.train_mask[i])
                .collect(),
            Split::Test => window_test_points(patient),
        };
        if pts.is_empty() {
            per.push(f64::NAN);
            continue;
        }
        let mse = pts
            .iter()
            .map(|&i| (total_mean[n][i] - patient.outcome[i]).powi(2))
            .sum::<f64>()
            / pts.len() as f64;
        per.push(mse);
    }
    let included: Vec<f64> = per
        .iter()
        .zip(excluded)
        .filter(|(v, &ex)| !ex && v.is_finite())
        .map(|(v, _)| *v)
        .collect();
    let agg = if included.is_empty() {
        f64::NAN
    } else {
        mean(&included)
    };
    Ok((agg, per))
}

/// M5: location-insensitive response check, mean absolute difference between
/// response variance and outcome variance over test-window points.
pub fn metric_m5(
    response_mean: &[Vec<f64>],
    data: &[PatientData],
) -> Result<(f64, Vec<f64>)> {
    check_fit_shape(response_mean, data)?;
    let mut per = Vec::with_capacity(data.len());
    for (n, patient) in data.iter().enumerate() {
        let pts = window_test_points(patient);
        if pts.len() < 2 {
            per.push(f64::NAN);
            continue;
        }
        let r: Vec<f64> = pts.iter().map(|&i| response_mean[n][i]).collect();
        let y: Vec<f64> = pts.iter().map(|&i| patient.outcome[i]).collect();
        per.push((variance(&r) - variance(&y)).abs());
    }
    let valid: Vec<f64> = per.iter().copied().filter(|v| v.is_finite()).collect();
    let agg = if valid.is_empty() { f64::NAN } else { mean(&valid) };
    Ok((agg, per))
}

fn check_fit_shape(fit: &[Vec<f64>], data: &[PatientData]) -> Result<()> {
    if fit.len() != data.len() {
        return Err(Error::Domain(format!(
            "fit covers {} patients, data has {}",
            fit.len(),
            data.len()
        )));
    }
    for (f, p) in fit.iter().zip(data) {
        if f.len() != p.obs_times.len() {
            return Err(Error::Domain(format!(
                "patient {}: fitted curve has {} points, series has {}",
                p.id,
                f.len(),
                p.obs_times.len()
            )));
        }
    }
    Ok(())
}

/// Patients whose baseline-model M2 falls below the threshold are excluded
/// from MSE comparisons. NaN ratios count as excluded.
pub fn exclusions_from_m2(per_patient_m2: &[f64], threshold: f64) -> Vec<bool> {
    per_patient_m2
        .iter()
        .map(|v| !v.is_finite() || *v < threshold)
        .collect()
}

pub const M2_EXCLUSION_THRESHOLD: f64 = 0.15;

/// Cosine of the angle between two equally long vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Domain(format!(
            "cosine needs equal nonempty vectors, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine undefined for a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Posterior-mean height coefficients concatenated over patients, the
/// estimate compared against a simulation's true vector.
pub fn concat_height_means(posterior: &PosteriorDraws, layout: &Layout) -> Vec<f64> {
    let means: Vec<f64> = (0..posterior.dim()).map(|p| posterior.mean(p)).collect();
    let mut out = Vec::new();
    for n in 0..layout.n_patients {
        out.extend_from_slice(layout.get(&means, BlockId::BetaH(n)));
    }
    out
}

/// Per-draw, per-training-point log densities for LOO: each observation is
/// scored under its marginal Normal with the response as mean and the
/// low-rank prior variance plus noise as variance.
pub fn pointwise_loglik(
    posterior: &PosteriorDraws,
    layout: &Layout,
    spec: &ModelSpec,
    data: &[PatientData],
) -> Result<Array2<f64>> {
    if data.len() != layout.n_patients {
        return Err(Error::Domain(format!(
            "layout covers {} patients, data has {}",
            layout.n_patients,
            data.len()
        )));
    }
    let s = posterior.n_chains() * posterior.n_draws();
    let n_obs: usize = data.iter().map(|p| p.n_train()).sum();
    let mut ll = Array2::zeros((s, n_obs));
    for si in 0..s {
        let row = draw_row(posterior, si);
        let sigma_y = layout.get(&row, BlockId::SigmaY)[0];
        let mut col0 = 0usize;
        for (n, patient) in data.iter().enumerate() {
            let coef = ResponseCoefficients {
                beta_h: layout.get(&row, BlockId::BetaH(n)).to_vec(),
                beta_l: layout.get(&row, BlockId::BetaL(n)).to_vec(),
            };
            let lat = latents_for(layout, &row, n, patient);
            let train_times = patient.train_times();
            let resp = sum_responses(patient, &coef, &lat, &train_times, spec.lengthscale_floor)?;
            let kp = kernel_for(layout, &row, n);
            let inducing = select_inducing(&train_times, spec.inducing_count.min(train_times.len()))?;
            let diag = lowrank_diag(&train_times, &inducing, &kp, spec.jitter)?;
            let y = patient.train_outcome();
            for i in 0..train_times.len() {
                let sd = (diag[i] + sigma_y * sigma_y).sqrt();
                ll[(si, col0 + i)] = normal_logpdf(y[i], resp[i], sd);
            }
            col0 += train_times.len();
        }
    }
    Ok(ll)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub id: String,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LooSummary {
    pub elpd_loo: f64,
    pub p_loo: f64,
    pub se_loo: f64,
    /// -2 * elpd_loo, the deviance-scale value (lower is better).
    pub looic: f64,
    pub n_flagged: usize,
    pub n_excluded: usize,
}

impl From<&LooResult> for LooSummary {
    fn from(r: &LooResult) -> Self {
        LooSummary {
            elpd_loo: r.elpd_loo,
            p_loo: r.p_loo,
            se_loo: r.se_loo,
            looic: -2.0 * r.elpd_loo,
            n_flagged: r.flagged.len(),
            n_excluded: r.excluded.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
    pub per_patient: Vec<PatientMetrics>,
    pub excluded_patients: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loo: Option<LooSummary>,
}

/// Assembles M1-M5 from posterior-mean curves. Exclusions for M3/M4 come
/// from `baseline_m2` when given (a baseline model's per-patient M2),
/// otherwise from this fit's own M2 values.
pub fn metric_report(
    summary: &TrajectorySummary,
    data: &[PatientData],
    baseline_m2: Option<&[f64]>,
    loo: Option<&LooResult>,
) -> Result<MetricReport> {
    let ve = metric_m1_m2(&summary.trend_mean, &summary.response_mean, data)?;
    let m2_source = baseline_m2.unwrap_or(&ve.per_patient_m2);
    if m2_source.len() != data.len() {
        return Err(Error::Domain("baseline M2 length mismatch".into()));
    }
    let excluded = exclusions_from_m2(m2_source, M2_EXCLUSION_THRESHOLD);
    let (m3, per_m3) = metric_mse(&summary.total_mean, data, Split::Train, &excluded)?;
    let (m4, per_m4) = metric_mse(&summary.total_mean, data, Split::Test, &excluded)?;
    let (m5, per_m5) = metric_m5(&summary.response_mean, data)?;
    let per_patient = data
        .iter()
        .enumerate()
        .map(|(n, p)| PatientMetrics {
            id: p.id.clone(),
            m1: ve.per_patient_m1[n],
            m2: ve.per_patient_m2[n],
            m3: per_m3[n],
            m4: per_m4[n],
            m5: per_m5[n],
            excluded: excluded[n],
        })
        .collect();
    let excluded_patients = data
        .iter()
        .zip(&excluded)
        .filter(|(_, &ex)| ex)
        .map(|(p, _)| p.id.clone())
        .collect();
    Ok(MetricReport {
        m1: ve.m1,
        m2: ve.m2,
        m3,
        m4,
        m5,
        per_patient,
        excluded_patients,
        loo: loo.map(LooSummary::from),
    })
}
