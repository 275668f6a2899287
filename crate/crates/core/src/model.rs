//! Treatment-response model: bell-shaped response curves driven by covariate
//! links, measurement-error latents for reported times and amounts, and the
//! joint log-posterior over all patients.
//!
//! Numeric code is generic over [`Scalar`] so one implementation serves both
//! plain `f64` evaluation and taped reverse-mode differentiation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{logistic, softplus_f64, Scalar};
use crate::data::{PatientData, TreatmentEvent};
use crate::error::Error;
use crate::gp;
use crate::math::LN_2PI;
use crate::params::{BlockId, Layout, ParamVector};
use crate::Result;

pub const SQRT_2PI: f64 = 2.506628274631000502415765284811;

/// Model variants, ordered by how much structure they add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Independent per-patient coefficients, fixed N(0,1) priors.
    Ind,
    /// Hierarchical coefficient priors shared across patients.
    Hier,
    /// Hier + latent corrections for reported treatment times.
    HierTime,
    /// HierTime + latent multiplicative corrections for reported amounts.
    HierTimeCov,
}

impl Variant {
    pub fn has_hyperprior(self) -> bool {
        self != Variant::Ind
    }
    pub fn has_time_latents(self) -> bool {
        matches!(self, Variant::HierTime | Variant::HierTimeCov)
    }
    pub fn has_amount_latents(self) -> bool {
        self == Variant::HierTimeCov
    }
    pub const ALL: [Variant; 4] = [
        Variant::Ind,
        Variant::Hier,
        Variant::HierTime,
        Variant::HierTimeCov,
    ];
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Ind => "ind",
            Variant::Hier => "hier",
            Variant::HierTime => "hier-time",
            Variant::HierTimeCov => "hier-time-cov",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ind" => Ok(Variant::Ind),
            "hier" => Ok(Variant::Hier),
            "hier-time" => Ok(Variant::HierTime),
            "hier-time-cov" => Ok(Variant::HierTimeCov),
            other => Err(Error::Input(format!(
                "unknown variant '{other}' (expected ind|hier|hier-time|hier-time-cov)"
            ))),
        }
    }
}

/// Fixed hyperparameters and prior scales for one model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub variant: Variant,
    /// SD of log multiplicative amount error.
    pub sigma_x: f64,
    /// SD (minutes) of per-event time offsets.
    pub sigma_t: f64,
    /// SD (minutes) of the per-patient reporting bias.
    pub sigma_d: f64,
    /// Lower bound (minutes) for the response length parameter.
    pub lengthscale_floor: f64,
    /// Inducing points per patient (capped at the patient's training size).
    pub inducing_count: usize,
    /// Initial diagonal jitter for kernel factorizations.
    pub jitter: f64,
    pub prior_sigma_y: f64,
    /// Half-normal scale for the hierarchical coefficient SDs.
    pub prior_coef_sd: f64,
    /// SD of the zero-centered coefficient prior (Ind) and hyper-mean prior.
    pub prior_beta_sd: f64,
    pub prior_se_amp: f64,
    pub prior_const_amp: f64,
    pub prior_lengthscale_log_mean: f64,
    pub prior_lengthscale_log_sd: f64,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        ModelSpec {
            variant,
            sigma_x: 0.1,
            sigma_t: 10.0,
            sigma_d: 20.0,
            lengthscale_floor: 5.0,
            inducing_count: 16,
            jitter: 1e-6,
            prior_sigma_y: 1.0,
            prior_coef_sd: 0.5,
            prior_beta_sd: 1.0,
            prior_se_amp: 1.0,
            prior_const_amp: 1.0,
            prior_lengthscale_log_mean: 120f64.ln(),
            prior_lengthscale_log_sd: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_x", self.sigma_x),
            ("sigma_t", self.sigma_t),
            ("sigma_d", self.sigma_d),
            ("lengthscale_floor", self.lengthscale_floor),
            ("jitter", self.jitter),
            ("prior_sigma_y", self.prior_sigma_y),
            ("prior_coef_sd", self.prior_coef_sd),
            ("prior_beta_sd", self.prior_beta_sd),
            ("prior_se_amp", self.prior_se_amp),
            ("prior_const_amp", self.prior_const_amp),
            ("prior_lengthscale_log_sd", self.prior_lengthscale_log_sd),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.inducing_count == 0 {
            return Err(Error::Domain("inducing_count must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for ModelSpec {
    /// The full errors-in-variables configuration.
    fn default() -> Self {
        ModelSpec::new(Variant::HierTimeCov)
    }
}

/// Per-patient response coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseCoefficients {
    pub beta_h: Vec<f64>,
    pub beta_l: Vec<f64>,
}

/// Cohort-level coefficient hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperCoefficients {
    pub beta_h_tilde: Vec<f64>,
    pub beta_l_tilde: Vec<f64>,
    pub sigma_h: Vec<f64>,
    pub sigma_l: Vec<f64>,
}

/// Measurement-error latents for one patient, indexed by the patient's full
/// event list. Entries for events outside the training split stay zero, which
/// is also how variants that exclude a latent treat the field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementLatents {
    pub report_bias: f64,
    pub time_offsets: Vec<f64>,
    pub log_amount_errors: Vec<f64>,
}

impl MeasurementLatents {
    pub fn zeros(n_events: usize) -> Self {
        MeasurementLatents {
            report_bias: 0.0,
            time_offsets: vec![0.0; n_events],
            log_amount_errors: vec![0.0; n_events],
        }
    }
}

/// Bell response at lag `delta_t` after the (latent) treatment time: peaks at
/// `delta_t = 3 * length` with value `height` and has SD `length`.
pub fn response_curve(delta_t: f64, height: f64, length: f64) -> Result<f64> {
    if !(length > 0.0) {
        return Err(Error::Domain(format!(
            "response length must be positive, got {length}"
        )));
    }
    Ok(response_curve_s(delta_t, height, length))
}

#[inline]
pub(crate) fn response_curve_s<S: Scalar>(delta_t: S, height: S, length: S) -> S {
    let z = delta_t - length.mul_f(3.0);
    let expo = z.square() * length.square().recip().mul_f(-0.5);
    height * expo.exp()
}

/// Covariate links: height is linear, length is softplus with a hard floor.
pub fn response_params(
    beta_h: &[f64],
    beta_l: &[f64],
    x_star: &[f64],
    floor: f64,
) -> Result<(f64, f64)> {
    if beta_h.len() != x_star.len() || beta_l.len() != x_star.len() {
        return Err(Error::Domain(format!(
            "coefficient/covariate length mismatch: {} vs {} vs {}",
            beta_h.len(),
            beta_l.len(),
            x_star.len()
        )));
    }
    let h = dot_f(beta_h, x_star);
    let l = floor + softplus_f64(dot_f(beta_l, x_star));
    Ok((h, l))
}

fn dot_f(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn dot_const<S: Scalar>(beta: &[S], x: &[f64], zero: S) -> S {
    let mut acc = zero;
    for (b, &xv) in beta.iter().zip(x) {
        acc = acc + b.mul_f(xv);
    }
    acc
}

/// Area under the response curve over the whole lag axis.
pub fn response_area(height: f64, length: f64) -> Result<f64> {
    if !(length > 0.0) {
        return Err(Error::Domain(format!(
            "response length must be positive, got {length}"
        )));
    }
    Ok(height * length * SQRT_2PI)
}

/// d(area)/d(x_star[p]) through both covariate links at a covariate point.
pub fn area_sensitivity(
    beta_h: &[f64],
    beta_l: &[f64],
    x_star: &[f64],
    p: usize,
    floor: f64,
) -> Result<f64> {
    if p >= x_star.len() {
        return Err(Error::Domain(format!(
            "covariate index {p} out of range for dimension {}",
            x_star.len()
        )));
    }
    let (h, l) = response_params(beta_h, beta_l, x_star, floor)?;
    let inner = dot_f(beta_l, x_star);
    Ok(SQRT_2PI * (beta_h[p] * l + h * logistic(inner) * beta_l[p]))
}

/// Sum of event responses at the query times for one patient.
///
/// The report bias shifts every event: it models the patient's clock, not a
/// property of one meal. Per-event offsets and amount errors exist only for
/// training events; held-out events use their reported values otherwise.
pub fn sum_responses(
    patient: &PatientData,
    coef: &ResponseCoefficients,
    latents: &MeasurementLatents,
    query_times: &[f64],
    floor: f64,
) -> Result<Vec<f64>> {
    if patient.events.is_empty() {
        return Ok(vec![0.0; query_times.len()]);
    }
    let p = patient.covariate_dim();
    if coef.beta_h.len() != p || coef.beta_l.len() != p {
        return Err(Error::Domain(format!(
            "coefficients have dimension {}/{} but events have {p}",
            coef.beta_h.len(),
            coef.beta_l.len()
        )));
    }
    if latents.time_offsets.len() != patient.events.len()
        || latents.log_amount_errors.len() != patient.events.len()
    {
        return Err(Error::Domain(
            "latent vectors must match the event count".into(),
        ));
    }
    let mut out = vec![0.0; query_times.len()];
    for (m, ev) in patient.events.iter().enumerate() {
        let in_train = patient.train_events[m];
        let (eps, ld) = if in_train {
            (latents.time_offsets[m], latents.log_amount_errors[m])
        } else {
            (0.0, 0.0)
        };
        add_event_response_f64(
            ev,
            &coef.beta_h,
            &coef.beta_l,
            latents.report_bias,
            eps,
            ld,
            floor,
            query_times,
            &mut out,
        );
    }
    Ok(out)
}

fn add_event_response_f64(
    ev: &TreatmentEvent,
    beta_h: &[f64],
    beta_l: &[f64],
    d: f64,
    eps: f64,
    log_delta: f64,
    floor: f64,
    query_times: &[f64],
    out: &mut [f64],
) {
    let scale = (-log_delta).exp();
    let h = scale * dot_f(beta_h, &ev.covariates);
    let l = floor + softplus_f64(scale * dot_f(beta_l, &ev.covariates));
    // t_star = reported - d - eps, so the lag is (tau - reported) + d + eps
    let shift = d + eps;
    for (o, &tau) in out.iter_mut().zip(query_times) {
        let lag = tau - ev.time_min + shift;
        let z = lag - 3.0 * l;
        *o += h * (-0.5 * z * z / (l * l)).exp();
    }
}

/// Taped/generic version: adds every event response into `out`.
/// `eps`/`log_delta` are indexed by training events; `zero` seeds accumulators.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_responses_s<S: Scalar>(
    patient: &PatientData,
    beta_h: &[S],
    beta_l: &[S],
    d: Option<S>,
    eps: &[S],
    log_delta: &[S],
    floor: f64,
    query_times: &[f64],
    zero: S,
    out: &mut [S],
) {
    let mut k = 0usize; // index into training-event latents
    for (m, ev) in patient.events.iter().enumerate() {
        let in_train = patient.train_events[m];
        let bh = dot_const(beta_h, &ev.covariates, zero);
        let bl = dot_const(beta_l, &ev.covariates, zero);
        let (h, l_inner) = if in_train && !log_delta.is_empty() {
            let scale = (-log_delta[k]).exp();
            (bh * scale, bl * scale)
        } else {
            (bh, bl)
        };
        let l = l_inner.softplus().add_f(floor);
        let neg_half_inv_l2 = l.square().recip().mul_f(-0.5);
        let l3 = l.mul_f(3.0);
        let shift = d.map(|dv| match if in_train { eps.get(k) } else { None } {
            Some(&e) => dv + e,
            None => dv,
        });
        for (o, &tau) in out.iter_mut().zip(query_times) {
            let lag = match shift {
                Some(s) => s.add_f(tau - ev.time_min),
                None => zero.add_f(tau - ev.time_min),
            };
            let z = lag - l3;
            let r = h * (z.square() * neg_half_inv_l2).exp();
            *o = *o + r;
        }
        if in_train {
            k += 1;
        }
    }
}

/// Additive pieces of the joint density. `total()` is what the sampler sees.
#[derive(Debug, Clone, Copy)]
pub struct LogPosteriorParts {
    /// GP-marginalized residual likelihood over training points.
    pub likelihood: f64,
    /// Coefficient, hyper, kernel and noise priors (constrained densities).
    pub priors: f64,
    /// Measurement-model densities of the time/amount latents.
    pub measurement: f64,
    /// Log-Jacobian of the unconstrained transforms.
    pub jacobian: f64,
}

impl LogPosteriorParts {
    pub fn total(&self) -> f64 {
        self.likelihood + self.priors + self.measurement + self.jacobian
    }
}

pub(crate) struct Accum<S: Scalar> {
    pub lik: S,
    pub prior: S,
    pub meas: S,
    pub jac: S,
}

impl<S: Scalar> Accum<S> {
    pub fn total(&self) -> S {
        self.lik + self.prior + self.meas + self.jac
    }
}

#[inline]
fn normal_lp_const_sd<S: Scalar>(x: S, mu: f64, sd: f64) -> S {
    let z = x.sub_f(mu).div_f(sd);
    z.square().mul_f(-0.5).add_f(-sd.ln() - 0.5 * LN_2PI)
}

/// Joint unnormalized log-posterior at an unconstrained parameter point.
/// Returns negative infinity on numerical failure.
pub fn log_posterior(params: &ParamVector, data: &[PatientData], spec: &ModelSpec) -> f64 {
    match log_posterior_parts(params, data, spec) {
        Ok(parts) => parts.total(),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Like [`log_posterior`] but keeps the additive pieces separate.
pub fn log_posterior_parts(
    params: &ParamVector,
    data: &[PatientData],
    spec: &ModelSpec,
) -> Result<LogPosteriorParts> {
    let layout = &params.layout;
    match log_posterior_s(&params.values, layout, data, spec) {
        Some(acc) => {
            let parts = LogPosteriorParts {
                likelihood: acc.lik,
                priors: acc.prior,
                measurement: acc.meas,
                jacobian: acc.jac,
            };
            if parts.total().is_finite() {
                Ok(parts)
            } else {
                Err(Error::Numerical("non-finite log-posterior".into()))
            }
        }
        None => Err(Error::Numerical(
            "kernel factorization failed beyond jitter schedule".into(),
        )),
    }
}

/// Generic assembly shared by the f64 and taped paths. `None` marks numerical
/// failure (the sampler treats it as a divergence).
pub(crate) fn log_posterior_s<S: Scalar>(
    vals: &[S],
    layout: &Layout,
    data: &[PatientData],
    spec: &ModelSpec,
) -> Option<Accum<S>> {
    let zero = vals[0].mul_f(0.0);
    let mut acc = Accum {
        lik: zero,
        prior: zero,
        meas: zero,
        jac: zero,
    };

    // Global noise scale.
    let u_sy = layout.get(vals, BlockId::SigmaY)[0];
    let sigma_y = u_sy.exp();
    acc.prior = acc.prior + half_normal_lp(sigma_y, spec.prior_sigma_y);
    acc.jac = acc.jac + u_sy;

    // Hyper layer.
    let hyper = if spec.variant.has_hyperprior() {
        let bht = layout.get(vals, BlockId::BetaHTilde);
        let blt = layout.get(vals, BlockId::BetaLTilde);
        let u_sh = layout.get(vals, BlockId::SigmaH);
        let u_sl = layout.get(vals, BlockId::SigmaL);
        let mut sh = Vec::with_capacity(u_sh.len());
        let mut sl = Vec::with_capacity(u_sl.len());
        for j in 0..bht.len() {
            acc.prior = acc.prior
                + normal_lp_const_sd(bht[j], 0.0, spec.prior_beta_sd)
                + normal_lp_const_sd(blt[j], 0.0, spec.prior_beta_sd);
            let sh_j = u_sh[j].exp();
            let sl_j = u_sl[j].exp();
            acc.prior = acc.prior
                + half_normal_lp(sh_j, spec.prior_coef_sd)
                + half_normal_lp(sl_j, spec.prior_coef_sd);
            acc.jac = acc.jac + u_sh[j] + u_sl[j];
            sh.push((sh_j, u_sh[j]));
            sl.push((sl_j, u_sl[j]));
        }
        Some((bht, blt, sh, sl))
    } else {
        None
    };

    for (i, patient) in data.iter().enumerate() {
        let beta_h = layout.get(vals, BlockId::BetaH(i));
        let beta_l = layout.get(vals, BlockId::BetaL(i));

        match &hyper {
            Some((bht, blt, sh, sl)) => {
                for j in 0..beta_h.len() {
                    let zh = (beta_h[j] - bht[j]) / sh[j].0;
                    let zl = (beta_l[j] - blt[j]) / sl[j].0;
                    let term = (zh.square() + zl.square()).mul_f(-0.5) - sh[j].1 - sl[j].1;
                    acc.prior = acc.prior + term.add_f(-LN_2PI);
                }
            }
            None => {
                for j in 0..beta_h.len() {
                    acc.prior = acc.prior
                        + normal_lp_const_sd(beta_h[j], 0.0, spec.prior_beta_sd)
                        + normal_lp_const_sd(beta_l[j], 0.0, spec.prior_beta_sd);
                }
            }
        }

        // Kernel parameters.
        let u_se = layout.get(vals, BlockId::KernelSeAmp(i))[0];
        let u_ls = layout.get(vals, BlockId::KernelSeLengthscale(i))[0];
        let u_c = layout.get(vals, BlockId::KernelConstAmp(i))[0];
        let se_amp = u_se.exp();
        let lengthscale = u_ls.exp();
        let const_amp = u_c.exp();
        acc.prior = acc.prior + half_normal_lp(se_amp, spec.prior_se_amp) + half_normal_lp(const_amp, spec.prior_const_amp);
        acc.jac = acc.jac + u_se + u_c;
        // LogNormal on the lengthscale: normal on u_ls, split into density + jacobian.
        acc.prior = acc.prior
            + normal_lp_const_sd(
                u_ls,
                spec.prior_lengthscale_log_mean,
                spec.prior_lengthscale_log_sd,
            )
            - u_ls;
        acc.jac = acc.jac + u_ls;

        // Measurement latents.
        let d = if spec.variant.has_time_latents() {
            let dv = layout.get(vals, BlockId::ReportBias(i))[0];
            acc.meas = acc.meas + normal_lp_const_sd(dv, 0.0, spec.sigma_d);
            Some(dv)
        } else {
            None
        };
        let eps = layout.get(vals, BlockId::TimeOffsets(i));
        for &e in eps {
            acc.meas = acc.meas + normal_lp_const_sd(e, 0.0, spec.sigma_t);
        }
        let log_delta = layout.get(vals, BlockId::LogAmountErrors(i));
        for &ld in log_delta {
            acc.meas = acc.meas + normal_lp_const_sd(ld, 0.0, spec.sigma_x);
        }

        // Residual likelihood over the training grid.
        let train_times = patient.train_times();
        if train_times.is_empty() {
            continue;
        }
        let mut resp = vec![zero; train_times.len()];
        accumulate_responses_s(
            patient,
            beta_h,
            beta_l,
            d,
            eps,
            log_delta,
            spec.lengthscale_floor,
            &train_times,
            zero,
            &mut resp,
        );
        let y_train = patient.train_outcome();
        let mut residual = Vec::with_capacity(resp.len());
        for (r, y) in resp.iter().zip(&y_train) {
            residual.push(r.rsub_f(*y));
        }
        let m = spec.inducing_count.min(train_times.len());
        let inducing = gp::select_inducing(&train_times, m).ok()?;
        let lik = gp::lowrank_marginal_loglik_s(
            &residual,
            &train_times,
            &inducing,
            se_amp,
            lengthscale,
            const_amp,
            sigma_y,
            spec.jitter,
            zero,
        )?;
        acc.lik = acc.lik + lik;
    }

    Some(acc)
}

#[inline]
fn half_normal_lp<S: Scalar>(x: S, scale: f64) -> S {
    let z = x.div_f(scale);
    z.square()
        .mul_f(-0.5)
        .add_f(std::f64::consts::LN_2 - scale.ln() - 0.5 * LN_2PI)
}
