//! Synthetic-data generators: a toy linear-trend protocol with additively
//! perturbed covariates, a generative protocol from explicit coefficients,
//! and replay of a fitted posterior with scaled responses.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PatientData, TreatmentEvent};
use crate::error::Error;
use crate::gp::{kernel, KernelParams};
use crate::inference::PosteriorDraws;
use crate::math::dense_cholesky;
use crate::model::{sum_responses, MeasurementLatents, ResponseCoefficients};
use crate::params::{BlockId, Layout};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Toy,
    FromFit,
    Generative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendKind {
    Linear,
    Gp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub n_patients: usize,
    pub meals_per_patient: usize,
    pub covariate_dim: usize,
    /// Fraction of meals whose observed covariates are perturbed.
    pub perturb_fraction: f64,
    /// SD of log delta for multiplicative perturbation (FromFit/Generative).
    pub perturb_sd: f64,
    /// Multiplier applied to response heights when replaying a fit.
    pub response_scale: f64,
    pub trend: TrendKind,
    pub trend_slope: f64,
    pub trend_intercept: f64,
    pub noise_sd: f64,
    /// Observation cadence in minutes.
    pub cadence_min: f64,
    pub horizon_days: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            protocol: Protocol::Toy,
            n_patients: 2,
            meals_per_patient: 10,
            covariate_dim: 2,
            perturb_fraction: 0.5,
            perturb_sd: 0.2,
            response_scale: 1.0,
            trend: TrendKind::Linear,
            trend_slope: 0.001,
            trend_intercept: 0.0,
            noise_sd: 0.1,
            cadence_min: 15.0,
            horizon_days: 3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.perturb_fraction) {
            return Err(Error::Domain(format!(
                "perturb_fraction must lie in [0,1], got {}",
                self.perturb_fraction
            )));
        }
        if self.perturb_sd < 0.0 || self.noise_sd < 0.0 {
            return Err(Error::Domain("perturb_sd and noise_sd must be >= 0".into()));
        }
        if self.response_scale <= 0.0 {
            return Err(Error::Domain(format!(
                "response_scale must be > 0, got {}",
                self.response_scale
            )));
        }
        if self.n_patients == 0 || self.covariate_dim == 0 {
            return Err(Error::Domain(
                "need at least one patient and one covariate".into(),
            ));
        }
        if self.cadence_min <= 0.0 || self.horizon_days == 0 {
            return Err(Error::Domain("cadence and horizon must be positive".into()));
        }
        Ok(())
    }

    fn horizon_min(&self) -> f64 {
        self.horizon_days as f64 * 1440.0
    }
}

/// Everything a generator knows that a fitted model must recover.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per-patient height coefficients in outcome units.
    pub beta_h: Vec<Vec<f64>>,
    pub beta_l: Vec<Vec<f64>>,
    pub sigma_y: f64,
    /// (slope, intercept) per patient when the trend is linear.
    pub trend_params: Vec<(f64, f64)>,
    /// Realized trend at the observation grid, per patient.
    pub trend_values: Vec<Vec<f64>>,
    /// Realized summed treatment response at the grid, per patient.
    pub response_values: Vec<Vec<f64>>,
    /// Unperturbed covariate amounts, per patient and meal.
    pub true_covariates: Vec<Vec<Vec<f64>>>,
    pub perturbed: Vec<Vec<bool>>,
    /// ln of the multiplicative covariate error per meal; 0 when untouched
    /// and for the additive toy protocol.
    pub log_deltas: Vec<Vec<f64>>,
    /// Reported minus true treatment time per meal.
    pub time_offsets: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Concatenation over patients of the true height coefficients, the
    /// reference vector for coefficient-recovery comparisons.
    pub fn concat_heights(&self) -> Vec<f64> {
        self.beta_h.iter().flatten().copied().collect()
    }
}

fn obs_grid(cfg: &SimConfig) -> Vec<f64> {
    let mut t = 0.0;
    let mut grid = Vec::new();
    while t < cfg.horizon_min() {
        grid.push(t);
        t += cfg.cadence_min;
    }
    grid
}

/// Evenly spaced meal times with seeded jitter, strictly increasing and
/// clear of the series edges.
fn meal_schedule(rng: &mut ChaCha8Rng, cfg: &SimConfig) -> Vec<f64> {
    let m = cfg.meals_per_patient;
    if m == 0 {
        return Vec::new();
    }
    let lead = 60.0;
    let tail = 240.0;
    let span = cfg.horizon_min() - lead - tail;
    let spacing = span / m as f64;
    let jitter = (spacing / 3.0).min(45.0);
    (0..m)
        .map(|i| lead + spacing * (i as f64 + 0.5) + rng.gen_range(-jitter..=jitter))
        .collect()
}

fn draw_covariates(rng: &mut ChaCha8Rng, meals: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..meals)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.2..2.0)).collect())
        .collect()
}

/// Exactly round(fraction * len) true entries, positions seeded.
fn exact_count_mask(rng: &mut ChaCha8Rng, len: usize, fraction: f64) -> Vec<bool> {
    let k = (fraction * len as f64).round() as usize;
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let mut mask = vec![false; len];
    for &i in idx.iter().take(k.min(len)) {
        mask[i] = true;
    }
    mask
}

/// One draw from the zero-mean GP prior at `times` via dense Cholesky.
fn gp_trend_sample(rng: &mut ChaCha8Rng, times: &[f64], kp: &KernelParams) -> Result<Vec<f64>> {
    let g = times.len();
    let cov = kernel(times, times, kp)?;
    let mut flat = cov.into_raw_vec_and_offset().0;
    for i in 0..g {
        flat[i * g + i] += 1e-8;
    }
    dense_cholesky(&mut flat, g)
        .map_err(|e| Error::Numerical(format!("trend covariance is not positive definite: {e}")))?;
    let z: Vec<f64> = (0..g)
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect();
    Ok((0..g)
        .map(|i| (0..=i).map(|j| flat[i * g + j] * z[j]).sum())
        .collect())
}

struct PatientDraw {
    data: PatientData,
    trend: Vec<f64>,
    response: Vec<f64>,
    true_cov: Vec<Vec<f64>>,
}

/// Assembles one patient: outcome = trend + summed response + noise, with the
/// response computed from the TRUE covariates and times before perturbation.
#[allow(clippy::too_many_arguments)]
fn assemble_patient(
    rng: &mut ChaCha8Rng,
    id: &str,
    grid: &[f64],
    meal_times: &[f64],
    true_cov: Vec<Vec<f64>>,
    observed_cov: Vec<Vec<f64>>,
    coef: &ResponseCoefficients,
    trend: Vec<f64>,
    noise_sd: f64,
    floor: f64,
) -> Result<PatientDraw> {
    let true_events: Vec<TreatmentEvent> = meal_times
        .iter()
        .zip(&true_cov)
        .map(|(&t, c)| TreatmentEvent {
            time_min: t,
            covariates: c.clone(),
        })
        .collect();
    let scratch = PatientData::new(
        format!("{id}-true"),
        grid.to_vec(),
        vec![0.0; grid.len()],
        true_events,
    );
    let latents = MeasurementLatents::zeros(meal_times.len());
    let response = sum_responses(&scratch, coef, &latents, grid, floor)?;
    let outcome: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let noise: f64 = if noise_sd > 0.0 {
                rng.sample::<f64, _>(rand_distr::StandardNormal) * noise_sd
            } else {
                0.0
            };
            trend[i] + response[i] + noise
        })
        .collect();
    let events: Vec<TreatmentEvent> = meal_times
        .iter()
        .zip(observed_cov)
        .map(|(&t, c)| TreatmentEvent {
            time_min: t,
            covariates: c,
        })
        .collect();
    let data = PatientData::new(id.to_string(), grid.to_vec(), outcome, events);
    data.validate(data.covariate_dim())?;
    Ok(PatientDraw {
        data,
        trend,
        response,
        true_cov,
    })
}

/// Linear trend plus bell responses; a seeded subset of meals has every
/// covariate amount shifted by an independent additive Normal(1, 0.2^2) term.
pub fn simulate_toy(cfg: &SimConfig) -> Result<(Vec<PatientData>, GroundTruth)> {
    if cfg.protocol != Protocol::Toy {
        return Err(Error::Domain("simulate_toy requires the Toy protocol".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid = obs_grid(cfg);
    let floor = 5.0;

    let mut patients = Vec::new();
    let mut truth = GroundTruth {
        beta_h: Vec::new(),
        beta_l: Vec::new(),
        sigma_y: cfg.noise_sd,
        trend_params: Vec::new(),
        trend_values: Vec::new(),
        response_values: Vec::new(),
        true_covariates: Vec::new(),
        perturbed: Vec::new(),
        log_deltas: Vec::new(),
        time_offsets: Vec::new(),
    };

    for n in 0..cfg.n_patients {
        let beta_h: Vec<f64> = (0..cfg.covariate_dim)
            .map(|_| 1.0 + 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let beta_l: Vec<f64> = (0..cfg.covariate_dim)
            .map(|_| 2.0 + 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let meal_times = meal_schedule(&mut rng, cfg);
        let true_cov = draw_covariates(&mut rng, meal_times.len(), cfg.covariate_dim);
        let mask = exact_count_mask(&mut rng, meal_times.len(), cfg.perturb_fraction);
        let observed: Vec<Vec<f64>> = true_cov
            .iter()
            .zip(&mask)
            .map(|(c, &hit)| {
                c.iter()
                    .map(|&v| {
                        if hit {
                            v + 1.0 + 0.2 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let trend: Vec<f64> = grid
            .iter()
            .map(|&t| cfg.trend_slope * t + cfg.trend_intercept)
            .collect();
        let coef = ResponseCoefficients {
            beta_h: beta_h.clone(),
            beta_l: beta_l.clone(),
        };
        let m = meal_times.len();
        let draw = assemble_patient(
            &mut rng,
            &format!("sim{n:02}"),
            &grid,
            &meal_times,
            true_cov,
            observed,
            &coef,
            trend,
            cfg.noise_sd,
            floor,
        )?;
        patients.push(draw.data);
        truth.beta_h.push(beta_h);
        truth.beta_l.push(beta_l);
        truth.trend_params.push((cfg.trend_slope, cfg.trend_intercept));
        truth.trend_values.push(draw.trend);
        truth.response_values.push(draw.response);
        truth.true_covariates.push(draw.true_cov);
        truth.perturbed.push(mask);
        truth.log_deltas.push(vec![0.0; m]);
        truth.time_offsets.push(vec![0.0; m]);
    }
    Ok((patients, truth))
}

/// Explicit coefficients for generative simulation.
#[derive(Debug, Clone)]
pub struct CoeffSet {
    /// Per-patient height coefficients.
    pub beta_h: Vec<Vec<f64>>,
    pub beta_l: Vec<Vec<f64>>,
    pub kernel: KernelParams,
    pub sigma_y: f64,
}

/// Seeded default coefficients for generative runs that do not hand-pick
/// them. Drawn from the same population the toy protocol uses, on an RNG
/// stream decoupled from the one that generates the data.
pub fn default_coeff_set(cfg: &SimConfig) -> CoeffSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0EF_F5E7);
    let draw_block = |rng: &mut ChaCha8Rng, center: f64| -> Vec<Vec<f64>> {
        (0..cfg.n_patients)
            .map(|_| {
                (0..cfg.covariate_dim)
                    .map(|_| center + 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect()
            })
            .collect()
    };
    CoeffSet {
        beta_h: draw_block(&mut rng, 1.0),
        beta_l: draw_block(&mut rng, 2.0),
        kernel: KernelParams {
            se_amplitude: 1.0,
            se_lengthscale: 180.0,
            const_amplitude: 0.5,
        },
        sigma_y: cfg.noise_sd,
    }
}

/// Samples data from the model itself: GP (or linear) trend, bell responses
/// from given coefficients, multiplicative LogNormal(0, perturb_sd^2)
/// covariate errors on a seeded exact-count subset of meals.
pub fn simulate_generative(
    cfg: &SimConfig,
    coeffs: &CoeffSet,
) -> Result<(Vec<PatientData>, GroundTruth)> {
    if cfg.protocol != Protocol::Generative {
        return Err(Error::Domain(
            "simulate_generative requires the Generative protocol".into(),
        ));
    }
    cfg.validate()?;
    if coeffs.beta_h.len() != cfg.n_patients || coeffs.beta_l.len() != cfg.n_patients {
        return Err(Error::Domain(format!(
            "coefficient sets cover {} patients, config asks for {}",
            coeffs.beta_h.len(),
            cfg.n_patients
        )));
    }
    coeffs.kernel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid = obs_grid(cfg);
    let floor = 5.0;

    let mut patients = Vec::new();
    let mut truth = GroundTruth {
        beta_h: coeffs.beta_h.clone(),
        beta_l: coeffs.beta_l.clone(),
        sigma_y: coeffs.sigma_y,
        trend_params: Vec::new(),
        trend_values: Vec::new(),
        response_values: Vec::new(),
        true_covariates: Vec::new(),
        perturbed: Vec::new(),
        log_deltas: Vec::new(),
        time_offsets: Vec::new(),
    };

    for n in 0..cfg.n_patients {
        if coeffs.beta_h[n].len() != cfg.covariate_dim || coeffs.beta_l[n].len() != cfg.covariate_dim
        {
            return Err(Error::Domain(format!(
                "patient {n} coefficients do not match covariate_dim {}",
                cfg.covariate_dim
            )));
        }
        let meal_times = meal_schedule(&mut rng, cfg);
        let true_cov = draw_covariates(&mut rng, meal_times.len(), cfg.covariate_dim);
        let mask = exact_count_mask(&mut rng, meal_times.len(), cfg.perturb_fraction);
        let log_deltas: Vec<f64> = mask
            .iter()
            .map(|&hit| {
                if hit && cfg.perturb_sd > 0.0 {
                    cfg.perturb_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    0.0
                }
            })
            .collect();
        let observed: Vec<Vec<f64>> = true_cov
            .iter()
            .zip(&log_deltas)
            .map(|(c, ld)| c.iter().map(|&v| v * ld.exp()).collect())
            .collect();
        let trend = match cfg.trend {
            TrendKind::Linear => grid
                .iter()
                .map(|&t| cfg.trend_slope * t + cfg.trend_intercept)
                .collect(),
            TrendKind::Gp => gp_trend_sample(&mut rng, &grid, &coeffs.kernel)?,
        };
        if cfg.trend == TrendKind::Linear {
            truth
                .trend_params
                .push((cfg.trend_slope, cfg.trend_intercept));
        }
        let coef = ResponseCoefficients {
            beta_h: coeffs.beta_h[n].clone(),
            beta_l: coeffs.beta_l[n].clone(),
        };
        let m = meal_times.len();
        let draw = assemble_patient(
            &mut rng,
            &format!("sim{n:02}"),
            &grid,
            &meal_times,
            true_cov,
            observed,
            &coef,
            trend,
            coeffs.sigma_y,
            floor,
        )?;
        patients.push(draw.data);
        truth.trend_values.push(draw.trend);
        truth.response_values.push(draw.response);
        truth.true_covariates.push(draw.true_cov);
        truth.perturbed.push(mask);
        truth.log_deltas.push(log_deltas);
        truth.time_offsets.push(vec![0.0; m]);
    }
    Ok((patients, truth))
}

/// Posterior mean of every constrained parameter, pooled across chains.
pub fn posterior_mean_params(posterior: &PosteriorDraws) -> Vec<f64> {
    (0..posterior.dim()).map(|p| posterior.mean(p)).collect()
}

/// Replays a fitted model on the template's grids and meal schedules:
/// posterior-mean coefficients with heights scaled by `response_scale`,
/// freshly sampled GP trend and noise, and multiplicative covariate errors
/// on a seeded subset of meals.
pub fn simulate_from_fit(
    posterior: &PosteriorDraws,
    layout: &Layout,
    template: &[PatientData],
    cfg: &SimConfig,
) -> Result<(Vec<PatientData>, GroundTruth)> {
    if cfg.protocol != Protocol::FromFit {
        return Err(Error::Domain(
            "simulate_from_fit requires the FromFit protocol".into(),
        ));
    }
    cfg.validate()?;
    if posterior.n_draws() == 0 {
        return Err(Error::Domain("posterior holds no draws".into()));
    }
    if template.is_empty() || template.len() != layout.n_patients {
        return Err(Error::Domain(format!(
            "template has {} patients but the fit used {}",
            template.len(),
            layout.n_patients
        )));
    }
    let mean = posterior_mean_params(posterior);
    let sigma_y = layout
        .get(&mean, BlockId::SigmaY)
        .first()
        .copied()
        .ok_or_else(|| Error::Domain("fit layout lacks a noise scale".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut patients = Vec::new();
    let mut truth = GroundTruth {
        beta_h: Vec::new(),
        beta_l: Vec::new(),
        sigma_y,
        trend_params: Vec::new(),
        trend_values: Vec::new(),
        response_values: Vec::new(),
        true_covariates: Vec::new(),
        perturbed: Vec::new(),
        log_deltas: Vec::new(),
        time_offsets: Vec::new(),
    };

    for (n, tpl) in template.iter().enumerate() {
        let beta_h: Vec<f64> = layout
            .get(&mean, BlockId::BetaH(n))
            .iter()
            .map(|b| b * cfg.response_scale)
            .collect();
        let beta_l = layout.get(&mean, BlockId::BetaL(n)).to_vec();
        let kp = KernelParams {
            se_amplitude: layout.get(&mean, BlockId::KernelSeAmp(n))[0],
            se_lengthscale: layout.get(&mean, BlockId::KernelSeLengthscale(n))[0],
            const_amplitude: layout.get(&mean, BlockId::KernelConstAmp(n))[0],
        };
        let meal_times: Vec<f64> = tpl.events.iter().map(|e| e.time_min).collect();
        let true_cov: Vec<Vec<f64>> = tpl.events.iter().map(|e| e.covariates.clone()).collect();
        let mask = exact_count_mask(&mut rng, meal_times.len(), cfg.perturb_fraction);
        let log_deltas: Vec<f64> = mask
            .iter()
            .map(|&hit| {
                if hit && cfg.perturb_sd > 0.0 {
                    cfg.perturb_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    0.0
                }
            })
            .collect();
        let observed: Vec<Vec<f64>> = true_cov
            .iter()
            .zip(&log_deltas)
            .map(|(c, ld)| c.iter().map(|&v| v * ld.exp()).collect())
            .collect();
        let trend = match cfg.trend {
            TrendKind::Linear => tpl
                .obs_times
                .iter()
                .map(|&t| cfg.trend_slope * t + cfg.trend_intercept)
                .collect(),
            TrendKind::Gp => gp_trend_sample(&mut rng, &tpl.obs_times, &kp)?,
        };
        let coef = ResponseCoefficients {
            beta_h: beta_h.clone(),
            beta_l: beta_l.clone(),
        };
        let m = meal_times.len();
        let draw = assemble_patient(
            &mut rng,
            &tpl.id,
            &tpl.obs_times,
            &meal_times,
            true_cov,
            observed,
            &coef,
            trend,
            sigma_y,
            5.0,
        )?;
        patients.push(draw.data);
        truth.beta_h.push(beta_h);
        truth.beta_l.push(beta_l);
        truth.trend_values.push(draw.trend);
        truth.response_values.push(draw.response);
        truth.true_covariates.push(draw.true_cov);
        truth.perturbed.push(mask);
        truth.log_deltas.push(log_deltas);
        truth.time_offsets.push(vec![0.0; m]);
    }
    Ok((patients, truth))
}
