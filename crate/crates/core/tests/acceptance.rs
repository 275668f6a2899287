//! Acceptance gate for the statistical machinery. Each criterion is one
//! test that prints a single PASS line with its measured margin; assertion
//! failures carry the same numbers.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use eivtraj::cli::artifacts::write_draws_csv;
use eivtraj::cli::ingest::split_days;
use eivtraj::eval::mwu::mann_whitney_u;
use eivtraj::eval::psis::psis_loo;
use eivtraj::eval::{
    concat_height_means, cosine_similarity, metric_mse, summarize_trajectories, trajectory_draws,
    Split,
};
use eivtraj::gp::{kernel, lowrank_marginal_loglik, select_inducing, KernelParams};
use eivtraj::inference::{
    fit_model, grad_log_posterior, nuts_sample, summarize, FitResult, FnTarget, SamplerConfig,
};
use eivtraj::math::{adaptive_simpson, dense_mvn_logpdf, mean, normal_logpdf, variance};
use eivtraj::model::{area_sensitivity, log_posterior, response_area, response_curve, response_params};
use eivtraj::params::{BlockId, Layout, ParamVector};
use eivtraj::simulate::{
    default_coeff_set, simulate_generative, simulate_toy, CoeffSet, GroundTruth, Protocol,
    SimConfig,
};
use eivtraj::{ModelSpec, PatientData, Variant};

fn small_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig {
        chains: 2,
        warmup: 250,
        draws: 250,
        target_accept: 0.8,
        max_tree_depth: 8,
        init_jitter: 0.1,
        seed,
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn pooled_sorted(fit: &FitResult, block: BlockId, j: usize) -> Vec<f64> {
    let b = fit.layout.block(block).expect("block present");
    let mut v = fit.draws.pooled(b.offset + j);
    v.sort_by(f64::total_cmp);
    v
}

fn pooled_mean(fit: &FitResult, block: BlockId, j: usize) -> f64 {
    let b = fit.layout.block(block).expect("block present");
    mean(&fit.draws.pooled(b.offset + j))
}

/// Small two-patient cohort for gradient checks, everything on the training
/// split.
fn gradient_cohort() -> Vec<PatientData> {
    let cfg = SimConfig {
        protocol: Protocol::Generative,
        n_patients: 2,
        meals_per_patient: 4,
        covariate_dim: 2,
        perturb_fraction: 0.5,
        perturb_sd: 0.2,
        cadence_min: 60.0,
        horizon_days: 1,
        seed: 17,
        ..SimConfig::default()
    };
    let coeffs = default_coeff_set(&cfg);
    simulate_generative(&cfg, &coeffs).expect("simulation").0
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let data = gradient_cohort();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for variant in [
        Variant::Ind,
        Variant::Hier,
        Variant::HierTime,
        Variant::HierTimeCov,
    ] {
        let spec = ModelSpec::new(variant);
        let layout = std::sync::Arc::new(Layout::for_model(&spec, &data));
        for _ in 0..50 {
            let values: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let pv = ParamVector {
                layout: layout.clone(),
                values,
            };
            let (lp, grad) = grad_log_posterior(&pv, &data, &spec);
            assert!(lp.is_finite(), "log density not finite at a generic point");
            for i in 0..layout.dim() {
                let h = 3e-5 * (1.0 + pv.values[i].abs());
                let mut plus = pv.clone();
                plus.values[i] += h;
                let mut minus = pv.clone();
                minus.values[i] -= h;
                let fd = (log_posterior(&plus, &data, &spec)
                    - log_posterior(&minus, &data, &spec))
                    / (2.0 * h);
                let tol = 1e-7 + 1e-5 * grad[i].abs().max(fd.abs());
                let err = (grad[i] - fd).abs();
                worst = worst.max(err / tol);
                assert!(
                    err <= tol,
                    "criterion 01: FAIL ({variant:?} coord {i}: taped {} vs fd {fd})",
                    grad[i]
                );
            }
        }
    }
    println!("criterion 01 gradients vs finite differences: PASS (worst error {worst:.3} of tolerance)");
}

#[test]
fn criterion_02_sampler_recovers_gaussian_moments() {
    let cfg = SamplerConfig {
        chains: 4,
        warmup: 500,
        draws: 1000,
        target_accept: 0.8,
        max_tree_depth: 10,
        init_jitter: 1.0,
        seed: 7,
    };
    let draws = nuts_sample(
        || FnTarget {
            dim: 1,
            f: |x: &[f64], g: &mut [f64]| {
                g[0] = -x[0];
                -0.5 * x[0] * x[0]
            },
        },
        &cfg,
        &[0.0],
        None,
    )
    .expect("sampling");
    let pooled = draws.pooled(0);
    let m = mean(&pooled);
    let v = variance(&pooled);
    let max_rhat_1d = summarize(&draws)
        .iter()
        .map(|s| s.rhat)
        .fold(f64::NAN, f64::max);
    assert!(m.abs() < 0.05, "criterion 02: FAIL (mean {m})");
    assert!((v - 1.0).abs() < 0.1, "criterion 02: FAIL (variance {v})");
    assert!(max_rhat_1d < 1.01, "criterion 02: FAIL (rhat {max_rhat_1d})");

    let rho = 0.9_f64;
    let q = 1.0 / (1.0 - rho * rho);
    let draws2 = nuts_sample(
        || FnTarget {
            dim: 2,
            f: move |x: &[f64], g: &mut [f64]| {
                g[0] = -q * (x[0] - rho * x[1]);
                g[1] = -q * (x[1] - rho * x[0]);
                -0.5 * q * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1])
            },
        },
        &cfg,
        &[0.0, 0.0],
        None,
    )
    .expect("sampling");
    let xs = draws2.pooled(0);
    let ys = draws2.pooled(1);
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov = xs
        .iter()
        .zip(&ys)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / xs.len() as f64;
    let corr = cov / (variance(&xs).sqrt() * variance(&ys).sqrt());
    let max_rhat_2d = summarize(&draws2)
        .iter()
        .map(|s| s.rhat)
        .fold(f64::NAN, f64::max);
    assert!(
        (corr - rho).abs() < 0.05,
        "criterion 02: FAIL (correlation {corr})"
    );
    assert!(max_rhat_2d < 1.01, "criterion 02: FAIL (rhat {max_rhat_2d})");
    println!(
        "criterion 02 sampler calibration: PASS (mean {m:.4}, var {v:.4}, corr {corr:.4}, rhat {:.4})",
        max_rhat_1d.max(max_rhat_2d)
    );
}

#[test]
fn criterion_03_lowrank_loglik_matches_dense_cholesky() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0_f64;
    for case in 0..20 {
        let g = 5 + (case * 3) % 60;
        let mut t = 0.0;
        let times: Vec<f64> = (0..g)
            .map(|_| {
                t += rng.gen_range(10.0..40.0);
                t
            })
            .collect();
        let kp = KernelParams {
            se_amplitude: rng.gen_range(0.5..2.0),
            se_lengthscale: rng.gen_range(5.0..25.0),
            const_amplitude: rng.gen_range(0.1..1.0),
        };
        let sigma_y = rng.gen_range(0.5..1.5);
        let residual: Vec<f64> = (0..g)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();

        let inducing = select_inducing(&times, g).expect("full inducing set");
        let lr = lowrank_marginal_loglik(&residual, &times, &inducing, &kp, sigma_y, 1e-9)
            .expect("low-rank density");

        let k = kernel(&times, &times, &kp).expect("kernel");
        let mut flat = k.into_raw_vec_and_offset().0;
        for i in 0..g {
            flat[i * g + i] += sigma_y * sigma_y;
        }
        let dense = dense_mvn_logpdf(&flat, g, &residual).expect("dense density");

        let err = (lr - dense).abs() / dense.abs().max(1.0);
        worst = worst.max(err);
        assert!(
            err <= 1e-6,
            "criterion 03: FAIL (case {case}, g={g}: low-rank {lr} vs dense {dense})"
        );
    }
    println!("criterion 03 low-rank vs dense log density: PASS (worst relative error {worst:.2e})");
}

#[test]
fn criterion_04_response_area_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let floor = 5.0;
    let mut worst_area = 0.0_f64;
    let mut worst_sens = 0.0_f64;
    for _ in 0..100 {
        let d = rng.gen_range(1..=3);
        let beta_h: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..2.0)).collect();
        let beta_l: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..3.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..2.0)).collect();
        let (h, l) = response_params(&beta_h, &beta_l, &x, floor).expect("bell parameters");

        let area = response_area(h, l).expect("area");
        let f = |dt: f64| response_curve(dt, h, l).expect("curve");
        let quad = adaptive_simpson(&f, 3.0 * l - 12.0 * l, 3.0 * l + 12.0 * l, 1e-10 * area);
        let err = (area - quad).abs() / quad.abs();
        worst_area = worst_area.max(err);
        assert!(err <= 1e-6, "criterion 04: FAIL (area {area} vs quadrature {quad})");

        for p in 0..d {
            let sens = area_sensitivity(&beta_h, &beta_l, &x, p, floor).expect("sensitivity");
            let h_fd = 1e-5 * (1.0 + x[p].abs());
            let area_at = |xp: f64| {
                let mut xv = x.clone();
                xv[p] = xp;
                let (hh, ll) = response_params(&beta_h, &beta_l, &xv, floor).expect("bell");
                response_area(hh, ll).expect("area")
            };
            let fd = (area_at(x[p] + h_fd) - area_at(x[p] - h_fd)) / (2.0 * h_fd);
            let err = (sens - fd).abs() / fd.abs().max(1.0);
            worst_sens = worst_sens.max(err);
            assert!(err <= 1e-5, "criterion 04: FAIL (sensitivity {sens} vs fd {fd})");
        }
    }
    println!(
        "criterion 04 response area vs quadrature: PASS (area err {worst_area:.2e}, sensitivity err {worst_sens:.2e})"
    );
}

#[test]
fn criterion_05_covariate_noise_coefficient_recovery() {
    let mut covered = 0;
    let mut checks = 0;
    let mut eiv_better = 0;
    let reps = 10;
    for seed in 0..reps {
        let cfg = SimConfig {
            protocol: Protocol::Toy,
            n_patients: 1,
            meals_per_patient: 20,
            covariate_dim: 2,
            perturb_fraction: 0.5,
            noise_sd: 0.1,
            cadence_min: 30.0,
            horizon_days: 2,
            seed,
            ..SimConfig::default()
        };
        let (data, truth) = simulate_toy(&cfg).expect("toy data");

        // Scaling every delta by a constant and the coefficients by the same
        // constant leaves the likelihood unchanged, so only the clean half of
        // the meals pins the coefficient scale. A wide amount-error prior
        // keeps that flat direction inside the posterior instead of
        // collapsing it onto delta = 1.
        let mut eiv = ModelSpec::new(Variant::HierTimeCov);
        eiv.sigma_x = 1.0;
        let plain = ModelSpec::new(Variant::Hier);

        let mut sampler = small_sampler(1000 + seed);
        sampler.warmup = 400;
        sampler.draws = 300;
        let fit_eiv = fit_model(&data, &eiv, &sampler).expect("eiv fit");
        let fit_plain = fit_model(&data, &plain, &sampler).expect("plain fit");

        let mut bias_eiv = 0.0;
        let mut bias_plain = 0.0;
        for j in 0..2 {
            let truth_j = truth.beta_h[0][j];
            let draws = pooled_sorted(&fit_eiv, BlockId::BetaH(0), j);
            let (lo, hi) = (quantile(&draws, 0.05), quantile(&draws, 0.95));
            covered += usize::from(lo <= truth_j && truth_j <= hi);
            checks += 1;
            bias_eiv += (pooled_mean(&fit_eiv, BlockId::BetaH(0), j) - truth_j).powi(2);
            bias_plain += (pooled_mean(&fit_plain, BlockId::BetaH(0), j) - truth_j).powi(2);
        }
        eiv_better += usize::from(bias_eiv < bias_plain);
    }
    let need = (0.8 * checks as f64).ceil() as usize;
    assert!(
        covered >= need,
        "criterion 05: FAIL (90% intervals covered truth for {covered}/{checks} coefficients)"
    );
    assert!(
        eiv_better >= 8,
        "criterion 05: FAIL (amount-error model beat the plain model in {eiv_better}/{reps})"
    );
    println!(
        "criterion 05 coefficient recovery under input noise: PASS (coverage {covered}/{checks}, smaller bias {eiv_better}/{reps})"
    );
}

/// Generative replications shared by the direction and angle criteria:
/// strong responses, half the meals carrying multiplicative amount errors.
struct GenRep {
    data: Vec<PatientData>,
    truth: GroundTruth,
    cov_fit: FitResult,
}

fn gen_cfg(seed: u64) -> SimConfig {
    SimConfig {
        protocol: Protocol::Generative,
        n_patients: 2,
        meals_per_patient: 8,
        covariate_dim: 2,
        perturb_fraction: 0.5,
        perturb_sd: 0.2,
        noise_sd: 0.1,
        cadence_min: 15.0,
        horizon_days: 2,
        seed,
        ..SimConfig::default()
    }
}

fn strong_coeffs(cfg: &SimConfig) -> CoeffSet {
    let mut c = default_coeff_set(cfg);
    for row in &mut c.beta_h {
        for v in row {
            *v *= 5.0;
        }
    }
    c
}

fn amount_eiv_spec() -> ModelSpec {
    let mut spec = ModelSpec::new(Variant::HierTimeCov);
    spec.sigma_x = 0.2;
    spec
}

static GEN_REPS: OnceLock<Vec<GenRep>> = OnceLock::new();

fn gen_reps() -> &'static [GenRep] {
    GEN_REPS.get_or_init(|| {
        (0..5)
            .map(|s| {
                let cfg = gen_cfg(200 + s);
                let (data, truth) =
                    simulate_generative(&cfg, &strong_coeffs(&cfg)).expect("generative data");
                let mut sampler = small_sampler(300 + s);
                sampler.warmup = 400;
                sampler.draws = 300;
                let cov_fit = fit_model(&data, &amount_eiv_spec(), &sampler).expect("fit");
                GenRep {
                    data,
                    truth,
                    cov_fit,
                }
            })
            .collect()
    })
}

#[test]
fn criterion_06_amount_error_direction_recovery() {
    let mut correct = 0;
    let mut total = 0;
    let mut missed = Vec::new();
    for rep in gen_reps() {
        for (n, flags) in rep.truth.perturbed.iter().enumerate() {
            let block = rep
                .cov_fit
                .layout
                .block(BlockId::LogAmountErrors(n))
                .expect("amount-error block");
            for (k, &hit) in flags.iter().enumerate() {
                let true_ld = rep.truth.log_deltas[n][k];
                if !hit || true_ld == 0.0 {
                    continue;
                }
                let est = mean(&rep.cov_fit.draws.pooled(block.offset + k));
                total += 1;
                if est * true_ld > 0.0 {
                    correct += 1;
                } else {
                    missed.push((true_ld, est));
                }
            }
        }
    }
    let frac = correct as f64 / total as f64;
    assert!(
        frac >= 0.9,
        "criterion 06: FAIL (sign recovered for {correct}/{total} perturbed meals; missed (true, est): {missed:?})"
    );
    println!(
        "criterion 06 perturbation direction recovery: PASS ({correct}/{total} signs correct)"
    );
}

#[test]
fn criterion_07_covariate_eiv_improves_coefficient_angle() {
    let mut cos_cov = Vec::new();
    let mut cos_plain = Vec::new();
    for (s, rep) in gen_reps().iter().enumerate() {
        let truth = rep.truth.concat_heights();
        let est_cov = concat_height_means(&rep.cov_fit.draws, &rep.cov_fit.layout);
        cos_cov.push(cosine_similarity(&est_cov, &truth).expect("cosine"));

        let plain = ModelSpec::new(Variant::Hier);
        let fit = fit_model(&rep.data, &plain, &small_sampler(400 + s as u64)).expect("fit");
        let est_plain = concat_height_means(&fit.draws, &fit.layout);
        cos_plain.push(cosine_similarity(&est_plain, &truth).expect("cosine"));
    }
    let (mc, mp) = (mean(&cos_cov), mean(&cos_plain));
    assert!(
        mc + 1e-12 >= mp,
        "criterion 07: FAIL (amount-error cosine {mc:.4} vs plain {mp:.4})"
    );
    println!("criterion 07 coefficient angle ordering: PASS (cosine {mc:.4} vs {mp:.4})");
}

#[test]
fn criterion_08_time_eiv_rescues_shifted_meal_times() {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for s in 0..5u64 {
        let cfg = SimConfig {
            protocol: Protocol::Generative,
            n_patients: 2,
            meals_per_patient: 8,
            covariate_dim: 2,
            perturb_fraction: 0.0,
            perturb_sd: 0.0,
            noise_sd: 0.1,
            cadence_min: 30.0,
            horizon_days: 3,
            seed: 500 + s,
            ..SimConfig::default()
        };
        let (mut data, _truth) =
            simulate_generative(&cfg, &strong_coeffs(&cfg)).expect("generative data");

        // every reported meal time drifts +30 min with per-meal jitter while
        // the outcomes stay put
        let mut rng = ChaCha8Rng::seed_from_u64(600 + s);
        for p in &mut data {
            for e in &mut p.events {
                e.time_min += 30.0 + 5.0 * rng.sample::<f64, _>(StandardNormal);
            }
            for w in p.events.windows(2) {
                assert!(w[0].time_min < w[1].time_min, "shift broke event order");
            }
        }
        split_days(&mut data, 2);

        let m4 = |variant: Variant, seed: u64| -> f64 {
            let spec = ModelSpec::new(variant);
            let fit = fit_model(&data, &spec, &small_sampler(seed)).expect("fit");
            let td = trajectory_draws(&fit.draws, &fit.layout, &spec, &data, 200)
                .expect("trajectories");
            let ts = summarize_trajectories(&td);
            metric_mse(&ts.total_mean, &data, Split::Test, &[false, false])
                .expect("test error")
                .0
        };
        let with_time = m4(Variant::HierTime, 700 + s);
        let without = m4(Variant::Hier, 700 + s);
        wins += usize::from(with_time <= 0.9 * without);
        pairs.push((with_time, without));
    }
    assert!(
        wins >= 4,
        "criterion 08: FAIL (time-error model won {wins}/5: {pairs:?})"
    );
    println!("criterion 08 shifted-time rescue: PASS ({wins}/5 seeds, (with, without) = {pairs:?})");
}

#[test]
fn criterion_09_exact_u_test_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut checked = 0;
    for n_a in 1..=9usize {
        for n_b in 1..=(10 - n_a) {
            let n = n_a + n_b;
            let mut datasets: Vec<Vec<f64>> = Vec::new();
            // ascending and descending extremes, two shuffles, one with ties
            datasets.push((0..n).map(|i| i as f64).collect());
            datasets.push((0..n).map(|i| (n - i) as f64).collect());
            for _ in 0..2 {
                let mut v: Vec<f64> = (0..n).map(|i| i as f64).collect();
                for i in (1..n).rev() {
                    v.swap(i, rng.gen_range(0..=i));
                }
                datasets.push(v);
            }
            // a tied dataset, but not the all-identical one where the
            // implementation reports the coin-flip convention instead
            if n >= 3 {
                datasets.push((0..n).map(|i| (i / 2) as f64).collect());
            }

            for vals in datasets {
                let (a, b) = vals.split_at(n_a);
                let got = mann_whitney_u(a, b).expect("u test");
                assert!(got.exact, "exact path not taken for n = {n}");

                // independent oracle: pair counting over every subset of
                // size n_a chosen as group A
                let u_of = |mask: u32| -> f64 {
                    let mut u = 0.0;
                    for i in 0..n {
                        if mask & (1 << i) == 0 {
                            continue;
                        }
                        for j in 0..n {
                            if mask & (1 << j) != 0 {
                                continue;
                            }
                            if vals[i] > vals[j] {
                                u += 1.0;
                            } else if vals[i] == vals[j] {
                                u += 0.5;
                            }
                        }
                    }
                    u
                };
                let obs_mask = (1u32 << n_a) - 1;
                let u_obs = u_of(obs_mask);
                let mut hits = 0u64;
                let mut count = 0u64;
                for mask in 0..(1u32 << n) {
                    if mask.count_ones() as usize != n_a {
                        continue;
                    }
                    count += 1;
                    if u_of(mask) <= u_obs + 1e-9 {
                        hits += 1;
                    }
                }
                let oracle_p = hits as f64 / count as f64;
                assert!(
                    (got.u - u_obs).abs() < 1e-9,
                    "criterion 09: FAIL (u {} vs oracle {u_obs})",
                    got.u
                );
                assert!(
                    (got.p_one_sided - oracle_p).abs() < 1e-12,
                    "criterion 09: FAIL (p {} vs oracle {oracle_p} at n_a={n_a}, n_b={n_b})",
                    got.p_one_sided
                );
                checked += 1;
            }
        }
    }
    println!("criterion 09 exact rank test vs enumeration: PASS ({checked} datasets)");
}

#[test]
fn criterion_10_loo_matches_refit_oracle() {
    // Normal mean with known observation noise and a conjugate prior: the
    // leave-one-out predictive density is available in closed form.
    let y = [0.3, -1.2, 0.8, 2.1, -0.4];
    let (sigma2, tau2) = (1.0, 4.0);
    let n = y.len() as f64;
    let sum: f64 = y.iter().sum();

    let post_var = 1.0 / (n / sigma2 + 1.0 / tau2);
    let post_mean = post_var * sum / sigma2;

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let s = 4000;
    let mut ll = ndarray::Array2::zeros((s, y.len()));
    for si in 0..s {
        let mu = post_mean + post_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        for (i, &yi) in y.iter().enumerate() {
            ll[(si, i)] = normal_logpdf(yi, mu, sigma2.sqrt());
        }
    }
    let loo = psis_loo(&ll).expect("loo");

    let mut exact = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let v_i = 1.0 / ((n - 1.0) / sigma2 + 1.0 / tau2);
        let m_i = v_i * (sum - yi) / sigma2;
        exact += normal_logpdf(yi, m_i, (v_i + sigma2).sqrt());
    }
    let diff = (loo.elpd_loo - exact).abs();
    assert!(
        diff <= 0.1,
        "criterion 10: FAIL (psis {} vs refit {exact})",
        loo.elpd_loo
    );
    println!("criterion 10 importance-sampled vs refit cross-validation: PASS (difference {diff:.4})");
}

#[test]
fn criterion_11_identical_seeds_identical_draw_files() {
    let cfg = SimConfig {
        protocol: Protocol::Generative,
        n_patients: 1,
        meals_per_patient: 4,
        covariate_dim: 2,
        cadence_min: 60.0,
        horizon_days: 1,
        seed: 9,
        ..SimConfig::default()
    };
    let (data, _) = simulate_generative(&cfg, &default_coeff_set(&cfg)).expect("data");
    let spec = ModelSpec::new(Variant::Hier);
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 60,
        draws: 40,
        max_tree_depth: 7,
        ..SamplerConfig::default()
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let fit_a = fit_model(&data, &spec, &sampler).expect("fit");
    write_draws_csv(&a, &fit_a.draws).expect("write");
    let fit_b = fit_model(&data, &spec, &sampler).expect("fit");
    write_draws_csv(&b, &fit_b.draws).expect("write");
    assert_eq!(
        std::fs::read(&a).expect("read"),
        std::fs::read(&b).expect("read"),
        "criterion 11: FAIL (draw files differ between identical runs)"
    );
    println!("criterion 11 seeded reproducibility: PASS (draw files byte-identical)");
}
