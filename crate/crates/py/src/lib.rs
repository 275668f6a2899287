//! Python bindings. Configs travel as JSON strings with the same schema the
//! command line uses; numeric results come back as native lists and tuples,
//! larger reports as JSON.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use eivtraj::cli::artifacts::write_draws_csv;
use eivtraj::cli::ingest::{ingest, split_days};
use eivtraj::eval::mwu::mann_whitney_u;
use eivtraj::eval::psis::{psis_loo, LooResult};
use eivtraj::eval::{
    cosine_similarity, metric_report, pointwise_loglik, summarize_trajectories, trajectory_draws,
};
use eivtraj::inference::{fit_model, FitResult, SamplerConfig};
use eivtraj::simulate::{
    default_coeff_set, simulate_from_fit, simulate_generative, simulate_toy, GroundTruth,
    Protocol, SimConfig,
};
use eivtraj::{Error, ModelSpec, PatientData};

fn core_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::Sampling(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config_err(what: &str, e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("invalid {what} config: {e}"))
}

fn render<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// A set of patients, optionally with the generating ground truth attached.
#[pyclass]
pub struct Cohort {
    data: Vec<PatientData>,
    truth: Option<GroundTruth>,
}

#[pymethods]
impl Cohort {
    /// Simulates a cohort; `config` follows the `sim` section of the run
    /// configuration (protocol, n_patients, seed, ...).
    #[staticmethod]
    #[pyo3(signature = (config = "{}"))]
    fn simulate(config: &str) -> PyResult<Cohort> {
        let cfg: SimConfig = serde_json::from_str(config).map_err(|e| config_err("sim", e))?;
        let (data, truth) = match cfg.protocol {
            Protocol::Toy => simulate_toy(&cfg).map_err(core_err)?,
            Protocol::Generative => {
                simulate_generative(&cfg, &default_coeff_set(&cfg)).map_err(core_err)?
            }
            Protocol::FromFit => {
                return Err(PyValueError::new_err(
                    "replaying a fit goes through Fit.replay",
                ))
            }
        };
        Ok(Cohort {
            data,
            truth: Some(truth),
        })
    }

    /// Reads the two observation files the command line understands.
    #[staticmethod]
    fn from_csv(glucose: &str, meals: &str) -> PyResult<Cohort> {
        let data = ingest(Path::new(glucose), Path::new(meals)).map_err(core_err)?;
        Ok(Cohort { data, truth: None })
    }

    /// Marks observations and meals on the first `train_days` days as
    /// training data, the rest as held out.
    fn split_days(&mut self, train_days: usize) {
        split_days(&mut self.data, train_days);
    }

    #[getter]
    fn patient_ids(&self) -> Vec<String> {
        self.data.iter().map(|p| p.id.clone()).collect()
    }

    /// (times, outcomes) for one patient.
    fn observations(&self, patient: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = self
            .data
            .get(patient)
            .ok_or_else(|| PyValueError::new_err(format!("no patient {patient}")))?;
        Ok((p.obs_times.clone(), p.outcome.clone()))
    }

    /// (time, covariates) per treatment event for one patient.
    fn events(&self, patient: usize) -> PyResult<Vec<(f64, Vec<f64>)>> {
        let p = self
            .data
            .get(patient)
            .ok_or_else(|| PyValueError::new_err(format!("no patient {patient}")))?;
        Ok(p.events
            .iter()
            .map(|e| (e.time_min, e.covariates.clone()))
            .collect())
    }

    /// Ground truth as JSON when the cohort came from a simulator.
    fn truth_json(&self) -> PyResult<Option<String>> {
        self.truth.as_ref().map(render).transpose()
    }

    fn __repr__(&self) -> String {
        let obs: usize = self.data.iter().map(|p| p.obs_times.len()).sum();
        let meals: usize = self.data.iter().map(|p| p.events.len()).sum();
        format!(
            "Cohort({} patients, {obs} observations, {meals} meals)",
            self.data.len()
        )
    }
}

/// Posterior draws plus everything needed to score them.
#[pyclass]
pub struct Fit {
    result: FitResult,
    spec: ModelSpec,
}

impl Fit {
    fn loo_result(&self, cohort: &Cohort) -> PyResult<LooResult> {
        let ll = pointwise_loglik(
            &self.result.draws,
            &self.result.layout,
            &self.spec,
            &cohort.data,
        )
        .map_err(core_err)?;
        psis_loo(&ll).map_err(core_err)
    }
}

#[pymethods]
impl Fit {
    #[getter]
    fn max_rhat(&self) -> f64 {
        self.result.max_rhat
    }

    #[getter]
    fn parameter_names(&self) -> Vec<String> {
        self.result.draws.names.clone()
    }

    /// All retained draws of one named parameter, chains concatenated.
    fn pooled(&self, name: &str) -> PyResult<Vec<f64>> {
        let idx = self
            .result
            .draws
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown parameter `{name}`")))?;
        Ok(self.result.draws.pooled(idx))
    }

    fn posterior_means(&self) -> BTreeMap<String, f64> {
        self.result
            .draws
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), self.result.draws.mean(i)))
            .collect()
    }

    /// Per-parameter convergence summaries as JSON.
    fn summary_json(&self) -> PyResult<String> {
        render(&serde_json::json!({
            "max_rhat": self.result.max_rhat,
            "parameters": self.result.summaries,
        }))
    }

    /// Posterior-mean trend/response/total curves with 90% bands, as JSON.
    #[pyo3(signature = (cohort, max_draws = 200))]
    fn trajectory(&self, cohort: &Cohort, max_draws: usize) -> PyResult<String> {
        let td = trajectory_draws(
            &self.result.draws,
            &self.result.layout,
            &self.spec,
            &cohort.data,
            max_draws,
        )
        .map_err(core_err)?;
        render(&summarize_trajectories(&td))
    }

    /// Fit metrics (M1-M5 plus cross-validation) as JSON.
    #[pyo3(signature = (cohort, max_draws = 200))]
    fn metrics(&self, cohort: &Cohort, max_draws: usize) -> PyResult<String> {
        let td = trajectory_draws(
            &self.result.draws,
            &self.result.layout,
            &self.spec,
            &cohort.data,
            max_draws,
        )
        .map_err(core_err)?;
        let summary = summarize_trajectories(&td);
        let loo = self.loo_result(cohort).ok();
        let report =
            metric_report(&summary, &cohort.data, None, loo.as_ref()).map_err(core_err)?;
        render(&report)
    }

    /// (elpd, p_loo, looic, se) of the pointwise cross-validation estimate.
    fn loo(&self, cohort: &Cohort) -> PyResult<(f64, f64, f64, f64)> {
        let r = self.loo_result(cohort)?;
        Ok((r.elpd_loo, r.p_loo, r.looic, r.se_loo))
    }

    /// Cosine between posterior-mean height coefficients and the cohort's
    /// ground truth.
    fn cosine_to_truth(&self, cohort: &Cohort) -> PyResult<f64> {
        let truth = cohort
            .truth
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("cohort carries no ground truth"))?;
        let est =
            eivtraj::eval::concat_height_means(&self.result.draws, &self.result.layout);
        cosine_similarity(&est, &truth.concat_heights()).map_err(core_err)
    }

    /// Simulates new data from this fit on the cohort's grids and schedules;
    /// `config` must use the from-fit protocol.
    fn replay(&self, cohort: &Cohort, config: &str) -> PyResult<Cohort> {
        let cfg: SimConfig = serde_json::from_str(config).map_err(|e| config_err("sim", e))?;
        let (data, truth) =
            simulate_from_fit(&self.result.draws, &self.result.layout, &cohort.data, &cfg)
                .map_err(core_err)?;
        Ok(Cohort {
            data,
            truth: Some(truth),
        })
    }

    fn write_draws_csv(&self, path: &str) -> PyResult<()> {
        write_draws_csv(Path::new(path), &self.result.draws).map_err(core_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit({} chains x {} draws, {} parameters, max rhat {:.3})",
            self.result.draws.n_chains(),
            self.result.draws.n_draws(),
            self.result.draws.dim(),
            self.result.max_rhat
        )
    }
}

/// Samples the posterior. `model` and `sampler` follow the `model` and
/// `sampler` sections of the run configuration.
#[pyfunction]
#[pyo3(signature = (cohort, model = "{}", sampler = "{}"))]
fn fit(cohort: &Cohort, model: &str, sampler: &str) -> PyResult<Fit> {
    let spec: ModelSpec = serde_json::from_str(model).map_err(|e| config_err("model", e))?;
    let cfg: SamplerConfig = serde_json::from_str(sampler).map_err(|e| config_err("sampler", e))?;
    let result = fit_model(&cohort.data, &spec, &cfg).map_err(core_err)?;
    Ok(Fit { result, spec })
}

/// One-sided Mann-Whitney test that `a` is stochastically smaller than `b`;
/// returns (u, p, exact).
#[pyfunction]
fn mann_whitney(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, bool)> {
    let r = mann_whitney_u(&a, &b).map_err(core_err)?;
    Ok((r.u, r.p_one_sided, r.exact))
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    cosine_similarity(&a, &b).map_err(core_err)
}

/// Pareto-smoothed importance-sampling cross-validation from a draws x
/// observations log-likelihood matrix; returns (elpd, p_loo, looic, se).
#[pyfunction]
fn loo_from_loglik(rows: Vec<Vec<f64>>) -> PyResult<(f64, f64, f64, f64)> {
    let s = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("log-likelihood rows differ in length"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let ll = ndarray::Array2::from_shape_vec((s, n), flat)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let r = psis_loo(&ll).map_err(core_err)?;
    Ok((r.elpd_loo, r.p_loo, r.looic, r.se_loo))
}

#[pymodule]
fn eivtraj_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cohort>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(loo_from_loglik, m)?)?;
    Ok(())
}
