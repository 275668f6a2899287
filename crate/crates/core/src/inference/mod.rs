//! Posterior computation: taped gradients of the joint density, the NUTS
//! sampler with step-size/mass adaptation, and convergence diagnostics.

pub mod diagnostics;
pub mod nuts;

use std::sync::Arc;

use crate::autodiff::Tape;
use crate::data::PatientData;
use crate::model::{self, ModelSpec};
use crate::params::{Layout, ParamVector};
use crate::Result;

pub use diagnostics::{ess_bulk, ess_tail, rhat, summarize, ParamSummary};
pub use nuts::{nuts_sample, FnTarget, PosteriorDraws, SamplerConfig};

/// A differentiable log-density. `logp_and_grad` must be reentrant across
/// instances; the sampler gives every chain its own instance.
pub trait GradientTarget {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log density. A return
    /// of negative infinity (with any gradient) marks a rejected point.
    fn logp_and_grad(&mut self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// The model joint posterior as a sampler target, one tape per instance.
pub struct PosteriorTarget<'a> {
    data: &'a [PatientData],
    spec: &'a ModelSpec,
    layout: Arc<Layout>,
    tape: Tape,
}

impl<'a> PosteriorTarget<'a> {
    pub fn new(data: &'a [PatientData], spec: &'a ModelSpec, layout: Arc<Layout>) -> Self {
        PosteriorTarget {
            data,
            spec,
            layout,
            tape: Tape::new(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }
}

impl GradientTarget for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp_and_grad(&mut self, position: &[f64], grad: &mut [f64]) -> f64 {
        self.tape.clear();
        let vars = self.tape.vars(position);
        match model::log_posterior_s(&vars, &self.layout, self.data, self.spec) {
            Some(acc) => {
                let total = acc.total();
                let val = crate::autodiff::Scalar::value(total);
                if !val.is_finite() {
                    grad.fill(0.0);
                    return f64::NEG_INFINITY;
                }
                self.tape.gradient_into(total, &vars, grad);
                if grad.iter().any(|g| !g.is_finite()) {
                    grad.fill(0.0);
                    return f64::NEG_INFINITY;
                }
                val
            }
            None => {
                grad.fill(0.0);
                f64::NEG_INFINITY
            }
        }
    }
}

/// Value and gradient of the joint log-posterior at an unconstrained point.
/// Numerical failure yields negative infinity with a zero gradient.
pub fn grad_log_posterior(
    params: &ParamVector,
    data: &[PatientData],
    spec: &ModelSpec,
) -> (f64, Vec<f64>) {
    let mut target = PosteriorTarget::new(data, spec, params.layout.clone());
    let mut grad = vec![0.0; params.layout.dim()];
    let lp = target.logp_and_grad(&params.values, &mut grad);
    (lp, grad)
}

/// Posterior draws plus per-parameter summaries for one model configuration.
pub struct FitResult {
    pub draws: PosteriorDraws,
    pub layout: Arc<Layout>,
    pub summaries: Vec<ParamSummary>,
    pub max_rhat: f64,
}

/// Samples the joint posterior. Draws come back in constrained space with
/// layout-derived column names.
pub fn fit_model(
    data: &[PatientData],
    spec: &ModelSpec,
    cfg: &SamplerConfig,
) -> Result<FitResult> {
    spec.validate()?;
    crate::data::validate_cohort(data)?;
    let layout = Arc::new(Layout::for_model(spec, data));
    let init = vec![0.0; layout.dim()];
    let draws = nuts_sample(
        || PosteriorTarget::new(data, spec, layout.clone()),
        cfg,
        &init,
        Some(&layout),
    )?;
    let summaries = summarize(&draws);
    let max_rhat = summaries
        .iter()
        .map(|s| s.rhat)
        .filter(|r| r.is_finite())
        .fold(f64::NAN, f64::max);
    Ok(FitResult {
        draws,
        layout,
        summaries,
        max_rhat,
    })
}
