use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Canonical covariate order for the 5-nutrient CSV schema.
pub const NUTRIENTS: [&str; 5] = ["starch", "sugar", "fiber", "fat", "protein"];

/// One logged treatment (meal): reported time and reported covariate amounts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreatmentEvent {
    /// Reported time in minutes from the patient's first observation.
    pub time_min: f64,
    /// Reported amounts, nonnegative, length = covariate dimension.
    pub covariates: Vec<f64>,
}

/// One patient's series: outcome samples on an irregular grid plus treatment log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientData {
    pub id: String,
    /// Strictly increasing, minutes from the first observation.
    pub obs_times: Vec<f64>,
    pub outcome: Vec<f64>,
    /// Sorted by reported time.
    pub events: Vec<TreatmentEvent>,
    /// Which observations belong to the training split.
    pub train_mask: Vec<bool>,
    /// Which events belong to the training split (these carry measurement latents).
    pub train_events: Vec<bool>,
}

impl PatientData {
    /// Builds a patient with everything in the training split.
    pub fn new(
        id: impl Into<String>,
        obs_times: Vec<f64>,
        outcome: Vec<f64>,
        events: Vec<TreatmentEvent>,
    ) -> Self {
        let train_mask = vec![true; obs_times.len()];
        let train_events = vec![true; events.len()];
        PatientData {
            id: id.into(),
            obs_times,
            outcome,
            events,
            train_mask,
            train_events,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        self.events.first().map_or(0, |e| e.covariates.len())
    }

    pub fn n_train(&self) -> usize {
        self.train_mask.iter().filter(|&&m| m).count()
    }

    /// Number of events carrying latents.
    pub fn m_train(&self) -> usize {
        self.train_events.iter().filter(|&&m| m).count()
    }

    pub fn train_times(&self) -> Vec<f64> {
        self.obs_times
            .iter()
            .zip(&self.train_mask)
            .filter(|(_, &m)| m)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn train_outcome(&self) -> Vec<f64> {
        self.outcome
            .iter()
            .zip(&self.train_mask)
            .filter(|(_, &m)| m)
            .map(|(&y, _)| y)
            .collect()
    }

    pub fn validate(&self, covariate_dim: usize) -> Result<()> {
        if self.obs_times.len() != self.outcome.len() {
            return Err(Error::Input(format!(
                "patient {}: {} observation times vs {} outcome values",
                self.id,
                self.obs_times.len(),
                self.outcome.len()
            )));
        }
        if self.train_mask.len() != self.obs_times.len() {
            return Err(Error::Input(format!(
                "patient {}: train mask length mismatch",
                self.id
            )));
        }
        if self.train_events.len() != self.events.len() {
            return Err(Error::Input(format!(
                "patient {}: event mask length mismatch",
                self.id
            )));
        }
        for w in self.obs_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Input(format!(
                    "patient {}: observation times not strictly increasing at t={}",
                    self.id, w[1]
                )));
            }
        }
        for w in self.events.windows(2) {
            if w[1].time_min < w[0].time_min {
                return Err(Error::Input(format!(
                    "patient {}: events out of order at t={}",
                    self.id, w[1].time_min
                )));
            }
        }
        for (j, e) in self.events.iter().enumerate() {
            if e.covariates.len() != covariate_dim {
                return Err(Error::Input(format!(
                    "patient {}: event {} has {} covariates, expected {}",
                    self.id,
                    j,
                    e.covariates.len(),
                    covariate_dim
                )));
            }
            if e.covariates.iter().any(|&c| c < 0.0 || !c.is_finite()) {
                return Err(Error::Input(format!(
                    "patient {}: event {} has a negative or non-finite covariate",
                    self.id, j
                )));
            }
        }
        if self.outcome.iter().any(|y| !y.is_finite()) {
            return Err(Error::Input(format!(
                "patient {}: non-finite outcome value",
                self.id
            )));
        }
        Ok(())
    }
}

/// Validates a cohort: per-patient invariants plus a common covariate dimension.
pub fn validate_cohort(patients: &[PatientData]) -> Result<usize> {
    if patients.is_empty() {
        return Err(Error::Input("no patients".into()));
    }
    let p = patients.iter().map(|d| d.covariate_dim()).max().unwrap_or(0);
    for pat in patients {
        pat.validate(p)?;
    }
    Ok(p)
}
