//! CSV ingestion, the day-based train/test split and train-derived
//! standardization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{validate_cohort, PatientData, TreatmentEvent, NUTRIENTS};
use crate::error::Error;
use crate::math::{mean, variance};
use crate::Result;

pub const MINUTES_PER_DAY: f64 = 1440.0;

fn check_header(got: &csv::StringRecord, want: &[&str], path: &Path) -> Result<()> {
    let cols: Vec<&str> = got.iter().collect();
    if cols != want {
        return Err(Error::Input(format!(
            "{}: header must be `{}`, got `{}`",
            path.display(),
            want.join(","),
            cols.join(",")
        )));
    }
    Ok(())
}

fn parse_number(field: &str, what: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        Error::Input(format!(
            "{} line {line}: cannot parse {what} `{field}`",
            path.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Input(format!(
            "{} line {line}: non-finite {what}",
            path.display()
        )));
    }
    Ok(v)
}

/// Reads the two-file dataset into per-patient series. Patient order follows
/// first appearance in the glucose file; all times are shifted to minutes
/// from each patient's first glucose observation. Everything starts in the
/// training split; see [`split_days`].
pub fn ingest(glucose_path: &Path, meals_path: &Path) -> Result<Vec<PatientData>> {
    let mut rdr = csv::Reader::from_path(glucose_path)?;
    check_header(rdr.headers()?, &["patient_id", "time_min", "glucose"], glucose_path)?;
    let mut order: Vec<String> = Vec::new();
    let mut series: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(Error::Input(format!(
                "{} line {line}: expected 3 fields, got {}",
                glucose_path.display(),
                rec.len()
            )));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Input(format!(
                "{} line {line}: empty patient id",
                glucose_path.display()
            )));
        }
        let t = parse_number(&rec[1], "time", glucose_path, line)?;
        let g = parse_number(&rec[2], "glucose", glucose_path, line)?;
        let entry = series.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        if let Some(&last) = entry.0.last() {
            if t <= last {
                return Err(Error::Input(format!(
                    "{} line {line}: non-monotone time {t} (previous {last})",
                    glucose_path.display()
                )));
            }
        }
        entry.0.push(t);
        entry.1.push(g);
    }
    if order.is_empty() {
        return Err(Error::Input(format!(
            "{}: no glucose rows",
            glucose_path.display()
        )));
    }

    let mut rdr = csv::Reader::from_path(meals_path)?;
    let want: Vec<&str> = std::iter::once("patient_id")
        .chain(std::iter::once("time_min"))
        .chain(NUTRIENTS)
        .collect();
    check_header(rdr.headers()?, &want, meals_path)?;
    let mut meals: HashMap<String, Vec<TreatmentEvent>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 2 + NUTRIENTS.len() {
            return Err(Error::Input(format!(
                "{} line {line}: expected {} fields, got {}",
                meals_path.display(),
                2 + NUTRIENTS.len(),
                rec.len()
            )));
        }
        let id = rec[0].trim().to_string();
        if !series.contains_key(&id) {
            return Err(Error::Input(format!(
                "{} line {line}: meal for unknown patient `{id}`",
                meals_path.display()
            )));
        }
        let t = parse_number(&rec[1], "time", meals_path, line)?;
        let mut covariates = Vec::with_capacity(NUTRIENTS.len());
        for (j, nutrient) in NUTRIENTS.iter().enumerate() {
            let v = parse_number(&rec[2 + j], nutrient, meals_path, line)?;
            if v < 0.0 {
                return Err(Error::Input(format!(
                    "{} line {line}: negative {nutrient} {v}",
                    meals_path.display()
                )));
            }
            covariates.push(v);
        }
        let events = meals.entry(id).or_default();
        if let Some(last) = events.last() {
            if t < last.time_min {
                return Err(Error::Input(format!(
                    "{} line {line}: non-monotone meal time {t} (previous {})",
                    meals_path.display(),
                    last.time_min
                )));
            }
        }
        events.push(TreatmentEvent {
            time_min: t,
            covariates,
        });
    }

    let mut patients = Vec::with_capacity(order.len());
    for id in order {
        let (mut times, outcome) = series.remove(&id).expect("id collected above");
        let mut events = meals.remove(&id).unwrap_or_default();
        let shift = times[0];
        for t in &mut times {
            *t -= shift;
        }
        for e in &mut events {
            e.time_min -= shift;
        }
        patients.push(PatientData::new(id, times, outcome, events));
    }
    validate_cohort(&patients)?;
    Ok(patients)
}

/// Marks observations and events on days below `train_days` as training and
/// the rest as test, with day = floor(time / 1440).
pub fn split_days(patients: &mut [PatientData], train_days: usize) {
    let in_train = |t: f64| (t / MINUTES_PER_DAY).floor() < train_days as f64;
    for p in patients.iter_mut() {
        p.train_mask = p.obs_times.iter().map(|&t| in_train(t)).collect();
        p.train_events = p.events.iter().map(|e| in_train(e.time_min)).collect();
    }
}

/// Constants of the affine data transform, all derived from the training
/// split. Identity values are stored when a toggle is off, so applying a
/// recorded instance always reproduces the fitted scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    /// Per-patient training mean subtracted from the outcome.
    pub outcome_centers: Vec<f64>,
    /// Pooled training SD dividing the centered outcome.
    pub outcome_scale: f64,
    /// Per-nutrient pooled training means dividing the covariates.
    pub covariate_scales: Vec<f64>,
}

/// Derives constants from the training split and transforms both splits in
/// place. Degenerate scales (zero SD, nutrient never logged) fall back to 1.
pub fn standardize(
    patients: &mut [PatientData],
    outcome: bool,
    covariates: bool,
) -> Standardization {
    let dim = patients.iter().map(|p| p.covariate_dim()).max().unwrap_or(0);
    let mut st = Standardization {
        outcome_centers: vec![0.0; patients.len()],
        outcome_scale: 1.0,
        covariate_scales: vec![1.0; dim],
    };
    if outcome {
        let mut pooled = Vec::new();
        for (n, p) in patients.iter().enumerate() {
            let train = p.train_outcome();
            let center = if train.is_empty() { 0.0 } else { mean(&train) };
            st.outcome_centers[n] = center;
            pooled.extend(train.iter().map(|y| y - center));
        }
        let sd = variance(&pooled).sqrt();
        if sd > 0.0 && sd.is_finite() {
            st.outcome_scale = sd;
        }
    }
    if covariates && dim > 0 {
        let mut sums = vec![0.0; dim];
        let mut count = 0usize;
        for p in patients.iter() {
            for (e, &tr) in p.events.iter().zip(&p.train_events) {
                if tr {
                    for (s, v) in sums.iter_mut().zip(&e.covariates) {
                        *s += v;
                    }
                    count += 1;
                }
            }
        }
        for (j, s) in sums.iter().enumerate() {
            let m = s / count.max(1) as f64;
            if m > 0.0 && m.is_finite() {
                st.covariate_scales[j] = m;
            }
        }
    }
    apply_standardization(patients, &st).expect("constants built for these patients");
    st
}

/// Applies previously recorded constants, for replaying a fit's transform on
/// re-ingested data.
pub fn apply_standardization(patients: &mut [PatientData], st: &Standardization) -> Result<()> {
    if st.outcome_centers.len() != patients.len() {
        return Err(Error::Input(format!(
            "standardization covers {} patients, data has {}",
            st.outcome_centers.len(),
            patients.len()
        )));
    }
    for (n, p) in patients.iter_mut().enumerate() {
        for y in &mut p.outcome {
            *y = (*y - st.outcome_centers[n]) / st.outcome_scale;
        }
        for e in &mut p.events {
            for (j, v) in e.covariates.iter_mut().enumerate() {
                *v /= st.covariate_scales.get(j).copied().unwrap_or(1.0);
            }
        }
    }
    Ok(())
}
