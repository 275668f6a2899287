//! Serialization of run artifacts: datasets, draw matrices, fit summaries,
//! trajectories, latent tables, Pareto diagnostics and the manifest that
//! hashes them all.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::Standardization;
use super::RunConfig;
use crate::data::{PatientData, NUTRIENTS};
use crate::error::Error;
use crate::eval::{LooResult, TrajectorySummary, UTest};
use crate::inference::{ParamSummary, PosteriorDraws};
use crate::math::{mean, variance};
use crate::model::Variant;
use crate::params::{BlockId, Layout};
use crate::Result;

/// Full-precision text for a float; `parse::<f64>` recovers the bits.
/// Tiny magnitudes switch to exponent form to avoid kilobyte zero runs.
fn fmt(v: f64) -> String {
    if v != 0.0 && v.is_finite() && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Writes `glucose.csv` and `meals.csv` in the ingestion schema. Covariates
/// narrower than the five-nutrient schema are zero-padded on the right.
pub fn write_dataset(dir: &Path, patients: &[PatientData]) -> Result<(PathBuf, PathBuf)> {
    let dim = patients.iter().map(|p| p.covariate_dim()).max().unwrap_or(0);
    if dim > NUTRIENTS.len() {
        return Err(Error::Input(format!(
            "cannot serialize {dim} covariates into the {}-nutrient schema",
            NUTRIENTS.len()
        )));
    }
    let glucose = dir.join("glucose.csv");
    let mut w = csv::Writer::from_path(&glucose)?;
    w.write_record(["patient_id", "time_min", "glucose"])?;
    for p in patients {
        for (t, y) in p.obs_times.iter().zip(&p.outcome) {
            w.write_record(&[p.id.clone(), fmt(*t), fmt(*y)])?;
        }
    }
    w.flush()?;

    let meals = dir.join("meals.csv");
    let mut w = csv::Writer::from_path(&meals)?;
    let mut header = vec!["patient_id", "time_min"];
    header.extend(NUTRIENTS);
    w.write_record(&header)?;
    for p in patients {
        for e in &p.events {
            let mut rec = vec![p.id.clone(), fmt(e.time_min)];
            for j in 0..NUTRIENTS.len() {
                rec.push(fmt(e.covariates.get(j).copied().unwrap_or(0.0)));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok((glucose, meals))
}

/// One row per retained draw: chain, draw index, log density, divergence
/// flag, then every constrained parameter under its layout name.
pub fn write_draws_csv(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["chain".to_string(), "draw".to_string(), "logp".to_string(), "divergent".to_string()];
    header.extend(draws.names.iter().cloned());
    w.write_record(&header)?;
    for c in 0..draws.n_chains() {
        for d in 0..draws.n_draws() {
            let mut rec = Vec::with_capacity(4 + draws.dim());
            rec.push(c.to_string());
            rec.push(d.to_string());
            rec.push(fmt(draws.logp[(c, d)]));
            rec.push(u8::from(draws.divergences[(c, d)]).to_string());
            for p in 0..draws.dim() {
                rec.push(fmt(draws.draws[(c, d, p)]));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the draw matrix from `draws.csv`. Adaptation details that are
/// not in the file (tree depths, step sizes) come back zeroed.
pub fn read_draws_csv(path: &Path) -> Result<PosteriorDraws> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[..4] != ["chain", "draw", "logp", "divergent"] {
        return Err(Error::Input(format!(
            "{}: not a draws file (unexpected leading columns)",
            path.display()
        )));
    }
    let names: Vec<String> = cols[4..].iter().map(|s| s.to_string()).collect();
    let dim = names.len();
    let mut rows: Vec<(usize, usize, f64, bool, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| {
            Error::Input(format!("{} line {line}: bad {what}", path.display()))
        };
        let chain: usize = rec[0].parse().map_err(|_| bad("chain"))?;
        let draw: usize = rec[1].parse().map_err(|_| bad("draw"))?;
        let logp: f64 = rec[2].parse().map_err(|_| bad("logp"))?;
        let div = &rec[3] == "1";
        if rec.len() != 4 + dim {
            return Err(bad("width"));
        }
        let mut vals = Vec::with_capacity(dim);
        for p in 0..dim {
            vals.push(rec[4 + p].parse().map_err(|_| bad("value"))?);
        }
        rows.push((chain, draw, logp, div, vals));
    }
    let n_chains = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let n_draws = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if n_chains == 0 || n_draws == 0 || rows.len() != n_chains * n_draws {
        return Err(Error::Input(format!(
            "{}: expected {n_chains}x{n_draws} rows, got {}",
            path.display(),
            rows.len()
        )));
    }
    let mut draws = Array3::zeros((n_chains, n_draws, dim));
    let mut logp = Array2::zeros((n_chains, n_draws));
    let mut divergences = Array2::from_elem((n_chains, n_draws), false);
    let mut seen = vec![false; n_chains * n_draws];
    for (c, d, lp, div, vals) in rows {
        let slot = c * n_draws + d;
        if seen[slot] {
            return Err(Error::Input(format!(
                "{}: duplicate chain {c} draw {d}",
                path.display()
            )));
        }
        seen[slot] = true;
        logp[(c, d)] = lp;
        divergences[(c, d)] = div;
        for (p, v) in vals.into_iter().enumerate() {
            draws[(c, d, p)] = v;
        }
    }
    Ok(PosteriorDraws {
        names,
        draws,
        logp,
        divergences,
        tree_depths: Array2::zeros((n_chains, n_draws)),
        step_sizes: vec![0.0; n_chains],
        warmup_divergences: vec![0; n_chains],
    })
}

#[derive(Debug, Serialize)]
pub struct FitSummary<'a> {
    pub variant: Variant,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub warmup: usize,
    pub max_rhat: f64,
    pub divergences: Vec<usize>,
    pub step_sizes: &'a [f64],
    pub parameters: &'a [ParamSummary],
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    fs::write(path, buf)?;
    Ok(())
}

/// Trajectory table, one row per observation grid point. `test_only`
/// restricts rows to points outside the training split.
pub fn write_trajectory_csv(
    path: &Path,
    data: &[PatientData],
    ts: &TrajectorySummary,
    test_only: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "patient_id",
        "time_min",
        "trend_mean",
        "response_mean",
        "total_mean",
        "lower5",
        "upper95",
    ])?;
    for (n, p) in data.iter().enumerate() {
        for (i, &t) in p.obs_times.iter().enumerate() {
            if test_only && p.train_mask[i] {
                continue;
            }
            w.write_record(&[
                p.id.clone(),
                fmt(t),
                fmt(ts.trend_mean[n][i]),
                fmt(ts.response_mean[n][i]),
                fmt(ts.total_mean[n][i]),
                fmt(ts.band_lower[n][i]),
                fmt(ts.band_upper[n][i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-meal latent summaries for the training events. Offset columns
/// (reporting bias plus per-meal jitter) appear for the time-EIV variants,
/// amount columns only for the full model.
pub fn write_latents_csv(
    path: &Path,
    data: &[PatientData],
    posterior: &PosteriorDraws,
    layout: &Layout,
    variant: Variant,
) -> Result<()> {
    let has_time = matches!(variant, Variant::HierTime | Variant::HierTimeCov);
    let has_amount = matches!(variant, Variant::HierTimeCov);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id", "event_index", "time_min"];
    if has_time {
        header.extend(["offset_mean", "offset_sd"]);
    }
    if has_amount {
        header.extend(["delta_mean", "delta_sd"]);
    }
    w.write_record(&header)?;

    let stats = |vals: &[f64]| (mean(vals), variance(vals).sqrt());
    for (n, p) in data.iter().enumerate() {
        let bias = layout
            .block(BlockId::ReportBias(n))
            .map(|b| posterior.pooled(b.offset));
        let eps = layout.block(BlockId::TimeOffsets(n));
        let amount = layout.block(BlockId::LogAmountErrors(n));
        let mut k = 0;
        for (m, &tr) in p.train_events.iter().enumerate() {
            if !tr {
                continue;
            }
            let mut rec = vec![p.id.clone(), m.to_string(), fmt(p.events[m].time_min)];
            if has_time {
                let b = eps.expect("time blocks exist for time variants");
                let mut total = posterior.pooled(b.offset + k);
                if let Some(bias) = &bias {
                    for (t, d) in total.iter_mut().zip(bias) {
                        *t += d;
                    }
                }
                let (m_, s_) = stats(&total);
                rec.push(fmt(m_));
                rec.push(fmt(s_));
            }
            if has_amount {
                let b = amount.expect("amount blocks exist for the full model");
                let delta: Vec<f64> = posterior
                    .pooled(b.offset + k)
                    .iter()
                    .map(|v| v.exp())
                    .collect();
                let (m_, s_) = stats(&delta);
                rec.push(fmt(m_));
                rec.push(fmt(s_));
            }
            w.write_record(&rec)?;
            k += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-training-observation Pareto tail indices, same order as the
/// log-likelihood matrix: patients in cohort order, points in time order.
pub fn write_pareto_csv(path: &Path, data: &[PatientData], loo: &LooResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["obs_index", "patient_id", "time_min", "pareto_k", "flagged"])?;
    let mut idx = 0usize;
    for p in data {
        for (i, &t) in p.obs_times.iter().enumerate() {
            if !p.train_mask[i] {
                continue;
            }
            let k = loo.pareto_k.get(idx).copied().unwrap_or(f64::NAN);
            w.write_record(&[
                idx.to_string(),
                p.id.clone(),
                fmt(t),
                fmt(k),
                u8::from(k > 0.7).to_string(),
            ])?;
            idx += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything evaluate produces for one fit; the report command renders a
/// table from several of these.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub label: String,
    pub variant: Variant,
    pub pooled_draws: usize,
    pub metrics: crate::eval::MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_test: Option<UTest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine_beta_h: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    /// Input path -> content hash.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file name -> content hash.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Hashes the named files in `dir` into the manifest and writes
/// `manifest.json` there.
pub fn finalize_manifest(dir: &Path, mut manifest: Manifest, artifact_names: &[&str]) -> Result<()> {
    for name in artifact_names {
        let p = dir.join(name);
        if p.exists() {
            manifest.artifacts.insert((*name).to_string(), sha256_hex(&p)?);
        }
    }
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| {
        Error::Input(format!("cannot read fit manifest {}: {e}", p.display()))
    })?;
    Ok(serde_json::from_str(&text)?)
}
