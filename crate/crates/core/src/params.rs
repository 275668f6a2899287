//! Flat parameter vector layout: block bookkeeping, parameter naming, and the
//! bijection between unconstrained sampling space and constrained model space.

use std::collections::HashMap;
use std::sync::Arc;

use crate::data::{PatientData, NUTRIENTS};
use crate::error::Error;
use crate::model::{ModelSpec, Variant};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Coordinate is sampled as u = ln(theta); constraining applies exp and
    /// contributes +u to the log-Jacobian.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    BetaH(usize),
    BetaL(usize),
    BetaHTilde,
    BetaLTilde,
    SigmaH,
    SigmaL,
    SigmaY,
    KernelSeAmp(usize),
    KernelSeLengthscale(usize),
    KernelConstAmp(usize),
    /// Per-patient reporting bias d_n.
    ReportBias(usize),
    /// Per-event time offsets for one patient (training events only).
    TimeOffsets(usize),
    /// Per-event log multiplicative amount errors for one patient.
    LogAmountErrors(usize),
}

#[derive(Debug, Clone)]
pub struct Block {
    pub id: BlockId,
    pub offset: usize,
    pub len: usize,
    pub transform: Transform,
}

/// Immutable description of where every parameter lives in the flat vector.
#[derive(Debug, Clone)]
pub struct Layout {
    blocks: Vec<Block>,
    index: HashMap<BlockId, usize>,
    names: Vec<String>,
    dim: usize,
    pub n_patients: usize,
    pub covariate_dim: usize,
}

fn covariate_name(p: usize, j: usize) -> String {
    if p == NUTRIENTS.len() {
        NUTRIENTS[j].to_string()
    } else {
        format!("x{j}")
    }
}

impl Layout {
    pub fn for_model(spec: &ModelSpec, data: &[PatientData]) -> Layout {
        let n = data.len();
        let p = data.iter().map(|d| d.covariate_dim()).max().unwrap_or(0);
        let mut blocks = Vec::new();
        let mut names = Vec::new();
        let mut offset = 0usize;

        let push = |id: BlockId, len: usize, tr: Transform, mk: &mut dyn FnMut(usize) -> String,
                        blocks: &mut Vec<Block>,
                        names: &mut Vec<String>,
                        offset: &mut usize| {
            blocks.push(Block {
                id,
                offset: *offset,
                len,
                transform: tr,
            });
            for k in 0..len {
                names.push(mk(k));
            }
            *offset += len;
        };

        for i in 0..n {
            push(
                BlockId::BetaH(i),
                p,
                Transform::Identity,
                &mut |k| format!("beta_h[p{i}][{}]", covariate_name(p, k)),
                &mut blocks,
                &mut names,
                &mut offset,
            );
            push(
                BlockId::BetaL(i),
                p,
                Transform::Identity,
                &mut |k| format!("beta_l[p{i}][{}]", covariate_name(p, k)),
                &mut blocks,
                &mut names,
                &mut offset,
            );
        }

        if spec.variant.has_hyperprior() {
            push(
                BlockId::BetaHTilde,
                p,
                Transform::Identity,
                &mut |k| format!("beta_h_tilde[{}]", covariate_name(p, k)),
                &mut blocks,
                &mut names,
                &mut offset,
            );
            push(
                BlockId::BetaLTilde,
                p,
                Transform::Identity,
                &mut |k| format!("beta_l_tilde[{}]", covariate_name(p, k)),
                &mut blocks,
                &mut names,
                &mut offset,
            );
            push(
                BlockId::SigmaH,
                p,
                Transform::Log,
                &mut |k| format!("sigma_h[{}]", covariate_name(p, k)),
                &mut blocks,
                &mut names,
                &mut offset,
            );
            push(
                BlockId::SigmaL,
                p,
                Transform::Log,
                &mut |k| format!("sigma_l[{}]", covariate_name(p, k)),
                &mut blocks,
                &mut names,
                &mut offset,
            );
        }

        push(
            BlockId::SigmaY,
            1,
            Transform::Log,
            &mut |_| "sigma_y".to_string(),
            &mut blocks,
            &mut names,
            &mut offset,
        );

        for i in 0..n {
            push(
                BlockId::KernelSeAmp(i),
                1,
                Transform::Log,
                &mut |_| format!("kernel_se_amp[p{i}]"),
                &mut blocks,
                &mut names,
                &mut offset,
            );
            push(
                BlockId::KernelSeLengthscale(i),
                1,
                Transform::Log,
                &mut |_| format!("kernel_se_ls[p{i}]"),
                &mut blocks,
                &mut names,
                &mut offset,
            );
            push(
                BlockId::KernelConstAmp(i),
                1,
                Transform::Log,
                &mut |_| format!("kernel_const_amp[p{i}]"),
                &mut blocks,
                &mut names,
                &mut offset,
            );
        }

        if spec.variant.has_time_latents() {
            for (i, pat) in data.iter().enumerate() {
                push(
                    BlockId::ReportBias(i),
                    1,
                    Transform::Identity,
                    &mut |_| format!("d[p{i}]"),
                    &mut blocks,
                    &mut names,
                    &mut offset,
                );
                let train_idx: Vec<usize> = (0..pat.events.len())
                    .filter(|&m| pat.train_events[m])
                    .collect();
                push(
                    BlockId::TimeOffsets(i),
                    train_idx.len(),
                    Transform::Identity,
                    &mut |k| format!("eps[p{i}][{}]", train_idx[k]),
                    &mut blocks,
                    &mut names,
                    &mut offset,
                );
            }
        }

        if spec.variant.has_amount_latents() {
            for (i, pat) in data.iter().enumerate() {
                let train_idx: Vec<usize> = (0..pat.events.len())
                    .filter(|&m| pat.train_events[m])
                    .collect();
                push(
                    BlockId::LogAmountErrors(i),
                    train_idx.len(),
                    Transform::Identity,
                    &mut |k| format!("log_delta[p{i}][{}]", train_idx[k]),
                    &mut blocks,
                    &mut names,
                    &mut offset,
                );
            }
        }

        let index = blocks
            .iter()
            .enumerate()
            .map(|(k, b)| (b.id, k))
            .collect();
        Layout {
            blocks,
            index,
            names,
            dim: offset,
            n_patients: n,
            covariate_dim: p,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.index.get(&id).map(|&k| &self.blocks[k])
    }

    /// Slice of a flat vector corresponding to a block; empty when the variant
    /// excludes the block.
    pub fn get<'a, S>(&self, vals: &'a [S], id: BlockId) -> &'a [S] {
        match self.block(id) {
            Some(b) => &vals[b.offset..b.offset + b.len],
            None => &[],
        }
    }

    /// Per-coordinate transform tags, expanded.
    pub fn coordinate_transforms(&self) -> Vec<Transform> {
        let mut out = vec![Transform::Identity; self.dim];
        for b in &self.blocks {
            for k in 0..b.len {
                out[b.offset + k] = b.transform;
            }
        }
        out
    }

    /// Maps unconstrained values to constrained space; second return is the
    /// log-Jacobian of the map.
    pub fn constrain(&self, unconstrained: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(unconstrained.len(), self.dim);
        let mut out = unconstrained.to_vec();
        let mut logj = 0.0;
        for b in &self.blocks {
            if b.transform == Transform::Log {
                for k in 0..b.len {
                    let u = unconstrained[b.offset + k];
                    out[b.offset + k] = u.exp();
                    logj += u;
                }
            }
        }
        (out, logj)
    }

    pub fn unconstrain(&self, constrained: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(constrained.len(), self.dim);
        let mut out = constrained.to_vec();
        for b in &self.blocks {
            if b.transform == Transform::Log {
                for k in 0..b.len {
                    let v = constrained[b.offset + k];
                    if v <= 0.0 {
                        return Err(Error::Domain(format!(
                            "parameter {} must be positive, got {v}",
                            self.names[b.offset + k]
                        )));
                    }
                    out[b.offset + k] = v.ln();
                }
            }
        }
        Ok(out)
    }
}

/// A point in parameter space tied to its layout. Values are unconstrained.
#[derive(Debug, Clone)]
pub struct ParamVector {
    pub layout: Arc<Layout>,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.dim()];
        ParamVector { layout, values }
    }

    pub fn constrained(&self) -> (Vec<f64>, f64) {
        self.layout.constrain(&self.values)
    }
}

/// Convenience for tests and variant checks: does this variant expose the block at all.
pub fn variant_has_block(variant: Variant, id: BlockId) -> bool {
    match id {
        BlockId::BetaHTilde | BlockId::BetaLTilde | BlockId::SigmaH | BlockId::SigmaL => {
            variant.has_hyperprior()
        }
        BlockId::ReportBias(_) | BlockId::TimeOffsets(_) => variant.has_time_latents(),
        BlockId::LogAmountErrors(_) => variant.has_amount_latents(),
        _ => true,
    }
}
