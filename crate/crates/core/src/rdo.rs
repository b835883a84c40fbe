//! Per-macroblock rate-distortion optimization.
//!
//! Two distortion measures are supported, both evaluated on transform
//! coefficients:
//!
//! * `Sse`: `||zhat - z||^2`, with `lambda = c * 2^((qp - 12) / 3)`.
//! * `LnrmReg`: `t^T (zhat - z) + tau * ||zhat - z||^2`, where `t` is the
//!   block's metric gradient in the transform domain. `tau = alpha * tau_tilde`
//!   with `tau_tilde = 2 / sqrt(n_p) * ||grad b||_2 / step(qp)`, and
//!   `lambda = tau * c * 2^((qp - 12) / 3)`.
//!
//! The LNRM term is a signed quantity; options whose error lowers the metric
//! get a negative distortion and are never clamped.

use serde::{Deserialize, Serialize};

use crate::entropy::{rate_of, se_len};
use crate::error::{Error, Result};
use crate::imageio::GradientField;
use crate::quant::{dequantize, quantize, step_of, QuantParams, DELTA_QP_MAX};
use crate::transform::{forward, BlockSize, CoeffBlock};
use crate::MB_SIZE;

pub use crate::transform::Partition;

pub const DEFAULT_C: f64 = 0.85;

/// Sample value subtracted before the transform.
pub const CENTER: f64 = 128.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionMode {
    Sse,
    LnrmReg,
}

/// Frame-level RDO parameters. Build with [`RdoConfig::sse`],
/// [`RdoConfig::lnrm`] or [`RdoConfig::lnrm_with_tau`]; the derived fields are
/// fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdoConfig {
    pub mode: DistortionMode,
    pub qp: i32,
    pub c: f64,
    /// `None` when `tau` was given directly.
    pub alpha: Option<f64>,
    pub tau_tilde: Option<f64>,
    /// SSE weight; 1 in SSE mode.
    pub tau: f64,
    pub lambda: f64,
}

impl RdoConfig {
    pub fn sse(qp: i32, c: f64) -> Result<Self> {
        check_common(qp, c)?;
        Ok(RdoConfig {
            mode: DistortionMode::Sse,
            qp,
            c,
            alpha: None,
            tau_tilde: None,
            tau: 1.0,
            lambda: compute_lambda(DistortionMode::Sse, qp, c, 1.0),
        })
    }

    /// Regularized LNRM with `tau = alpha * tau_tilde`. The norm runs over every
    /// gradient entry of every plane and `n_p` counts all of those entries.
    pub fn lnrm(qp: i32, c: f64, alpha: f64, gradient: &GradientField) -> Result<Self> {
        check_common(qp, c)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let norm = gradient.l2_norm();
        if norm == 0.0 {
            return Err(Error::Config(
                "metric gradient is zero everywhere; LNRM mode is undefined, use SSE mode".into(),
            ));
        }
        let n_p = gradient.width() * gradient.height() * gradient.num_planes();
        let tau_tilde = compute_tau_tilde(norm, step_of(qp)?, n_p);
        let tau = alpha * tau_tilde;
        Ok(RdoConfig {
            mode: DistortionMode::LnrmReg,
            qp,
            c,
            alpha: Some(alpha),
            tau_tilde: Some(tau_tilde),
            tau,
            lambda: compute_lambda(DistortionMode::LnrmReg, qp, c, tau),
        })
    }

    /// Regularized LNRM with a caller-chosen `tau`; the gradient may be zero.
    pub fn lnrm_with_tau(qp: i32, c: f64, tau: f64) -> Result<Self> {
        check_common(qp, c)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        Ok(RdoConfig {
            mode: DistortionMode::LnrmReg,
            qp,
            c,
            alpha: None,
            tau_tilde: None,
            tau,
            lambda: compute_lambda(DistortionMode::LnrmReg, qp, c, tau),
        })
    }
}

fn check_common(qp: i32, c: f64) -> Result<()> {
    step_of(qp)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    Ok(())
}

/// `2 / sqrt(n_p) * grad_norm / step`.
pub fn compute_tau_tilde(grad_norm: f64, step: f64, n_p: usize) -> f64 {
    2.0 / (n_p as f64).sqrt() * grad_norm / step
}

/// `2^((qp - 12) / 3)`, exact under `qp -> qp + 3`.
fn lambda_scale(qp: i32) -> f64 {
    const CUBE_ROOTS: [f64; 3] = [1.0, 1.259_921_049_894_873_2, 1.587_401_051_968_199_4];
    let e = qp - 12;
    2f64.powi(e.div_euclid(3)) * CUBE_ROOTS[e.rem_euclid(3) as usize]
}

pub fn compute_lambda(mode: DistortionMode, qp: i32, c: f64, tau: f64) -> f64 {
    let base = c * lambda_scale(qp);
    match mode {
        DistortionMode::Sse => base,
        DistortionMode::LnrmReg => tau * base,
    }
}

pub fn sse_cost(z: &CoeffBlock, zhat: &CoeffBlock) -> f64 {
    z.coeffs()
        .iter()
        .zip(zhat.coeffs())
        .map(|(a, b)| (b - a) * (b - a))
        .sum()
}

/// `t^T (zhat - z) + tau * ||zhat - z||^2`; may be negative.
pub fn lnrm_reg_cost(z: &CoeffBlock, zhat: &CoeffBlock, t: &CoeffBlock, tau: f64) -> f64 {
    let dot: f64 = t
        .coeffs()
        .iter()
        .zip(z.coeffs().iter().zip(zhat.coeffs()))
        .map(|(g, (a, b))| g * (b - a))
        .sum();
    dot + tau * sse_cost(z, zhat)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodingChoice {
    pub partition: Partition,
    pub delta_qp: i32,
}

impl CodingChoice {
    /// The 18 options in tie-break priority order: smaller `|delta_qp|` first,
    /// then 16x16 before 4x4, then the smaller signed `delta_qp`.
    pub fn all() -> impl Iterator<Item = CodingChoice> {
        (0..=DELTA_QP_MAX).flat_map(|mag| {
            Partition::ALL.into_iter().flat_map(move |partition| {
                let deltas: &[i32] = if mag == 0 { &[0] } else { &[-1, 1] };
                deltas.iter().map(move |s| CodingChoice {
                    partition,
                    delta_qp: s * mag,
                })
            })
        })
    }

    /// Partition flag plus the signed Exp-Golomb `delta_qp`.
    pub fn side_info_bits(self) -> u32 {
        1 + se_len(self.delta_qp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCost {
    pub distortion: f64,
    pub rate_bits: u32,
    pub total: f64,
}

impl BlockCost {
    fn new(distortion: f64, rate_bits: u32, lambda: f64) -> Self {
        BlockCost {
            distortion,
            rate_bits,
            total: distortion + lambda * f64::from(rate_bits),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MbDecision {
    pub choice: CodingChoice,
    pub cost: BlockCost,
    /// Quantized levels per transform block, raster order inside the macroblock.
    pub levels: Vec<Vec<i32>>,
}

/// Transform-domain view of one macroblock under one partition.
struct PreparedPartition {
    size: BlockSize,
    coeffs: Vec<CoeffBlock>,
    gradient: Option<Vec<CoeffBlock>>,
}

fn split_blocks<T: Copy>(mb: &[T], size: BlockSize, map: impl Fn(T) -> f64) -> Vec<Vec<f64>> {
    let n = size.len();
    let per_side = MB_SIZE / n;
    (0..per_side * per_side)
        .map(|b| {
            let (bx, by) = ((b % per_side) * n, (b / per_side) * n);
            let mut out = Vec::with_capacity(n * n);
            for r in 0..n {
                let start = (by + r) * MB_SIZE + bx;
                out.extend(mb[start..start + n].iter().map(|&v| map(v)));
            }
            out
        })
        .collect()
}

fn prepare(
    pixels: &[u8],
    gradient: Option<&[f32]>,
    partition: Partition,
) -> Result<PreparedPartition> {
    let size = partition.block_size();
    let coeffs = split_blocks(pixels, size, |v| f64::from(v) - CENTER)
        .iter()
        .map(|b| forward(b, size))
        .collect::<Result<_>>()?;
    let gradient = gradient
        .map(|g| {
            split_blocks(g, size, f64::from)
                .iter()
                .map(|b| forward(b, size))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(PreparedPartition {
        size,
        coeffs,
        gradient,
    })
}

fn evaluate(
    prepared: &PreparedPartition,
    choice: CodingChoice,
    plane_qp: i32,
    config: &RdoConfig,
) -> Result<(BlockCost, Vec<Vec<i32>>)> {
    let step = QuantParams::new(plane_qp, choice.delta_qp)?.step();
    let mut distortion = 0.0;
    let mut bits = choice.side_info_bits();
    let mut levels = Vec::with_capacity(prepared.coeffs.len());
    for (i, z) in prepared.coeffs.iter().enumerate() {
        let l = quantize(z.coeffs(), step);
        let zhat = dequantize(&l, step, prepared.size)?;
        distortion += match (config.mode, &prepared.gradient) {
            (DistortionMode::Sse, _) => sse_cost(z, &zhat),
            (DistortionMode::LnrmReg, Some(t)) => lnrm_reg_cost(z, &zhat, &t[i], config.tau),
            (DistortionMode::LnrmReg, None) => unreachable!("checked in select_choice"),
        };
        bits += rate_of(&l, prepared.size);
        levels.push(l);
    }
    Ok((BlockCost::new(distortion, bits, config.lambda), levels))
}

/// Exhaustive search over the 18 partition x delta-QP options of one
/// macroblock of one plane.
///
/// `pixels` and `gradient` are the 16x16 samples in raster order; `plane_qp`
/// is the QP of the plane before `delta_qp`. Equal totals resolve to the
/// earliest option of [`CodingChoice::all`].
pub fn select_choice(
    pixels: &[u8],
    gradient: Option<&[f32]>,
    plane_qp: i32,
    config: &RdoConfig,
) -> Result<MbDecision> {
    let area = MB_SIZE * MB_SIZE;
    if pixels.len() != area || gradient.is_some_and(|g| g.len() != area) {
        return Err(Error::contract("macroblock inputs must hold 256 samples"));
    }
    let gradient = match config.mode {
        DistortionMode::Sse => None,
        DistortionMode::LnrmReg => Some(gradient.ok_or_else(|| {
            Error::Config("LNRM mode needs a metric gradient for every macroblock".into())
        })?),
    };
    let prepared = [
        prepare(pixels, gradient, Partition::Mb16)?,
        prepare(pixels, gradient, Partition::Sub4)?,
    ];
    let mut best: Option<MbDecision> = None;
    for choice in CodingChoice::all() {
        let p = &prepared[choice.partition as usize];
        let (cost, levels) = evaluate(p, choice, plane_qp, config)?;
        if best.as_ref().is_none_or(|b| cost.total < b.cost.total) {
            best = Some(MbDecision {
                choice,
                cost,
                levels,
            });
        }
    }
    Ok(best.expect("option set is never empty"))
}
