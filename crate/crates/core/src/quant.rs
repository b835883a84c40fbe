//! Uniform scalar quantization with `step = 2^((qp - 4) / 6)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{BlockSize, CoeffBlock};

pub const QP_MIN: i32 = 0;
pub const QP_MAX: i32 = 51;
pub const DELTA_QP_MIN: i32 = -4;
pub const DELTA_QP_MAX: i32 = 4;

// 2^(r/6), r = 0..5
fn sixth_root_power(r: i32) -> f64 {
    const TABLE: [f64; 6] = [
        1.0,
        1.122_462_048_309_373,
        1.259_921_049_894_873_2,
        std::f64::consts::SQRT_2,
        1.587_401_051_968_199_4,
        1.781_797_436_280_678_6,
    ];
    TABLE[r as usize]
}

/// Quantizer step for `qp`. Split into an exact power of two and a sixth-root
/// table entry so that `step_of(qp + 6) == 2 * step_of(qp)` holds bit-exactly.
pub fn step_of(qp: i32) -> Result<f64> {
    if !(QP_MIN..=QP_MAX).contains(&qp) {
        return Err(Error::contract(format!(
            "qp {qp} outside [{QP_MIN}, {QP_MAX}]"
        )));
    }
    Ok(step_unchecked(qp))
}

fn step_unchecked(qp: i32) -> f64 {
    let e = qp - 4;
    2f64.powi(e.div_euclid(6)) * sixth_root_power(e.rem_euclid(6))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantParams {
    pub qp: i32,
    pub delta_qp: i32,
}

impl QuantParams {
    pub fn new(qp: i32, delta_qp: i32) -> Result<Self> {
        if !(DELTA_QP_MIN..=DELTA_QP_MAX).contains(&delta_qp) {
            return Err(Error::contract(format!(
                "delta qp {delta_qp} outside [-4, 4]"
            )));
        }
        Ok(QuantParams { qp, delta_qp })
    }

    /// `qp + delta_qp` clamped to the legal QP range.
    pub fn effective_qp(self) -> i32 {
        (self.qp + self.delta_qp).clamp(QP_MIN, QP_MAX)
    }

    pub fn step(self) -> f64 {
        step_unchecked(self.effective_qp())
    }
}

/// `round(coeff / step)`, halves rounded away from zero.
pub fn quantize(coeffs: &[f64], step: f64) -> Vec<i32> {
    debug_assert!(step > 0.0);
    coeffs.iter().map(|&c| (c / step).round() as i32).collect()
}

pub fn dequantize(levels: &[i32], step: f64, size: BlockSize) -> Result<CoeffBlock> {
    CoeffBlock::new(size, levels.iter().map(|&l| step * f64::from(l)).collect())
}
