#![allow(dead_code)]

use lnrm_core::entropy::rate_of;
use lnrm_core::quant::{dequantize, quantize, step_of};
use lnrm_core::rdo::{compute_lambda, lnrm_reg_cost, sse_cost, CENTER};
use lnrm_core::transform::forward;
use lnrm_core::{BlockSize, DistortionMode, Partition, RdoConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen()).collect()
}

/// Bits of the signed Exp-Golomb code for `v`, counted from the codeword
/// definition rather than the library helper.
pub fn se_bits(v: i32) -> u32 {
    let k = if v > 0 {
        2 * v as u64 - 1
    } else {
        2 * (-(v as i64)) as u64
    };
    let mut len = 1;
    let mut x = k + 1;
    while x > 1 {
        x >>= 1;
        len += 2;
    }
    len
}

fn blocks_of<T: Copy>(mb: &[T], n: usize) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    for by in (0..16).step_by(n) {
        for bx in (0..16).step_by(n) {
            let mut b = Vec::new();
            for r in 0..n {
                for c in 0..n {
                    b.push(mb[(by + r) * 16 + bx + c]);
                }
            }
            out.push(b);
        }
    }
    out
}

/// Cost of one option computed from the primitives, outside the search loop.
pub fn option_cost(
    pixels: &[u8],
    gradient: Option<&[f32]>,
    plane_qp: i32,
    partition: Partition,
    delta_qp: i32,
    cfg: &RdoConfig,
) -> f64 {
    let size = match partition {
        Partition::Mb16 => BlockSize::Sixteen,
        Partition::Sub4 => BlockSize::Four,
    };
    let n = size.len();
    let step = step_of((plane_qp + delta_qp).clamp(0, 51)).unwrap();
    let px = blocks_of(pixels, n);
    let gr = gradient.map(|g| blocks_of(g, n));
    let mut d = 0.0;
    let mut bits = 1 + se_bits(delta_qp);
    for (i, b) in px.iter().enumerate() {
        let x: Vec<f64> = b.iter().map(|&v| f64::from(v) - CENTER).collect();
        let z = forward(&x, size).unwrap();
        let l = quantize(z.coeffs(), step);
        let zhat = dequantize(&l, step, size).unwrap();
        d += match cfg.mode {
            DistortionMode::Sse => sse_cost(&z, &zhat),
            DistortionMode::LnrmReg => {
                let g: Vec<f64> = gr.as_ref().unwrap()[i]
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect();
                let t = forward(&g, size).unwrap();
                lnrm_reg_cost(&z, &zhat, &t, cfg.tau)
            }
        };
        bits += rate_of(&l, size);
    }
    let lambda = compute_lambda(cfg.mode, cfg.qp, cfg.c, cfg.tau);
    d + lambda * f64::from(bits)
}

pub fn brute_force_min(
    pixels: &[u8],
    gradient: Option<&[f32]>,
    plane_qp: i32,
    cfg: &RdoConfig,
) -> f64 {
    let mut best = f64::INFINITY;
    for partition in [Partition::Mb16, Partition::Sub4] {
        for dq in -4..=4 {
            best = best.min(option_cost(pixels, gradient, plane_qp, partition, dq, cfg));
        }
    }
    best
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
