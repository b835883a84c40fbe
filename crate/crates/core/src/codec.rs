//! Encoder, decoder and the `LNRMC1` bitstream.
//!
//! ```text
//! "LNRMC1"             6 bytes magic
//! width, height        u16 little-endian each
//! plane count          u8 (1 or 3)
//! base qp              u8
//! chroma qp offset     u8
//! payload              bit-packed, MSB first, zero-padded to a byte
//! ```
//!
//! The payload holds every plane in turn; each plane is a raster-order run of
//! macroblocks, and each macroblock is a partition flag bit (0 = 16x16,
//! 1 = 4x4), a signed Exp-Golomb QP offset and its coefficient blocks. Nothing
//! in the stream says how the encoder chose these, so one decoder serves every
//! RDO mode.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{decode_block, encode_block, BitReader, BitWriter, EOB_BITS};
use crate::error::{Error, Result};
use crate::imageio::{Frame, GradientField};
use crate::metrics::Metric;
use crate::quant::{dequantize, QuantParams, DELTA_QP_MAX, DELTA_QP_MIN, QP_MAX};
use crate::rdo::{
    select_choice, CodingChoice, DistortionMode, MbDecision, Partition, RdoConfig, CENTER,
    DEFAULT_C,
};
use crate::transform::inverse;
use crate::MB_SIZE;

pub const MAGIC: &[u8; 6] = b"LNRMC1";
pub const HEADER_BYTES: usize = 13;
pub const DEFAULT_CHROMA_QP_OFFSET: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RdoMode {
    Sse,
    /// `tau = alpha * tau_tilde`.
    Lnrm {
        alpha: f64,
    },
    /// Fixed `tau`, bypassing the gradient-norm normalization.
    LnrmTau {
        tau: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub qp: i32,
    pub c: f64,
    pub mode: RdoMode,
    pub chroma_qp_offset: i32,
    /// Worker threads for the macroblock loop; `None` uses the global pool.
    /// Output does not depend on it.
    pub threads: Option<usize>,
}

impl EncoderConfig {
    pub fn new(qp: i32, mode: RdoMode) -> Self {
        EncoderConfig {
            qp,
            c: DEFAULT_C,
            mode,
            chroma_qp_offset: DEFAULT_CHROMA_QP_OFFSET,
            threads: None,
        }
    }

    pub fn with_qp(mut self, qp: i32) -> Self {
        self.qp = qp;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceCount {
    pub partition: Partition,
    pub delta_qp: i32,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub width: usize,
    pub height: usize,
    pub planes: usize,
    pub mode: DistortionMode,
    pub qp: i32,
    pub chroma_qp_offset: i32,
    pub c: f64,
    pub alpha: Option<f64>,
    pub tau_tilde: Option<f64>,
    pub tau: f64,
    pub lambda: f64,
    /// Whole stream, header and padding included; always `8 * bytes.len()`.
    pub total_bits: usize,
    pub header_bits: usize,
    /// Macroblock payload bits before byte padding.
    pub payload_bits: usize,
    /// Sum over macroblocks of the RDO objective at the chosen options.
    pub rd_cost: f64,
    pub sse: f64,
    /// `None` when the reconstruction is lossless.
    pub psnr_db: Option<f64>,
    /// Metric value of the input, when a metric was supplied.
    pub nrm_input: Option<f64>,
    /// Metric value of the reconstruction, when the metric can evaluate it.
    pub nrm_recon: Option<f64>,
    /// `grad b(x)^T (xhat - x)` over all planes.
    pub lnrm: Option<f64>,
    pub choice_histogram: Vec<ChoiceCount>,
    /// `choices[plane][mb]`, raster order.
    pub choices: Vec<Vec<CodingChoice>>,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub bitstream: Vec<u8>,
    pub reconstruction: Frame,
    pub report: EncodeReport,
}

fn plane_qp(base_qp: i32, chroma_offset: i32, plane: usize) -> i32 {
    if plane == 0 {
        base_qp
    } else {
        base_qp + chroma_offset
    }
}

/// Copies macroblock `mb` of a plane into a 256-entry raster buffer.
fn gather_mb<T: Copy>(plane: &[T], width: usize, mb: usize, out: &mut Vec<T>) {
    let mb_cols = width / MB_SIZE;
    let (x0, y0) = ((mb % mb_cols) * MB_SIZE, (mb / mb_cols) * MB_SIZE);
    out.clear();
    for r in 0..MB_SIZE {
        let start = (y0 + r) * width + x0;
        out.extend_from_slice(&plane[start..start + MB_SIZE]);
    }
}

/// Inverse-quantizes and inverse-transforms one macroblock into 8-bit
/// samples. Shared by encoder and decoder so both produce identical output.
fn reconstruct_mb(
    levels: &[Vec<i32>],
    choice: CodingChoice,
    qp: i32,
    plane: &mut [u8],
    width: usize,
    mb: usize,
) -> Result<()> {
    let step = QuantParams::new(qp, choice.delta_qp)?.step();
    let size = choice.partition.block_size();
    let n = size.len();
    let per_side = MB_SIZE / n;
    let mb_cols = width / MB_SIZE;
    let (x0, y0) = ((mb % mb_cols) * MB_SIZE, (mb / mb_cols) * MB_SIZE);
    for (b, l) in levels.iter().enumerate() {
        let samples = inverse(&dequantize(l, step, size)?);
        let (bx, by) = (x0 + (b % per_side) * n, y0 + (b / per_side) * n);
        for r in 0..n {
            for c in 0..n {
                let v = (samples[r * n + c] + CENTER).round().clamp(0.0, 255.0);
                plane[(by + r) * width + bx + c] = v as u8;
            }
        }
    }
    Ok(())
}

fn rdo_config(cfg: &EncoderConfig, gradient: Option<&GradientField>) -> Result<RdoConfig> {
    match cfg.mode {
        RdoMode::Sse => RdoConfig::sse(cfg.qp, cfg.c),
        RdoMode::Lnrm { alpha } => {
            let g = gradient.ok_or_else(|| Error::Config("LNRM mode needs a metric".into()))?;
            RdoConfig::lnrm(cfg.qp, cfg.c, alpha, g)
        }
        RdoMode::LnrmTau { tau } => {
            if gradient.is_none() {
                return Err(Error::Config("LNRM mode needs a metric".into()));
            }
            RdoConfig::lnrm_with_tau(cfg.qp, cfg.c, tau)
        }
    }
}

/// Encodes `frame`. The metric gradient, if a metric is given, is computed
/// once up front; LNRM modes require one.
pub fn encode(frame: &Frame, metric: Option<&dyn Metric>, cfg: &EncoderConfig) -> Result<Encoded> {
    if frame.width() > usize::from(u16::MAX) || frame.height() > usize::from(u16::MAX) {
        return Err(Error::contract("frame too large for a 16-bit header"));
    }
    if !(0..=QP_MAX).contains(&cfg.qp) || !(0..=i32::from(u8::MAX)).contains(&cfg.chroma_qp_offset)
    {
        return Err(Error::Config(format!(
            "qp {} / chroma offset {} out of range",
            cfg.qp, cfg.chroma_qp_offset
        )));
    }
    let input = frame.to_float();
    let gradient = metric.map(|m| m.gradient(&input)).transpose()?;
    if let Some(g) = &gradient {
        if !g.matches_frame(frame.width(), frame.height(), frame.num_planes()) {
            return Err(Error::contract("metric gradient does not match the frame"));
        }
    }
    let rdo = rdo_config(cfg, gradient.as_ref())?;

    let mbs = frame.mb_cols() * frame.mb_rows();
    let tasks: Vec<(usize, usize)> = (0..frame.num_planes())
        .flat_map(|p| (0..mbs).map(move |mb| (p, mb)))
        .collect();
    let run = |&(p, mb): &(usize, usize)| -> Result<MbDecision> {
        let mut pixels = Vec::with_capacity(MB_SIZE * MB_SIZE);
        gather_mb(frame.plane(p), frame.width(), mb, &mut pixels);
        let grad = match (&gradient, rdo.mode) {
            (Some(g), DistortionMode::LnrmReg) => {
                let mut buf = Vec::with_capacity(MB_SIZE * MB_SIZE);
                gather_mb(g.plane(p), frame.width(), mb, &mut buf);
                Some(buf)
            }
            _ => None,
        };
        select_choice(
            &pixels,
            grad.as_deref(),
            plane_qp(cfg.qp, cfg.chroma_qp_offset, p),
            &rdo,
        )
    };
    let decisions: Vec<MbDecision> = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| tasks.par_iter().map(run).collect::<Result<_>>())?,
        None => tasks.par_iter().map(run).collect::<Result<_>>()?,
    };

    let mut header = Vec::with_capacity(HEADER_BYTES);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&(frame.width() as u16).to_le_bytes());
    header.extend_from_slice(&(frame.height() as u16).to_le_bytes());
    header.push(frame.num_planes() as u8);
    header.push(cfg.qp as u8);
    header.push(cfg.chroma_qp_offset as u8);
    let mut writer = BitWriter::with_prefix(header);

    let mut recon_planes = vec![vec![0u8; frame.pixels_per_plane()]; frame.num_planes()];
    let mut choices = vec![Vec::with_capacity(mbs); frame.num_planes()];
    let mut rd_cost = 0.0;
    for (&(p, mb), d) in tasks.iter().zip(&decisions) {
        writer.write_bit(d.choice.partition == Partition::Sub4);
        writer.write_se(d.choice.delta_qp);
        let size = d.choice.partition.block_size();
        for l in &d.levels {
            encode_block(&mut writer, l, size);
        }
        let qp = plane_qp(cfg.qp, cfg.chroma_qp_offset, p);
        reconstruct_mb(
            &d.levels,
            d.choice,
            qp,
            &mut recon_planes[p],
            frame.width(),
            mb,
        )?;
        choices[p].push(d.choice);
        rd_cost += d.cost.total;
    }
    let payload_bits = writer.bit_len() - 8 * HEADER_BYTES;
    let bitstream = writer.finish();
    let reconstruction = Frame::new(frame.width(), frame.height(), recon_planes)?;

    let sse = frame.sse(&reconstruction)?;
    let psnr = frame.psnr(&reconstruction)?;
    let recon_f = reconstruction.to_float();
    let lnrm = gradient
        .as_ref()
        .map(|g| g.directional_change(&input, &recon_f))
        .transpose()?;
    let nrm_recon = metric.and_then(|m| m.evaluate(&recon_f).ok());

    let mut histogram: BTreeMap<(i32, Partition, i32), usize> = BTreeMap::new();
    for c in choices.iter().flatten() {
        *histogram
            .entry((c.delta_qp.abs(), c.partition, c.delta_qp))
            .or_default() += 1;
    }

    let report = EncodeReport {
        width: frame.width(),
        height: frame.height(),
        planes: frame.num_planes(),
        mode: rdo.mode,
        qp: cfg.qp,
        chroma_qp_offset: cfg.chroma_qp_offset,
        c: cfg.c,
        alpha: rdo.alpha,
        tau_tilde: rdo.tau_tilde,
        tau: rdo.tau,
        lambda: rdo.lambda,
        total_bits: 8 * bitstream.len(),
        header_bits: 8 * HEADER_BYTES,
        payload_bits,
        rd_cost,
        sse,
        psnr_db: psnr.is_finite().then_some(psnr),
        nrm_input: gradient.as_ref().map(GradientField::base_score),
        nrm_recon,
        lnrm,
        choice_histogram: histogram
            .into_iter()
            .map(|((_, partition, delta_qp), count)| ChoiceCount {
                partition,
                delta_qp,
                count,
            })
            .collect(),
        choices,
    };
    Ok(Encoded {
        bitstream,
        reconstruction,
        report,
    })
}

/// Decodes an `LNRMC1` stream. Any malformation is reported with the byte
/// offset where it was detected; no partial frame is ever returned.
pub fn decode(data: &[u8]) -> Result<Frame> {
    if data.len() < MAGIC.len() || &data[..MAGIC.len()] != MAGIC {
        return Err(Error::format(0, "bad bitstream magic"));
    }
    if data.len() < HEADER_BYTES {
        return Err(Error::format(data.len(), "truncated header"));
    }
    let width = usize::from(u16::from_le_bytes([data[6], data[7]]));
    let height = usize::from(u16::from_le_bytes([data[8], data[9]]));
    let num_planes = usize::from(data[10]);
    let base_qp = i32::from(data[11]);
    let chroma_offset = i32::from(data[12]);
    if width == 0 || height == 0 || width % MB_SIZE != 0 || height % MB_SIZE != 0 {
        return Err(Error::format(
            6,
            format!("frame size {width}x{height} is not macroblock aligned"),
        ));
    }
    if num_planes != 1 && num_planes != 3 {
        return Err(Error::format(10, format!("bad plane count {num_planes}")));
    }
    if base_qp > QP_MAX {
        return Err(Error::format(11, format!("base qp {base_qp} out of range")));
    }

    let mut reader = BitReader::at_byte(data, HEADER_BYTES);
    let mbs = (width / MB_SIZE) * (height / MB_SIZE);
    // Cheapest macroblock: partition flag, se(0), one end-of-block.
    let min_bits = (2 + EOB_BITS as usize) * mbs * num_planes;
    if reader.bits_left() < min_bits {
        return Err(Error::format(
            data.len(),
            "stream too short for its frame size",
        ));
    }
    let mut planes = vec![vec![0u8; width * height]; num_planes];
    for (p, plane) in planes.iter_mut().enumerate() {
        let qp = plane_qp(base_qp, chroma_offset, p);
        for mb in 0..mbs {
            let partition = if reader.read_bit()? {
                Partition::Sub4
            } else {
                Partition::Mb16
            };
            let at = reader.byte_offset();
            let delta_qp = reader.read_se()?;
            if !(DELTA_QP_MIN..=DELTA_QP_MAX).contains(&delta_qp) {
                return Err(Error::format(
                    at,
                    format!("delta qp {delta_qp} out of range"),
                ));
            }
            let size = partition.block_size();
            let levels = (0..partition.blocks())
                .map(|_| decode_block(&mut reader, size))
                .collect::<Result<Vec<_>>>()?;
            let choice = CodingChoice {
                partition,
                delta_qp,
            };
            reconstruct_mb(&levels, choice, qp, plane, width, mb)?;
        }
    }
    let tail = reader.bits_left();
    if tail >= 8 {
        return Err(Error::format(
            reader.byte_offset(),
            "trailing bytes after payload",
        ));
    }
    if tail > 0 && reader.read_bits(tail as u32)? != 0 {
        return Err(Error::format(data.len() - 1, "nonzero padding bits"));
    }
    Frame::new(width, height, planes)
}
