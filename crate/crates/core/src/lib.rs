//! Block-transform image codec whose encoder runs rate-distortion optimization
//! against a linearized no-reference quality metric (LNRM) with SSE
//! regularization.
//!
//! The pipeline is deliberately small: frames are split into 16x16
//! macroblocks, each macroblock is coded either as one 16x16 orthonormal DCT
//! block or sixteen 4x4 blocks, quantized with a per-macroblock QP offset and
//! entropy coded with run-length Exp-Golomb codes. The encoder picks the
//! partition and QP offset per macroblock by minimizing `d + lambda * r` where
//! `d` is either plain SSE or the gradient-aligned error
//! `t^T (zhat - z) + tau * ||zhat - z||^2` evaluated in the transform domain.
//!
//! The decoder never needs to know which distortion the encoder used.

pub mod codec;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod metrics;
pub mod quant;
pub mod rdo;
pub mod synth;
pub mod transform;

pub use codec::{decode, encode, EncodeReport, Encoded, EncoderConfig, RdoMode};
pub use error::{Error, Result};
pub use eval::{bd_quality, bd_rate, rd_sweep, BdRateReport, Column, RdCurve, RdPoint, Variant};
pub use imageio::{FloatFrame, Frame, GradientField};
pub use metrics::{ExternalMetric, Metric, TvScore};
pub use rdo::{BlockCost, CodingChoice, DistortionMode, Partition, RdoConfig};
pub use transform::{BlockSize, CoeffBlock};

/// Macroblock edge length in samples.
pub const MB_SIZE: usize = 16;
