//! Orthonormal separable DCT-II for 4x4 and 16x16 blocks.
//!
//! The basis is materialized as an explicit matrix `C` (row `k` is the `k`-th
//! cosine basis vector), so `z = C x C^T` and `x = C^T z C`. Because `C` is
//! orthogonal, norms and inner products survive the transform, which is what
//! allows RDO costs to be evaluated on coefficients instead of pixels.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::GradientField;
use crate::MB_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockSize {
    Four,
    Sixteen,
}

#[allow(clippy::len_without_is_empty)]
impl BlockSize {
    pub const fn len(self) -> usize {
        match self {
            BlockSize::Four => 4,
            BlockSize::Sixteen => 16,
        }
    }

    pub const fn area(self) -> usize {
        self.len() * self.len()
    }
}

impl TryFrom<usize> for BlockSize {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        match n {
            4 => Ok(BlockSize::Four),
            16 => Ok(BlockSize::Sixteen),
            _ => Err(Error::contract(format!("unsupported block size {n}"))),
        }
    }
}

/// How a macroblock is split into transform blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Partition {
    /// One 16x16 block.
    Mb16,
    /// Sixteen 4x4 blocks in raster order.
    Sub4,
}

impl Partition {
    pub const ALL: [Partition; 2] = [Partition::Mb16, Partition::Sub4];

    pub const fn block_size(self) -> BlockSize {
        match self {
            Partition::Mb16 => BlockSize::Sixteen,
            Partition::Sub4 => BlockSize::Four,
        }
    }

    /// Transform blocks per macroblock.
    pub const fn blocks(self) -> usize {
        let per_side = MB_SIZE / self.block_size().len();
        per_side * per_side
    }
}

#[derive(Debug)]
pub struct DctBasis {
    size: usize,
    /// Row-major `size x size`; row k is basis vector k.
    matrix: Vec<f64>,
}

impl DctBasis {
    fn build(size: usize) -> Self {
        let n = size as f64;
        let mut matrix = vec![0.0; size * size];
        for k in 0..size {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            for i in 0..size {
                let angle = std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n);
                matrix[k * size + i] = scale * angle.cos();
            }
        }
        DctBasis { size, matrix }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry `(k, i)`: basis vector `k` at sample `i`.
    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.matrix[k * self.size + i]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

pub fn basis(size: BlockSize) -> &'static DctBasis {
    static FOUR: OnceLock<DctBasis> = OnceLock::new();
    static SIXTEEN: OnceLock<DctBasis> = OnceLock::new();
    match size {
        BlockSize::Four => FOUR.get_or_init(|| DctBasis::build(4)),
        BlockSize::Sixteen => SIXTEEN.get_or_init(|| DctBasis::build(16)),
    }
}

/// Transform coefficients of one square block, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffBlock {
    size: BlockSize,
    coeffs: Vec<f64>,
}

impl CoeffBlock {
    pub fn new(size: BlockSize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != size.area() {
            return Err(Error::contract(format!(
                "{} coefficients for a {}x{} block",
                coeffs.len(),
                size.len(),
                size.len()
            )));
        }
        Ok(CoeffBlock { size, coeffs })
    }

    pub fn zeros(size: BlockSize) -> Self {
        CoeffBlock {
            size,
            coeffs: vec![0.0; size.area()],
        }
    }

    pub fn size(&self) -> BlockSize {
        self.size
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }
}

/// `out = C * m * C^T` (`transpose_basis == false`) or `C^T * m * C`.
fn separable(m: &[f64], basis: &DctBasis, transpose_basis: bool) -> Vec<f64> {
    let n = basis.size;
    let c = |k: usize, i: usize| {
        if transpose_basis {
            basis.matrix[i * n + k]
        } else {
            basis.matrix[k * n + i]
        }
    };
    // rows
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        let row = &m[r * n..(r + 1) * n];
        for k in 0..n {
            let mut acc = 0.0;
            for (i, &v) in row.iter().enumerate() {
                acc += c(k, i) * v;
            }
            tmp[r * n + k] = acc;
        }
    }
    // columns
    let mut out = vec![0.0; n * n];
    for col in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += c(k, i) * tmp[i * n + col];
            }
            out[k * n + col] = acc;
        }
    }
    out
}

/// Forward 2-D DCT of a `size x size` row-major block.
pub fn forward(block: &[f64], size: BlockSize) -> Result<CoeffBlock> {
    if block.len() != size.area() {
        return Err(Error::contract(format!(
            "forward transform got {} samples for size {}",
            block.len(),
            size.len()
        )));
    }
    Ok(CoeffBlock {
        size,
        coeffs: separable(block, basis(size), false),
    })
}

/// Inverse 2-D DCT.
pub fn inverse(coeffs: &CoeffBlock) -> Vec<f64> {
    separable(&coeffs.coeffs, basis(coeffs.size), true)
}

/// Copies the `size x size` block at `(x, y)` of a row-major plane into `out`.
pub fn extract_block<T: Copy + Into<f64>>(
    plane: &[T],
    stride: usize,
    x: usize,
    y: usize,
    size: usize,
    out: &mut Vec<f64>,
) {
    out.clear();
    for r in 0..size {
        let start = (y + r) * stride + x;
        out.extend(plane[start..start + size].iter().map(|&v| v.into()));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRect {
    pub x: usize,
    pub y: usize,
    pub size: BlockSize,
}

/// A tiling of a plane into transform blocks.
///
/// Blocks are listed macroblock by macroblock in raster order, and in raster
/// order inside each macroblock; this is also the bitstream order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionLayout {
    width: usize,
    height: usize,
    blocks: Vec<BlockRect>,
}

impl PartitionLayout {
    /// Every macroblock uses `partition`.
    pub fn uniform(width: usize, height: usize, partition: Partition) -> Result<Self> {
        let mbs = (width / MB_SIZE) * (height / MB_SIZE);
        PartitionLayout::from_macroblocks(width, height, &vec![partition; mbs])
    }

    /// One partition per macroblock, in raster order.
    pub fn from_macroblocks(width: usize, height: usize, partitions: &[Partition]) -> Result<Self> {
        if !width.is_multiple_of(MB_SIZE)
            || !height.is_multiple_of(MB_SIZE)
            || width == 0
            || height == 0
        {
            return Err(Error::Alignment { width, height });
        }
        let mb_cols = width / MB_SIZE;
        if partitions.len() != mb_cols * (height / MB_SIZE) {
            return Err(Error::contract(format!(
                "{} partitions for {} macroblocks",
                partitions.len(),
                mb_cols * (height / MB_SIZE)
            )));
        }
        let mut blocks = Vec::new();
        for (mb, &part) in partitions.iter().enumerate() {
            let (mx, my) = ((mb % mb_cols) * MB_SIZE, (mb / mb_cols) * MB_SIZE);
            let size = part.block_size();
            let per_side = MB_SIZE / size.len();
            for b in 0..per_side * per_side {
                blocks.push(BlockRect {
                    x: mx + (b % per_side) * size.len(),
                    y: my + (b / per_side) * size.len(),
                    size,
                });
            }
        }
        Ok(PartitionLayout {
            width,
            height,
            blocks,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn blocks(&self) -> &[BlockRect] {
        &self.blocks
    }
}

/// Transform-domain gradient `t_i = C grad_i C^T` for every block of
/// `layout`, per plane (`result[plane][block]`).
pub fn transform_gradient(
    field: &GradientField,
    layout: &PartitionLayout,
) -> Result<Vec<Vec<CoeffBlock>>> {
    if field.width() != layout.width || field.height() != layout.height {
        return Err(Error::contract(format!(
            "layout {}x{} does not tile gradient field {}x{}",
            layout.width,
            layout.height,
            field.width(),
            field.height()
        )));
    }
    let mut buf = Vec::with_capacity(MB_SIZE * MB_SIZE);
    field
        .planes()
        .iter()
        .map(|plane| {
            layout
                .blocks
                .iter()
                .map(|b| {
                    extract_block(plane, field.width(), b.x, b.y, b.size.len(), &mut buf);
                    forward(&buf, b.size)
                })
                .collect()
        })
        .collect()
}
