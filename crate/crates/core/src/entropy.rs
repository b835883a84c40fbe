//! Bit-level I/O and the run-length Exp-Golomb coefficient code.
//!
//! A block is scanned in zigzag order and emitted as `(run, level)` pairs:
//! `run` (zeros skipped) as unsigned Exp-Golomb, `level` as signed Exp-Golomb.
//! The pair `(0, 0)` is the end-of-block marker; a nonzero run with a zero
//! level never occurs in a valid stream.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::transform::BlockSize;

/// MSB-first bit writer.
#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues writing after already-present whole bytes.
    pub fn with_prefix(prefix: Vec<u8>) -> Self {
        let bit_len = prefix.len() * 8;
        BitWriter {
            bytes: prefix,
            bit_len,
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn write_bit(&mut self, bit: bool) {
        if self.bit_len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.bit_len % 8);
        }
        self.bit_len += 1;
    }

    /// Writes the low `count` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, count: u32) {
        debug_assert!(count <= 64);
        for i in (0..count).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    pub fn write_ue(&mut self, value: u32) {
        let x = u64::from(value) + 1;
        let bits = 64 - x.leading_zeros();
        self.write_bits(0, bits - 1);
        self.write_bits(x, bits);
    }

    pub fn write_se(&mut self, value: i32) {
        self.write_ue(signed_to_unsigned(value));
    }

    /// Pads with zero bits to a byte boundary and returns the buffer.
    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0 }
    }

    /// Reader positioned at byte `offset`.
    pub fn at_byte(data: &'a [u8], offset: usize) -> Self {
        BitReader {
            data,
            pos: offset * 8,
        }
    }

    pub fn bit_pos(&self) -> usize {
        self.pos
    }

    pub fn byte_offset(&self) -> usize {
        self.pos / 8
    }

    pub fn bits_left(&self) -> usize {
        self.data.len() * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = self
            .data
            .get(self.pos / 8)
            .ok_or_else(|| Error::format(self.pos / 8, "unexpected end of bitstream"))?;
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..count {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn read_ue(&mut self) -> Result<u32> {
        let start = self.pos / 8;
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 32 {
                return Err(Error::format(start, "Exp-Golomb prefix too long"));
            }
        }
        let suffix = self.read_bits(zeros)?;
        let value = ((1u64 << zeros) | suffix) - 1;
        u32::try_from(value).map_err(|_| Error::format(start, "Exp-Golomb value overflow"))
    }

    pub fn read_se(&mut self) -> Result<i32> {
        let start = self.pos / 8;
        let u = self.read_ue()?;
        unsigned_to_signed(u).ok_or_else(|| Error::format(start, "signed Exp-Golomb overflow"))
    }
}

/// 0, 1, -1, 2, -2, ... -> 0, 1, 2, 3, 4, ...
///
/// `i32::MIN` has no image; levels never get near it.
pub fn signed_to_unsigned(v: i32) -> u32 {
    if v > 0 {
        (v as u32) * 2 - 1
    } else {
        v.unsigned_abs() * 2
    }
}

fn unsigned_to_signed(u: u32) -> Option<i32> {
    let half = i32::try_from(u64::from(u).div_ceil(2)).ok()?;
    Some(if u % 2 == 1 { half } else { -half })
}

/// Length in bits of the unsigned Exp-Golomb code for `value`.
pub fn ue_len(value: u32) -> u32 {
    let x = u64::from(value) + 1;
    2 * (63 - x.leading_zeros()) + 1
}

pub fn se_len(value: i32) -> u32 {
    ue_len(signed_to_unsigned(value))
}

/// Bits of the end-of-block marker.
pub const EOB_BITS: u32 = 2;

fn build_zigzag(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n * n);
    for s in 0..(2 * n - 1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 0 {
            // up and to the right
            for r in (lo..=hi).rev() {
                order.push(r * n + (s - r));
            }
        } else {
            for r in lo..=hi {
                order.push(r * n + (s - r));
            }
        }
    }
    order
}

/// Zigzag scan order: raster index of the `i`-th scanned coefficient.
pub fn zigzag(size: BlockSize) -> &'static [usize] {
    static FOUR: OnceLock<Vec<usize>> = OnceLock::new();
    static SIXTEEN: OnceLock<Vec<usize>> = OnceLock::new();
    match size {
        BlockSize::Four => FOUR.get_or_init(|| build_zigzag(4)),
        BlockSize::Sixteen => SIXTEEN.get_or_init(|| build_zigzag(16)),
    }
}

fn for_each_pair(levels: &[i32], size: BlockSize, mut f: impl FnMut(u32, i32)) {
    debug_assert_eq!(levels.len(), size.area());
    let mut run = 0u32;
    for &idx in zigzag(size) {
        let level = levels[idx];
        if level == 0 {
            run += 1;
        } else {
            f(run, level);
            run = 0;
        }
    }
}

/// Appends the coded block to `writer` and returns the number of bits written.
pub fn encode_block(writer: &mut BitWriter, levels: &[i32], size: BlockSize) -> u32 {
    let start = writer.bit_len();
    for_each_pair(levels, size, |run, level| {
        writer.write_ue(run);
        writer.write_se(level);
    });
    writer.write_ue(0);
    writer.write_se(0);
    (writer.bit_len() - start) as u32
}

/// Exact number of bits `encode_block` would produce.
pub fn rate_of(levels: &[i32], size: BlockSize) -> u32 {
    let mut bits = EOB_BITS;
    for_each_pair(levels, size, |run, level| {
        bits += ue_len(run) + se_len(level)
    });
    bits
}

pub fn decode_block(reader: &mut BitReader<'_>, size: BlockSize) -> Result<Vec<i32>> {
    let scan = zigzag(size);
    let mut levels = vec![0; size.area()];
    let mut pos = 0usize;
    loop {
        let at = reader.byte_offset();
        let run = reader.read_ue()? as usize;
        let level = reader.read_se()?;
        if level == 0 {
            if run == 0 {
                return Ok(levels);
            }
            return Err(Error::format(at, "zero level with nonzero run"));
        }
        pos += run;
        if pos >= scan.len() {
            return Err(Error::format(at, "coefficient run past end of block"));
        }
        levels[scan[pos]] = level;
        pos += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits_of(f: impl FnOnce(&mut BitWriter)) -> String {
        let mut w = BitWriter::new();
        f(&mut w);
        let n = w.bit_len();
        let bytes = w.finish();
        (0..n)
            .map(|i| {
                if bytes[i / 8] & (0x80 >> (i % 8)) != 0 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }

    #[test]
    fn exp_golomb_codewords() {
        assert_eq!(bits_of(|w| w.write_ue(0)), "1");
        assert_eq!(bits_of(|w| w.write_ue(1)), "010");
        assert_eq!(bits_of(|w| w.write_ue(2)), "011");
        assert_eq!(bits_of(|w| w.write_ue(3)), "00100");
        let mapped: Vec<u32> = [0, 1, -1, 2, -2, 3]
            .iter()
            .map(|&v| signed_to_unsigned(v))
            .collect();
        assert_eq!(mapped, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn jpeg_zigzag_for_4x4() {
        assert_eq!(
            zigzag(BlockSize::Four),
            &[0, 1, 4, 8, 5, 2, 3, 6, 9, 12, 13, 10, 7, 11, 14, 15]
        );
        let mut z16 = zigzag(BlockSize::Sixteen).to_vec();
        assert_eq!(&z16[..6], &[0, 1, 16, 32, 17, 2]);
        z16.sort_unstable();
        assert_eq!(z16, (0..256).collect::<Vec<_>>());
    }

    #[test]
    fn empty_block_is_eob_only() {
        let mut w = BitWriter::new();
        assert_eq!(encode_block(&mut w, &[0; 16], BlockSize::Four), EOB_BITS);
        assert_eq!(rate_of(&[0; 256], BlockSize::Sixteen), EOB_BITS);
        assert_eq!(
            bits_of(|w| {
                encode_block(w, &[0; 16], BlockSize::Four);
            }),
            "11"
        );
    }

    #[test]
    fn dc_only_round_trip() {
        let mut levels = vec![0; 16];
        levels[0] = 1;
        let mut w = BitWriter::new();
        let bits = encode_block(&mut w, &levels, BlockSize::Four);
        assert_eq!(bits, rate_of(&levels, BlockSize::Four));
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        assert_eq!(decode_block(&mut r, BlockSize::Four).unwrap(), levels);
    }

    #[test]
    fn random_blocks_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut w = BitWriter::new();
        let mut blocks = Vec::new();
        let mut total = 0u64;
        for i in 0..10_000 {
            let size = if i % 3 == 0 {
                BlockSize::Sixteen
            } else {
                BlockSize::Four
            };
            let density = rng.gen_range(0.0..1.0);
            let levels: Vec<i32> = (0..size.area())
                .map(|_| {
                    if rng.gen_bool(density) {
                        rng.gen_range(-9..=9)
                    } else {
                        0
                    }
                })
                .collect();
            let bits = encode_block(&mut w, &levels, size);
            assert_eq!(bits, rate_of(&levels, size));
            total += u64::from(bits);
            blocks.push((size, levels));
        }
        assert_eq!(total as usize, w.bit_len());
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        for (size, levels) in &blocks {
            assert_eq!(&decode_block(&mut r, *size).unwrap(), levels);
        }
        assert!(r.bits_left() < 8);
    }

    #[test]
    fn malformed_blocks() {
        // run 1, level 0
        let mut w = BitWriter::new();
        w.write_ue(1);
        w.write_se(0);
        let bytes = w.finish();
        assert!(decode_block(&mut BitReader::new(&bytes), BlockSize::Four).is_err());
        // run past the end
        let mut w = BitWriter::new();
        w.write_ue(16);
        w.write_se(1);
        let bytes = w.finish();
        assert!(decode_block(&mut BitReader::new(&bytes), BlockSize::Four).is_err());
        assert!(decode_block(&mut BitReader::new(&[]), BlockSize::Four).is_err());
    }

    #[test]
    fn coarser_step_does_not_raise_rate_on_average() {
        use crate::quant::{quantize, step_of};
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let blocks: Vec<Vec<f64>> = (0..2000)
            .map(|_| (0..16).map(|_| rng.gen_range(-60.0..60.0)).collect())
            .collect();
        let mean_rate = |qp| {
            let step = step_of(qp).unwrap();
            blocks
                .iter()
                .map(|b| f64::from(rate_of(&quantize(b, step), BlockSize::Four)))
                .sum::<f64>()
                / blocks.len() as f64
        };
        let rates: Vec<f64> = (0..=51).step_by(3).map(mean_rate).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    }

    proptest! {
        #[test]
        fn ue_se_round_trip(values in proptest::collection::vec(-i32::MAX..=i32::MAX, 1..50)) {
            let mut w = BitWriter::new();
            for &v in &values {
                w.write_se(v);
                w.write_ue(v.unsigned_abs());
            }
            let expect: u32 = values.iter().map(|&v| se_len(v) + ue_len(v.unsigned_abs())).sum();
            prop_assert_eq!(w.bit_len(), expect as usize);
            let bytes = w.finish();
            let mut r = BitReader::new(&bytes);
            for &v in &values {
                prop_assert_eq!(r.read_se().unwrap(), v);
                prop_assert_eq!(r.read_ue().unwrap(), v.unsigned_abs());
            }
        }
    }
}
