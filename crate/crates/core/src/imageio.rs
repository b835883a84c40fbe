//! Frame and gradient-field data model plus their on-disk formats.
//!
//! Frames are read from and written to binary PGM (`P5`, one plane) and PPM
//! (`P6`, three interleaved planes) with `maxval` 255. PPM input is kept as
//! three full-resolution planes; nothing is converted or subsampled.
//!
//! Gradient fields use a small little-endian container:
//!
//! ```text
//! "LNRMG1\n"            7 bytes magic
//! width                 u32
//! height                u32
//! plane count           u8
//! base score            f64
//! values                plane_count * width * height f32, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::MB_SIZE;

/// 8-bit planar image. One plane (luma) or three planes of equal size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    planes: Vec<Vec<u8>>,
}

impl Frame {
    pub fn new(width: usize, height: usize, planes: Vec<Vec<u8>>) -> Result<Self> {
        if width == 0
            || height == 0
            || !width.is_multiple_of(MB_SIZE)
            || !height.is_multiple_of(MB_SIZE)
        {
            return Err(Error::Alignment { width, height });
        }
        check_plane_layout(width, height, planes.iter().map(Vec::len))?;
        Ok(Frame {
            width,
            height,
            planes,
        })
    }

    /// Frame with every sample of every plane set to `value`.
    pub fn constant(width: usize, height: usize, num_planes: usize, value: u8) -> Result<Self> {
        Frame::new(width, height, vec![vec![value; width * height]; num_planes])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, index: usize) -> &[u8] {
        &self.planes[index]
    }

    pub fn planes(&self) -> &[Vec<u8>] {
        &self.planes
    }

    /// Samples per plane (`n_p`).
    pub fn pixels_per_plane(&self) -> usize {
        self.width * self.height
    }

    pub fn mb_cols(&self) -> usize {
        self.width / MB_SIZE
    }

    pub fn mb_rows(&self) -> usize {
        self.height / MB_SIZE
    }

    pub fn to_float(&self) -> FloatFrame {
        FloatFrame {
            width: self.width,
            height: self.height,
            planes: self
                .planes
                .iter()
                .map(|p| p.iter().map(|&v| f64::from(v)).collect())
                .collect(),
        }
    }

    /// Sum of squared sample differences over all planes.
    pub fn sse(&self, other: &Frame) -> Result<f64> {
        self.check_same_shape(other)?;
        let sse: u64 = self
            .planes
            .iter()
            .zip(&other.planes)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(&a, &b)| {
                let d = i64::from(a) - i64::from(b);
                (d * d) as u64
            })
            .sum();
        Ok(sse as f64)
    }

    /// `10 log10(255^2 n / SSE)` over all planes; infinite for identical frames.
    pub fn psnr(&self, other: &Frame) -> Result<f64> {
        let sse = self.sse(other)?;
        let n = (self.pixels_per_plane() * self.num_planes()) as f64;
        if sse == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(10.0 * (255.0 * 255.0 * n / sse).log10())
    }

    fn check_same_shape(&self, other: &Frame) -> Result<()> {
        if self.width != other.width
            || self.height != other.height
            || self.planes.len() != other.planes.len()
        {
            return Err(Error::contract(format!(
                "frame shapes differ: {}x{}x{} vs {}x{}x{}",
                self.width,
                self.height,
                self.planes.len(),
                other.width,
                other.height,
                other.planes.len()
            )));
        }
        Ok(())
    }
}

/// Real-valued planar image. Metrics and finite-difference probes operate on
/// this so they can be evaluated off the 8-bit lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatFrame {
    pub width: usize,
    pub height: usize,
    pub planes: Vec<Vec<f64>>,
}

impl FloatFrame {
    pub fn new(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("empty frame"));
        }
        check_plane_layout(width, height, planes.iter().map(Vec::len))?;
        Ok(FloatFrame {
            width,
            height,
            planes,
        })
    }

    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn pixels_per_plane(&self) -> usize {
        self.width * self.height
    }
}

fn check_plane_layout(
    width: usize,
    height: usize,
    lens: impl ExactSizeIterator<Item = usize>,
) -> Result<()> {
    let count = lens.len();
    if count != 1 && count != 3 {
        return Err(Error::contract(format!(
            "expected 1 or 3 planes, got {count}"
        )));
    }
    for (i, len) in lens.enumerate() {
        if len != width * height {
            return Err(Error::contract(format!(
                "plane {i} has {len} samples, expected {}",
                width * height
            )));
        }
    }
    Ok(())
}

/// Per-sample partial derivatives of a metric at some frame, plus the metric
/// value there.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    base_score: f64,
    planes: Vec<Vec<f32>>,
}

impl GradientField {
    pub fn new(
        width: usize,
        height: usize,
        base_score: f64,
        planes: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("empty gradient field"));
        }
        check_plane_layout(width, height, planes.iter().map(Vec::len))?;
        if !base_score.is_finite() {
            return Err(Error::Value(format!(
                "base score {base_score} is not finite"
            )));
        }
        if let Some(v) = planes.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::Value(format!("gradient value {v} is not finite")));
        }
        Ok(GradientField {
            width,
            height,
            base_score,
            planes,
        })
    }

    pub fn zeros(width: usize, height: usize, num_planes: usize) -> Self {
        GradientField {
            width,
            height,
            base_score: 0.0,
            planes: vec![vec![0.0; width * height]; num_planes],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, index: usize) -> &[f32] {
        &self.planes[index]
    }

    pub fn planes(&self) -> &[Vec<f32>] {
        &self.planes
    }

    /// Euclidean norm over every entry of every plane.
    pub fn l2_norm(&self) -> f64 {
        self.planes
            .iter()
            .flatten()
            .map(|&g| f64::from(g) * f64::from(g))
            .sum::<f64>()
            .sqrt()
    }

    /// `sum_k g_k * (b_k - a_k)` over all planes, i.e. the linearized change of
    /// the metric when moving from `a` to `b`.
    pub fn directional_change(&self, from: &FloatFrame, to: &FloatFrame) -> Result<f64> {
        for f in [from, to] {
            if f.width != self.width
                || f.height != self.height
                || f.num_planes() != self.num_planes()
            {
                return Err(Error::contract("frame does not match gradient field"));
            }
        }
        let mut acc = 0.0;
        for (p, g) in self.planes.iter().enumerate() {
            for ((&g, &a), &b) in g.iter().zip(&from.planes[p]).zip(&to.planes[p]) {
                acc += f64::from(g) * (b - a);
            }
        }
        Ok(acc)
    }

    pub fn matches_frame(&self, width: usize, height: usize, num_planes: usize) -> bool {
        self.width == width && self.height == height && self.planes.len() == num_planes
    }
}

/// Loads a binary PGM or PPM file.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    parse_pnm(&fs::read(path)?)
}

/// Writes `frame` as PGM (one plane) or PPM (three planes).
pub fn save_frame(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    fs::write(path, encode_pnm(frame))?;
    Ok(())
}

pub fn encode_pnm(frame: &Frame) -> Vec<u8> {
    let magic = if frame.num_planes() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    if frame.num_planes() == 1 {
        out.extend_from_slice(&frame.planes[0]);
    } else {
        out.reserve(3 * frame.pixels_per_plane());
        for i in 0..frame.pixels_per_plane() {
            out.extend(frame.planes.iter().map(|p| p[i]));
        }
    }
    out
}

struct HeaderCursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, format!("{what} out of range")))
    }
}

pub fn parse_pnm(data: &[u8]) -> Result<Frame> {
    if data.len() < 2 {
        return Err(Error::format(0, "missing PNM magic"));
    }
    let num_planes = match &data[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::format(0, "expected P5 or P6 magic")),
    };
    let mut cur = HeaderCursor { data, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            cur.pos,
            format!("unsupported maxval {maxval}"),
        ));
    }
    match data.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(cur.pos, "expected whitespace after maxval")),
    }
    if width == 0
        || height == 0
        || !width.is_multiple_of(MB_SIZE)
        || !height.is_multiple_of(MB_SIZE)
    {
        return Err(Error::Alignment { width, height });
    }
    let n = width * height;
    let payload = &data[cur.pos..];
    if payload.len() < n * num_planes {
        return Err(Error::Length {
            expected: n * num_planes,
            found: payload.len(),
        });
    }
    let planes = if num_planes == 1 {
        vec![payload[..n].to_vec()]
    } else {
        (0..3)
            .map(|c| {
                payload[..3 * n]
                    .iter()
                    .skip(c)
                    .step_by(3)
                    .copied()
                    .collect()
            })
            .collect()
    };
    Frame::new(width, height, planes)
}

const GRADIENT_MAGIC: &[u8; 7] = b"LNRMG1\n";
const GRADIENT_HEADER_LEN: usize = 7 + 4 + 4 + 1 + 8;

pub fn encode_gradient(field: &GradientField) -> Vec<u8> {
    let n = field.width * field.height * field.num_planes();
    let mut out = Vec::with_capacity(GRADIENT_HEADER_LEN + 4 * n);
    out.extend_from_slice(GRADIENT_MAGIC);
    out.extend_from_slice(&(field.width as u32).to_le_bytes());
    out.extend_from_slice(&(field.height as u32).to_le_bytes());
    out.push(field.num_planes() as u8);
    out.extend_from_slice(&field.base_score.to_le_bytes());
    for v in field.planes.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_gradient(data: &[u8]) -> Result<GradientField> {
    if data.len() < GRADIENT_MAGIC.len() || &data[..GRADIENT_MAGIC.len()] != GRADIENT_MAGIC {
        return Err(Error::format(0, "bad gradient magic"));
    }
    if data.len() < GRADIENT_HEADER_LEN {
        return Err(Error::Length {
            expected: GRADIENT_HEADER_LEN,
            found: data.len(),
        });
    }
    let u32_at = |at: usize| u32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as usize;
    let width = u32_at(7);
    let height = u32_at(11);
    let num_planes = usize::from(data[15]);
    let base_score = f64::from_le_bytes(data[16..24].try_into().unwrap());
    if num_planes != 1 && num_planes != 3 {
        return Err(Error::format(15, format!("bad plane count {num_planes}")));
    }
    let n = width * height;
    let expected = GRADIENT_HEADER_LEN + 4 * n * num_planes;
    if data.len() < expected {
        return Err(Error::Length {
            expected,
            found: data.len(),
        });
    }
    if data.len() > expected {
        return Err(Error::format(
            expected,
            "trailing bytes after gradient payload",
        ));
    }
    let values: Vec<f32> = data[GRADIENT_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let planes = values.chunks_exact(n).map(<[f32]>::to_vec).collect();
    GradientField::new(width, height, base_score, planes)
}

pub fn write_gradient(path: impl AsRef<Path>, field: &GradientField) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_gradient(field))?;
    Ok(())
}

pub fn read_gradient(path: impl AsRef<Path>) -> Result<GradientField> {
    parse_gradient(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm(width: usize, height: usize, value: u8) -> Vec<u8> {
        let mut v = format!("P5\n{width} {height}\n255\n").into_bytes();
        v.extend(std::iter::repeat_n(value, width * height));
        v
    }

    #[test]
    fn constant_pgm_loads() {
        let f = parse_pnm(&pgm(16, 16, 128)).unwrap();
        assert_eq!(f.num_planes(), 1);
        assert!(f.plane(0).iter().all(|&v| v == 128));
    }

    #[test]
    fn ppm_keeps_three_full_planes() {
        let mut data = b"P6\n# comment line\n32 16\n255\n".to_vec();
        for i in 0..32 * 16 {
            data.extend_from_slice(&[i as u8, 1, 2]);
        }
        let f = parse_pnm(&data).unwrap();
        assert_eq!((f.width(), f.height(), f.num_planes()), (32, 16, 3));
        assert_eq!(f.plane(0)[5], 5);
        assert!(f.plane(1).iter().all(|&v| v == 1));
        assert!(f.plane(2).iter().all(|&v| v == 2));
    }

    #[test]
    fn unaligned_is_rejected() {
        assert!(matches!(
            parse_pnm(&pgm(17, 16, 0)),
            Err(Error::Alignment {
                width: 17,
                height: 16
            })
        ));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            parse_pnm(b"P3\n16 16\n255\n"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_pnm(b"P5\n16 16\n65535\n"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(parse_pnm(b"P5\nxx"), Err(Error::Format { .. })));
        let mut short = pgm(16, 16, 0);
        short.truncate(40);
        assert!(matches!(parse_pnm(&short), Err(Error::Length { .. })));
    }

    #[test]
    fn zero_gradient_file_layout() {
        let field = GradientField::zeros(16, 16, 1);
        let bytes = encode_gradient(&field);
        assert_eq!(bytes.len(), GRADIENT_HEADER_LEN + 4 * 256);
        assert_eq!(&bytes[..7], b"LNRMG1\n");
        assert!(bytes[GRADIENT_HEADER_LEN..].iter().all(|&b| b == 0));
        assert_eq!(parse_gradient(&bytes).unwrap(), field);
    }

    #[test]
    fn gradient_errors() {
        assert!(matches!(parse_gradient(b"XXXX"), Err(Error::Format { .. })));
        let mut bytes = encode_gradient(&GradientField::zeros(16, 16, 1));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_gradient(&bytes), Err(Error::Length { .. })));
        let mut bytes = encode_gradient(&GradientField::zeros(16, 16, 1));
        bytes[GRADIENT_HEADER_LEN..GRADIENT_HEADER_LEN + 4]
            .copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(parse_gradient(&bytes), Err(Error::Value(_))));
    }

    #[test]
    fn psnr_of_identical_frames_is_infinite() {
        let f = Frame::constant(16, 16, 3, 9).unwrap();
        assert_eq!(f.psnr(&f).unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn gradient_round_trip_is_bit_exact(
            values in proptest::collection::vec(-1e3f32..1e3, 3 * 256),
            base in -1e6f64..1e6,
            planes in prop_oneof![Just(1usize), Just(3usize)],
        ) {
            let planes: Vec<Vec<f32>> = values.chunks(256).take(planes).map(<[f32]>::to_vec).collect();
            let field = GradientField::new(16, 16, base, planes).unwrap();
            let back = parse_gradient(&encode_gradient(&field)).unwrap();
            prop_assert_eq!(back, field);
        }

        #[test]
        fn pnm_round_trip_is_bit_exact(
            samples in proptest::collection::vec(any::<u8>(), 3 * 32 * 16),
            planes in prop_oneof![Just(1usize), Just(3usize)],
        ) {
            let planes: Vec<Vec<u8>> = samples.chunks(32 * 16).take(planes).map(<[u8]>::to_vec).collect();
            let frame = Frame::new(32, 16, planes).unwrap();
            prop_assert_eq!(parse_pnm(&encode_pnm(&frame)).unwrap(), frame);
        }
    }
}
