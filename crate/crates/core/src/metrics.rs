//! No-reference metrics `b(x)`: lower scores mean better quality.
//!
//! The encoder only ever needs `b` and its gradient at the uncompressed input,
//! computed once per frame. [`TvScore`] is a smooth built-in metric with an
//! analytic gradient; [`ExternalMetric`] wraps a gradient computed elsewhere
//! (for instance by autodiff through a learned model) and loaded from an
//! `LNRMG1` file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{read_gradient, FloatFrame, GradientField};

pub trait Metric: Send + Sync {
    fn name(&self) -> String;

    fn evaluate(&self, frame: &FloatFrame) -> Result<f64>;

    /// Gradient of [`Metric::evaluate`] at `frame`, with `base_score` set to
    /// the metric value there.
    fn gradient(&self, frame: &FloatFrame) -> Result<GradientField>;
}

/// Charbonnier-smoothed total variation, averaged per plane and summed over
/// planes:
///
/// `b(x) = sum_planes (1/n_p) sum_p sqrt(dh(p)^2 + dv(p)^2 + eps^2) - eps`
///
/// with forward differences `dh`, `dv` and replicated borders (so the last
/// column has `dh = 0` and the last row `dv = 0`). Noise and banding raise it;
/// a constant frame scores exactly 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvScore {
    epsilon: f64,
    luma_only: bool,
}

impl Default for TvScore {
    fn default() -> Self {
        TvScore {
            epsilon: 1.0,
            luma_only: false,
        }
    }
}

impl TvScore {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(TvScore {
            epsilon,
            luma_only: false,
        })
    }

    /// Score only the first plane; chroma gradients come back zero-filled.
    pub fn luma_only(mut self) -> Self {
        self.luma_only = true;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn scored_planes(&self, frame: &FloatFrame) -> usize {
        if self.luma_only {
            1
        } else {
            frame.num_planes()
        }
    }

    fn plane_score(&self, plane: &[f64], width: usize, height: usize) -> f64 {
        let eps = self.epsilon;
        let mut acc = 0.0;
        for y in 0..height {
            let row = &plane[y * width..(y + 1) * width];
            let below = (y + 1 < height).then(|| &plane[(y + 1) * width..(y + 2) * width]);
            for x in 0..width {
                let v = row[x];
                let dh = if x + 1 < width { row[x + 1] - v } else { 0.0 };
                let dv = below.map_or(0.0, |b| b[x] - v);
                acc += (dh * dh + dv * dv + eps * eps).sqrt() - eps;
            }
        }
        acc / (width * height) as f64
    }

    fn plane_gradient(&self, plane: &[f64], width: usize, height: usize, out: &mut [f64]) {
        let eps = self.epsilon;
        let inv_n = 1.0 / (width * height) as f64;
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let v = plane[i];
                let dh = if x + 1 < width { plane[i + 1] - v } else { 0.0 };
                let dv = if y + 1 < height {
                    plane[i + width] - v
                } else {
                    0.0
                };
                let phi = (dh * dh + dv * dv + eps * eps).sqrt();
                let (gh, gv) = (dh / phi * inv_n, dv / phi * inv_n);
                if x + 1 < width {
                    out[i] -= gh;
                    out[i + 1] += gh;
                }
                if y + 1 < height {
                    out[i] -= gv;
                    out[i + width] += gv;
                }
            }
        }
    }
}

impl Metric for TvScore {
    fn name(&self) -> String {
        format!("tv(eps={})", self.epsilon)
    }

    fn evaluate(&self, frame: &FloatFrame) -> Result<f64> {
        Ok(frame.planes[..self.scored_planes(frame)]
            .iter()
            .map(|p| self.plane_score(p, frame.width, frame.height))
            .sum())
    }

    fn gradient(&self, frame: &FloatFrame) -> Result<GradientField> {
        let n = frame.pixels_per_plane();
        let scored = self.scored_planes(frame);
        let mut buf = vec![0.0; n];
        let planes = frame
            .planes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i >= scored {
                    return vec![0.0f32; n];
                }
                buf.fill(0.0);
                self.plane_gradient(p, frame.width, frame.height, &mut buf);
                buf.iter().map(|&g| g as f32).collect()
            })
            .collect();
        GradientField::new(frame.width, frame.height, self.evaluate(frame)?, planes)
    }
}

/// Central finite-difference gradient `(b(x + h e_k) - b(x - h e_k)) / 2h`.
///
/// Costs two full metric evaluations per sample; meant for verification and
/// for metrics without an analytic gradient.
pub fn fd_gradient(metric: &dyn Metric, frame: &FloatFrame, h: f64) -> Result<GradientField> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = frame.clone();
    let mut planes = Vec::with_capacity(frame.num_planes());
    for p in 0..frame.num_planes() {
        let mut out = Vec::with_capacity(frame.pixels_per_plane());
        for k in 0..frame.pixels_per_plane() {
            let orig = probe.planes[p][k];
            probe.planes[p][k] = orig + h;
            let plus = metric.evaluate(&probe)?;
            probe.planes[p][k] = orig - h;
            let minus = metric.evaluate(&probe)?;
            probe.planes[p][k] = orig;
            out.push(((plus - minus) / (2.0 * h)) as f32);
        }
        planes.push(out);
    }
    GradientField::new(frame.width, frame.height, metric.evaluate(frame)?, planes)
}

/// A metric known only through a precomputed gradient field.
///
/// `gradient` hands back the stored field for any frame of matching shape.
/// `evaluate` is only defined at the frame the field was computed for, which
/// has to be attached with [`ExternalMetric::bind`].
#[derive(Clone, Debug)]
pub struct ExternalMetric {
    field: GradientField,
    anchor: Option<FloatFrame>,
    label: String,
}

impl ExternalMetric {
    pub fn new(field: GradientField) -> Self {
        ExternalMetric {
            field,
            anchor: None,
            label: "external".to_string(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m = ExternalMetric::new(read_gradient(path)?);
        m.label = format!("external({})", path.display());
        Ok(m)
    }

    /// Declares `frame` as the frame the gradient was computed at.
    pub fn bind(mut self, frame: FloatFrame) -> Result<Self> {
        self.check_shape(&frame)?;
        self.anchor = Some(frame);
        Ok(self)
    }

    pub fn field(&self) -> &GradientField {
        &self.field
    }

    fn check_shape(&self, frame: &FloatFrame) -> Result<()> {
        if !self
            .field
            .matches_frame(frame.width, frame.height, frame.num_planes())
        {
            return Err(Error::contract(format!(
                "gradient field is {}x{}x{}, frame is {}x{}x{}",
                self.field.width(),
                self.field.height(),
                self.field.num_planes(),
                frame.width,
                frame.height,
                frame.num_planes()
            )));
        }
        Ok(())
    }
}

impl Metric for ExternalMetric {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn evaluate(&self, frame: &FloatFrame) -> Result<f64> {
        self.check_shape(frame)?;
        match &self.anchor {
            Some(anchor) if anchor == frame => Ok(self.field.base_score()),
            _ => Err(Error::contract(
                "external metric can only be evaluated at the frame its gradient was computed for",
            )),
        }
    }

    fn gradient(&self, frame: &FloatFrame) -> Result<GradientField> {
        self.check_shape(frame)?;
        Ok(self.field.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize, planes: usize) -> FloatFrame {
        FloatFrame::new(
            w,
            h,
            (0..planes)
                .map(|_| {
                    (0..w * h)
                        .map(|_| f64::from(rng.gen_range(0u8..=255)))
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    /// Straight transcription of the score definition, pixel by pixel.
    fn scalar_tv(plane: &[f64], w: usize, h: usize, eps: f64) -> f64 {
        let at = |x: usize, y: usize| plane[y.min(h - 1) * w + x.min(w - 1)];
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let dh = at(x + 1, y) - at(x, y);
                let dv = at(x, y + 1) - at(x, y);
                total += (dh.powi(2) + dv.powi(2) + eps.powi(2)).sqrt() - eps;
            }
        }
        total / (w * h) as f64
    }

    #[test]
    fn constant_frame_scores_zero_with_zero_gradient() {
        let f = FloatFrame::new(16, 16, vec![vec![77.0; 256]; 3]).unwrap();
        let tv = TvScore::default();
        assert_eq!(tv.evaluate(&f).unwrap(), 0.0);
        let g = tv.gradient(&f).unwrap();
        assert!(g.planes().iter().flatten().all(|&v| v == 0.0));
        let fd = fd_gradient(&tv, &f, 0.1).unwrap();
        assert!(fd.planes().iter().flatten().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn step_edge_matches_scalar_oracle() {
        let mut plane = vec![0.0; 256];
        for y in 0..16 {
            for x in 8..16 {
                plane[y * 16 + x] = 255.0;
            }
        }
        let f = FloatFrame::new(16, 16, vec![plane.clone()]).unwrap();
        let got = TvScore::default().evaluate(&f).unwrap();
        let want = scalar_tv(&plane, 16, 16, 1.0);
        assert!(got > 0.0);
        assert!((got - want).abs() < 1e-12);
        // one column of 16 jumps of 255
        let closed = 16.0 * ((255.0f64 * 255.0 + 1.0).sqrt() - 1.0) / 256.0;
        assert!((got - closed).abs() < 1e-12);
    }

    #[test]
    fn noise_raises_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tv = TvScore::default();
        for _ in 0..20 {
            let base: Vec<f64> = (0..32 * 32)
                .map(|i| f64::from((i % 32) as u8) * 4.0)
                .collect();
            let noisy: Vec<f64> = base.iter().map(|v| v + rng.gen_range(-8.0..8.0)).collect();
            let clean = tv
                .evaluate(&FloatFrame::new(32, 32, vec![base]).unwrap())
                .unwrap();
            let dirty = tv
                .evaluate(&FloatFrame::new(32, 32, vec![noisy]).unwrap())
                .unwrap();
            assert!(dirty > clean);
        }
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tv = TvScore::default();
        let f = random_frame(&mut rng, 16, 16, 3);
        let g = tv.gradient(&f).unwrap();
        let fd = fd_gradient(&tv, &f, 0.1).unwrap();
        assert_eq!(g.base_score(), tv.evaluate(&f).unwrap());
        // Entries that nearly cancel are dominated by the O(h^2) truncation
        // term, so the tolerance is scaled by the largest entry.
        let scale = g
            .planes()
            .iter()
            .flatten()
            .fold(0f32, |m, v| m.max(v.abs()));
        for (a, n) in g
            .planes()
            .iter()
            .flatten()
            .zip(fd.planes().iter().flatten())
        {
            assert!((a - n).abs() < 1e-3 * scale, "{a} vs {n}");
        }
    }

    #[test]
    fn finite_difference_error_shrinks_with_h() {
        // smooth, low-contrast content keeps the Charbonnier curvature in play
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plane: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..3.0)).collect();
        let f = FloatFrame::new(16, 16, vec![plane]).unwrap();
        let tv = TvScore::default();
        let exact = tv.gradient(&f).unwrap();
        let err = |h| {
            let fd = fd_gradient(&tv, &f, h).unwrap();
            exact
                .plane(0)
                .iter()
                .zip(fd.plane(0))
                .map(|(a, b)| f64::from((a - b).abs()))
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.4), err(0.2));
        assert!(e2 < e1 / 3.0, "{e1} -> {e2}");
    }

    #[test]
    fn gradient_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_frame(&mut rng, 16, 16, 1);
        let mut shifted = f.clone();
        shifted.planes[0].iter_mut().for_each(|v| *v += 13.0);
        let tv = TvScore::default();
        assert_eq!(
            tv.gradient(&f).unwrap().planes(),
            tv.gradient(&shifted).unwrap().planes()
        );
    }

    #[test]
    fn luma_only_zero_fills_chroma() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_frame(&mut rng, 16, 16, 3);
        let g = TvScore::default().luma_only().gradient(&f).unwrap();
        assert!(g.plane(0).iter().any(|&v| v != 0.0));
        assert!(g.plane(1).iter().chain(g.plane(2)).all(|&v| v == 0.0));
    }

    #[test]
    fn external_metric_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_frame(&mut rng, 16, 16, 1);
        let field = TvScore::default().gradient(&f).unwrap();
        let ext = ExternalMetric::new(field.clone()).bind(f.clone()).unwrap();
        assert_eq!(ext.gradient(&f).unwrap(), field);
        assert_eq!(ext.evaluate(&f).unwrap(), field.base_score());
        let mut other = f.clone();
        other.planes[0][0] += 1.0;
        assert!(ext.evaluate(&other).is_err());

        let small = ExternalMetric::new(GradientField::zeros(8, 8, 1));
        assert!(matches!(small.gradient(&f), Err(Error::Contract(_))));
    }

    #[test]
    fn bad_epsilon() {
        assert!(TvScore::new(0.0).is_err());
        assert!(TvScore::new(f64::NAN).is_err());
    }
}
