//! Deterministic procedural test images.
//!
//! `natural` frames mix smooth illumination, hard-edged objects and textured
//! patches so that blocks of every kind show up. `ugc` frames add the usual
//! consumer-capture damage on top: posterization banding in smooth areas and
//! additive sensor noise. Everything is seeded, so a corpus is reproducible
//! byte for byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::imageio::Frame;

/// Degradations applied by [`ugc`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UgcParams {
    /// Standard deviation of additive Gaussian noise, in sample units.
    pub noise_sigma: f64,
    /// Posterization step; 0 disables banding.
    pub banding_step: f64,
}

impl Default for UgcParams {
    fn default() -> Self {
        UgcParams {
            noise_sigma: 3.0,
            banding_step: 8.0,
        }
    }
}

struct Shape {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    level: f64,
    disc: bool,
}

struct Scene {
    base: f64,
    waves: Vec<(f64, f64, f64, f64)>, // amplitude, fx, fy, phase
    shapes: Vec<Shape>,
    texture: (f64, f64, f64, f64, f64), // x0, x1, amplitude, fx, fy
    tints: [(f64, f64, f64); 3],        // per plane: gain, offset, tilt
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..3)
            .map(|i| {
                let amp = rng.gen_range(15.0..45.0) / f64::from(i + 1);
                (
                    amp,
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let shapes = (0..rng.gen_range(2..5))
            .map(|_| Shape {
                cx: rng.gen_range(0.0..1.0),
                cy: rng.gen_range(0.0..1.0),
                rx: rng.gen_range(0.08..0.35),
                ry: rng.gen_range(0.08..0.35),
                level: rng.gen_range(-60.0..60.0),
                disc: rng.gen_bool(0.5),
            })
            .collect();
        let x0 = rng.gen_range(0.0..0.6);
        let texture = (
            x0,
            x0 + rng.gen_range(0.2..0.4),
            rng.gen_range(6.0..20.0),
            rng.gen_range(4.0..9.0),
            rng.gen_range(4.0..9.0),
        );
        let tints = [
            (1.0, 0.0, 0.0),
            (
                rng.gen_range(0.7..1.1),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-15.0..15.0),
            ),
            (
                rng.gen_range(0.7..1.1),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-15.0..15.0),
            ),
        ];
        Scene {
            base: rng.gen_range(90.0..160.0),
            waves,
            shapes,
            texture,
            tints,
        }
    }

    fn luma(&self, u: f64, v: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let mut val = self.base;
        for &(amp, fx, fy, ph) in &self.waves {
            val += amp * (tau * (fx * u + fy * v) + ph).sin();
        }
        for s in &self.shapes {
            let (dx, dy) = ((u - s.cx) / s.rx, (v - s.cy) / s.ry);
            let inside = if s.disc {
                dx * dx + dy * dy < 1.0
            } else {
                dx.abs() < 1.0 && dy.abs() < 1.0
            };
            if inside {
                val += s.level;
            }
        }
        let (x0, x1, amp, fx, fy) = self.texture;
        if u >= x0 && u < x1 {
            val += amp * (tau * fx * u * 4.0).sin() * (tau * fy * v * 4.0).cos();
        }
        val
    }
}

fn render(scene: &Scene, width: usize, height: usize, planes: usize) -> Vec<Vec<f64>> {
    let luma: Vec<f64> = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            scene.luma(x as f64 / width as f64, y as f64 / height as f64)
        })
        .collect();
    (0..planes)
        .map(|p| {
            let (gain, offset, tilt) = scene.tints[p];
            luma.iter()
                .enumerate()
                .map(|(i, &l)| {
                    let u = (i % width) as f64 / width as f64;
                    128.0 + gain * (l - 128.0) + offset + tilt * (u - 0.5)
                })
                .collect()
        })
        .collect()
}

fn to_frame(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Frame> {
    Frame::new(
        width,
        height,
        planes
            .into_iter()
            .map(|p| {
                p.into_iter()
                    .map(|v| v.round().clamp(0.0, 255.0) as u8)
                    .collect()
            })
            .collect(),
    )
}

/// Clean procedural image.
pub fn natural(seed: u64, width: usize, height: usize, planes: usize) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(&mut rng);
    to_frame(width, height, render(&scene, width, height, planes))
}

/// Procedural image with banding and noise.
pub fn ugc(
    seed: u64,
    width: usize,
    height: usize,
    planes: usize,
    params: UgcParams,
) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(&mut rng);
    let mut data = render(&scene, width, height, planes);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0))
        .expect("non-negative sigma is a valid normal distribution");
    for plane in &mut data {
        for v in plane.iter_mut() {
            if params.banding_step > 0.0 {
                *v = (*v / params.banding_step).round() * params.banding_step;
            }
            if params.noise_sigma > 0.0 {
                *v += noise.sample(&mut rng);
            }
        }
    }
    to_frame(width, height, data)
}

/// A frame of independent uniform samples; the hardest case for the codec.
pub fn uniform_noise(seed: u64, width: usize, height: usize, planes: usize) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::new(
        width,
        height,
        (0..planes)
            .map(|_| (0..width * height).map(|_| rng.gen()).collect())
            .collect(),
    )
}

/// `count` named frames, seeds `seed, seed + 1, ...`.
pub fn ugc_corpus(
    count: usize,
    seed: u64,
    width: usize,
    height: usize,
    planes: usize,
    params: UgcParams,
) -> Result<Vec<(String, Frame)>> {
    (0..count)
        .map(|i| {
            let s = seed + i as u64;
            Ok((
                format!("ugc_{s:04}"),
                ugc(s, width, height, planes, params)?,
            ))
        })
        .collect()
}

pub fn natural_corpus(
    count: usize,
    seed: u64,
    width: usize,
    height: usize,
    planes: usize,
) -> Result<Vec<(String, Frame)>> {
    (0..count)
        .map(|i| {
            let s = seed + i as u64;
            Ok((format!("nat_{s:04}"), natural(s, width, height, planes)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(
            natural(3, 32, 32, 3).unwrap(),
            natural(3, 32, 32, 3).unwrap()
        );
        let p = UgcParams::default();
        assert_eq!(ugc(3, 32, 32, 1, p).unwrap(), ugc(3, 32, 32, 1, p).unwrap());
        assert_ne!(
            natural(3, 32, 32, 1).unwrap(),
            natural(4, 32, 32, 1).unwrap()
        );
    }

    #[test]
    fn ugc_is_rougher_than_clean() {
        use crate::metrics::{Metric, TvScore};
        let tv = TvScore::default();
        for seed in 0..5 {
            let clean = natural(seed, 64, 64, 1).unwrap();
            let dirty = ugc(seed, 64, 64, 1, UgcParams::default()).unwrap();
            let a = tv.evaluate(&clean.to_float()).unwrap();
            let b = tv.evaluate(&dirty.to_float()).unwrap();
            assert!(b > a, "seed {seed}: {a} vs {b}");
        }
    }
}
