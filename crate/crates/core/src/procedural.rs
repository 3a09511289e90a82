//! Procedural foregrounds and backgrounds for self-contained datasets.
//!
//! Foregrounds are soft-edged blobs: smoothed noise shaped by a radial
//! envelope and thresholded with a linear ramp, so the matte has a genuine
//! transition band. Backgrounds are smooth colour textures panned over time.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::image::{AlphaMap, Clip, RgbImage};
use crate::rng::normal;

/// Separable Gaussian blur of one plane, replicate borders.
pub fn gaussian_blur(plane: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let r = libm::ceil(3.0 * sigma).max(1.0) as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0f64;
                for (k, &kv) in kernel.iter().enumerate() {
                    let d = k as isize - r;
                    let (yy, xx) = if horizontal {
                        (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                    };
                    s += kv * src[yy * w + xx] as f64;
                }
                out[y * w + x] = (s / norm) as f32;
            }
        }
        out
    };
    pass(&pass(plane, true), false)
}

fn smooth_noise<R: Rng + ?Sized>(h: usize, w: usize, sigma: f64, rng: &mut R) -> Vec<f32> {
    let raw: Vec<f32> = (0..h * w).map(|_| normal(rng) as f32).collect();
    let mut s = gaussian_blur(&raw, h, w, sigma);
    let (lo, hi) = s.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6);
    s.iter_mut().for_each(|v| *v = (*v - lo) / span);
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobConfig {
    /// Blob radius as a fraction of the shorter side.
    pub radius: f64,
    /// Width of the soft alpha ramp in pixels.
    pub softness: f64,
    /// Amplitude of boundary wiggle relative to the radius.
    pub roughness: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self { radius: 0.28, softness: 3.0, roughness: 0.35 }
    }
}

/// A coloured soft blob centred in an `h×w` canvas.
pub fn blob_foreground<R: Rng + ?Sized>(h: usize, w: usize, cfg: &BlobConfig, rng: &mut R) -> (RgbImage, AlphaMap) {
    let short = h.min(w) as f64;
    let radius = cfg.radius * short * rng.gen_range(0.85..1.15);
    let noise = smooth_noise(h, w, short / 10.0, rng);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let aspect = rng.gen_range(0.75..1.33);
    let mut alpha = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let dy = (y as f64 - cy) * aspect;
            let dx = (x as f64 - cx) / aspect;
            let d = libm::sqrt(dy * dy + dx * dx);
            let wiggle = (noise[y * w + x] as f64 - 0.5) * 2.0 * cfg.roughness * radius;
            let signed = radius + wiggle - d;
            alpha.push((signed / cfg.softness + 0.5).clamp(0.0, 1.0) as f32);
        }
    }
    let base: [f64; 3] = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
    let mut rgb = Vec::with_capacity(3 * h * w);
    for b in base {
        let tex = smooth_noise(h, w, short / 16.0, rng);
        rgb.extend(tex.iter().map(|&t| (b + (t as f64 - 0.5) * 0.4).clamp(0.0, 1.0) as f32));
    }
    (RgbImage::new(h, w, rgb).expect("blob rgb"), AlphaMap::new(h, w, alpha).expect("blob alpha"))
}

/// A textured background panned at a constant random velocity.
pub fn background_clip<R: Rng + ?Sized>(h: usize, w: usize, frames: usize, rng: &mut R) -> Result<Clip> {
    let speed = 1.0;
    let margin = libm::ceil(frames as f64 * speed) as usize + 2;
    let (ch, cw) = (h + 2 * margin, w + 2 * margin);
    let short = h.min(w) as f64;
    let mut canvas = Vec::with_capacity(3);
    let freq: f64 = rng.gen_range(0.05..0.2);
    let phase: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
    for _ in 0..3 {
        let base: f64 = rng.gen_range(0.15..0.85);
        let coarse = smooth_noise(ch, cw, short / 6.0, rng);
        let fine = smooth_noise(ch, cw, 1.5, rng);
        let stripes: f64 = rng.gen_range(0.0..0.15);
        let plane: Vec<f32> = (0..ch * cw)
            .map(|i| {
                let (y, x) = ((i / cw) as f64, (i % cw) as f64);
                let s = libm::sin((x + 0.5 * y) * freq + phase) * stripes;
                (base + (coarse[i] as f64 - 0.5) * 0.5 + (fine[i] as f64 - 0.5) * 0.2 + s).clamp(0.0, 1.0) as f32
            })
            .collect();
        canvas.push(plane);
    }
    let angle: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
    let (vy, vx) = (libm::sin(angle) * speed, libm::cos(angle) * speed);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let oy = margin as f64 + vy * t as f64;
        let ox = margin as f64 + vx * t as f64;
        let mut data = Vec::with_capacity(3 * h * w);
        for plane in &canvas {
            for y in 0..h {
                for x in 0..w {
                    let v = crate::kernels::bilinear_sample(plane, ch, cw, (oy + y as f64) as f32, (ox + x as f64) as f32);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        out.push(RgbImage::new(h, w, data)?);
    }
    Clip::new(out, None)
}
