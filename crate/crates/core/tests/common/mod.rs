//! Independent scalar oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use vidmatte_core::image::{AlphaClip, AlphaMap, FlowMap, MotionField};
use vidmatte_core::losses::LossBatch;
use vidmatte_core::rng::{derive_rng, SeededRng};
use vidmatte_core::tensor::Tensor;

pub fn rng(seed: u64) -> SeededRng {
    derive_rng(seed, 0xBEEF)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Relative error with a floor on the denominator so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn central_diff(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

// ---------------------------------------------------------------- losses

/// Random synthetic loss batch obeying the compositing equation exactly, with
/// a mix of binary and fractional groundtruth and a random transition mask.
pub fn synthetic_batch(frames: usize, h: usize, w: usize, rng: &mut SeededRng) -> LossBatch<f64> {
    let n = frames * h * w;
    let gt: Vec<f64> = (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.05..0.95),
        })
        .collect();
    let fg: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let bg: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let p = h * w;
    let composite = (0..3 * n)
        .map(|k| {
            let (t, i) = (k / (3 * p), k % p);
            let a = gt[t * p + i];
            a * fg[k] + (1.0 - a) * bg[k]
        })
        .collect();
    let mask = gt.iter().map(|&a| (a > 0.0 && a < 1.0) || rng.gen_bool(0.3)).collect();
    LossBatch { frames, height: h, width: w, pred: gt.clone(), gt, fg, bg, composite, mask }
}

pub fn oracle_alpha(b: &LossBatch<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..b.pred.len() {
        let d = b.pred[i] - b.gt[i];
        s += if b.gt[i] == 0.0 || b.gt[i] == 1.0 { d * d } else { d.abs() };
    }
    s / b.pred.len() as f64
}

pub fn oracle_composition(b: &LossBatch<f64>) -> f64 {
    let p = b.height * b.width;
    let mut s = 0.0;
    for t in 0..b.frames {
        for i in 0..p {
            if !b.mask[t * p + i] {
                continue;
            }
            let a = b.pred[t * p + i];
            let mut acc = 0.0;
            for c in 0..3 {
                let k = (t * 3 + c) * p + i;
                acc += (a * b.fg[k] + (1.0 - a) * b.bg[k] - b.composite[k]).abs();
            }
            s += acc / 3.0;
        }
    }
    s / (b.frames * p) as f64
}

fn sobel_oracle(plane: &[f64], h: usize, w: usize, y: usize, x: usize) -> (f64, f64) {
    let at = |dy: i64, dx: i64| {
        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
        plane[yy * w + xx]
    };
    let gx = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
    let gy = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
    (gx, gy)
}

/// Sobel differences `(ΔGx, ΔGy)` of pred against gt at every pixel.
pub fn sobel_diffs(b: &LossBatch<f64>) -> Vec<(f64, f64)> {
    let p = b.height * b.width;
    let mut out = Vec::with_capacity(b.pred.len());
    for t in 0..b.frames {
        let (pp, gg) = (&b.pred[t * p..(t + 1) * p], &b.gt[t * p..(t + 1) * p]);
        for y in 0..b.height {
            for x in 0..b.width {
                let (a, c) = sobel_oracle(pp, b.height, b.width, y, x);
                let (d, e) = sobel_oracle(gg, b.height, b.width, y, x);
                out.push((a - d, c - e));
            }
        }
    }
    out
}

pub fn oracle_gradient(b: &LossBatch<f64>) -> f64 {
    let diffs = sobel_diffs(b);
    let mut s = 0.0;
    for i in 0..b.pred.len() {
        let d = b.pred[i] - b.gt[i];
        let la = if b.gt[i] == 0.0 || b.gt[i] == 1.0 { d * d } else { d.abs() };
        s += (diffs[i].0.abs() + diffs[i].1.abs()) * la;
    }
    s / b.pred.len() as f64
}

pub fn oracle_kl(b: &LossBatch<f64>) -> f64 {
    let eps = 1e-8;
    let p = b.height * b.width;
    let mut total = 0.0;
    for t in 0..b.frames {
        let pr = &b.pred[t * p..(t + 1) * p];
        let gt = &b.gt[t * p..(t + 1) * p];
        let sg: f64 = gt.iter().sum();
        if sg <= 0.0 {
            continue;
        }
        let sp: f64 = pr.iter().sum::<f64>() + eps;
        let sg = sg + eps;
        for i in 0..p {
            let (a, q) = (pr[i] / sp, gt[i] / sg);
            total += a * ((a + eps).ln() - (q + eps).ln());
        }
    }
    total / b.frames as f64
}

pub fn oracle_temporal(b: &LossBatch<f64>) -> f64 {
    if b.frames < 2 {
        return 0.0;
    }
    let p = b.height * b.width;
    let mut s = 0.0;
    for t in 0..b.frames - 1 {
        for i in 0..p {
            let d = (b.pred[(t + 1) * p + i] - b.pred[t * p + i]) - (b.gt[(t + 1) * p + i] - b.gt[t * p + i]);
            s += d * d;
        }
    }
    s / ((b.frames - 1) * p) as f64
}

/// Smallest distance to a kink of any `|·|` that pixel `j` feeds, divided by
/// the largest coefficient with which `j` enters that argument.
pub fn kink_distance(b: &LossBatch<f64>, j: usize) -> f64 {
    let p = b.height * b.width;
    let (t, i) = (j / p, j % p);
    let mut dist = f64::INFINITY;
    let d = b.pred[j] - b.gt[j];
    if !(b.gt[j] == 0.0 || b.gt[j] == 1.0) {
        dist = dist.min(d.abs());
    }
    if b.mask[j] {
        for c in 0..3 {
            let k = (t * 3 + c) * p + i;
            let slope = (b.fg[k] - b.bg[k]).abs().max(1e-12);
            let r = b.pred[j] * b.fg[k] + (1.0 - b.pred[j]) * b.bg[k] - b.composite[k];
            dist = dist.min(r.abs() / slope);
        }
    }
    // Sobel responses of every pixel whose stencil reaches `j`.
    let diffs = sobel_diffs(b);
    let (y, x) = (i / b.width, i % b.width);
    for yy in y.saturating_sub(1)..=(y + 1).min(b.height - 1) {
        for xx in x.saturating_sub(1)..=(x + 1).min(b.width - 1) {
            let (dx, dy) = diffs[t * p + yy * b.width + xx];
            dist = dist.min(dx.abs() / 8.0).min(dy.abs() / 8.0);
        }
    }
    dist
}

// ---------------------------------------------------------------- deformable convolution

fn bilinear_zero(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let mut v = 0.0;
    for (yy, wy) in [(y0, 1.0 - ly), (y0 + 1.0, ly)] {
        for (xx, wx) in [(x0, 1.0 - lx), (x0 + 1.0, lx)] {
            if yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                v += wy * wx * plane[yy as usize * w + xx as usize];
            }
        }
    }
    v
}

/// Direct per-output-pixel deformable convolution.
pub fn deform_oracle(x: &Tensor<f64>, off: &Tensor<f64>, wt: &Tensor<f64>, bias: Option<&Tensor<f64>>) -> Tensor<f64> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (co, k) = (wt.shape()[0], wt.shape()[2]);
    let pad = (k / 2) as f64;
    let mut out = Tensor::zeros(&[n, co, h, w]);
    for b in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias.map(|bb| bb.data()[o]).unwrap_or(0.0);
                    for ky in 0..k {
                        for kx in 0..k {
                            let j = ky * k + kx;
                            let dy = off.data()[((b * 2 * k * k + 2 * j) * h + y) * w + xx];
                            let dx = off.data()[((b * 2 * k * k + 2 * j + 1) * h + y) * w + xx];
                            let sy = y as f64 + ky as f64 - pad + dy;
                            let sx = xx as f64 + kx as f64 - pad + dx;
                            for ci in 0..c {
                                let plane = &x.data()[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                                acc += wt.data()[((o * c + ci) * k + ky) * k + kx] * bilinear_zero(plane, h, w, sy, sx);
                            }
                        }
                    }
                    out.data_mut()[((b * co + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

/// Distance of tap sample positions from the integer grid lines where
/// bilinear interpolation has kinks, per offset element.
pub fn offset_kink_distance(off: &Tensor<f64>, k: usize, idx: usize) -> f64 {
    let s = off.shape();
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let ch = (idx / plane) % s[1];
    let pix = idx % plane;
    let (y, x) = (pix / w, pix % w);
    let j = ch / 2;
    let (ky, kx) = (j / k, j % k);
    let pad = (k / 2) as f64;
    let v = off.data()[idx];
    let pos = if ch % 2 == 0 { y as f64 + ky as f64 - pad + v } else { x as f64 + kx as f64 - pad + v };
    (pos - pos.round()).abs()
}

/// Direct standard convolution with zero padding `k/2`.
pub fn conv_oracle(x: &Tensor<f64>, wt: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (co, k) = (wt.shape()[0], wt.shape()[2]);
    let pad = (k / 2) as i64;
    let mut out = Tensor::zeros(&[n, co, h, w]);
    for b in 0..n {
        for o in 0..co {
            for y in 0..h as i64 {
                for xx in 0..w as i64 {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k as i64 {
                            for kx in 0..k as i64 {
                                let (iy, ix) = (y + ky - pad, xx + kx - pad);
                                if iy >= 0 && ix >= 0 && iy < h as i64 && ix < w as i64 {
                                    acc += wt.data()[((o * c + ci) * k + ky as usize) * k + kx as usize]
                                        * x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out.data_mut()[((b * co + o) * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- metrics

pub fn alpha_clip(frames: &[Vec<f64>], h: usize, w: usize) -> AlphaClip {
    AlphaClip::new(frames.iter().map(|f| AlphaMap::new(h, w, f.iter().map(|&v| v as f32).collect()).unwrap()).collect()).unwrap()
}

/// Values as the metrics see them (after the `f32` storage round-trip).
pub fn stored(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    frames.iter().map(|f| f.iter().map(|&v| v as f32 as f64).collect()).collect()
}

#[derive(Clone)]
pub struct MetricCase {
    pub h: usize,
    pub w: usize,
    pub pred: Vec<Vec<f64>>,
    pub gt: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub flows: Vec<Vec<(f64, f64)>>,
}

impl MetricCase {
    pub fn random(rng: &mut SeededRng, h: usize, w: usize, t: usize) -> Self {
        let plane = |rng: &mut SeededRng| -> Vec<f64> {
            (0..h * w)
                .map(|_| match rng.gen_range(0..5) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.gen_range(0.0..1.0),
                })
                .collect()
        };
        let pred = stored(&(0..t).map(|_| plane(rng)).collect::<Vec<_>>());
        let gt = stored(&(0..t).map(|_| plane(rng)).collect::<Vec<_>>());
        let mut mask: Vec<Vec<bool>> = (0..t).map(|_| (0..h * w).map(|_| rng.gen_bool(0.6)).collect()).collect();
        for m in &mut mask {
            m[0] = true;
        }
        let flows = (0..t.saturating_sub(1))
            .map(|_| (0..h * w).map(|_| ((rng.gen_range(-1.5..1.5) as f32) as f64, (rng.gen_range(-1.5..1.5) as f32) as f64)).collect())
            .collect();
        Self { h, w, pred, gt, mask, flows }
    }

    pub fn clips(&self) -> (AlphaClip, AlphaClip) {
        (alpha_clip(&self.pred, self.h, self.w), alpha_clip(&self.gt, self.h, self.w))
    }

    pub fn motion(&self) -> MotionField {
        MotionField {
            pairs: self
                .flows
                .iter()
                .map(|f| FlowMap::new(self.h, self.w, f.iter().flat_map(|&(dx, dy)| [dx as f32, dy as f32]).collect()).unwrap())
                .collect(),
        }
    }
}

pub fn oracle_sad(c: &MetricCase) -> f64 {
    let mut total = 0.0;
    for t in 0..c.pred.len() {
        let mut s = 0.0;
        for i in 0..c.h * c.w {
            if c.mask[t][i] {
                s += (c.pred[t][i] - c.gt[t][i]).abs();
            }
        }
        total += s / 1000.0;
    }
    total / c.pred.len() as f64
}

pub fn oracle_mse(c: &MetricCase) -> f64 {
    let (mut total, mut frames) = (0.0, 0);
    for t in 0..c.pred.len() {
        let (mut s, mut n) = (0.0, 0);
        for i in 0..c.h * c.w {
            if c.mask[t][i] {
                s += (c.pred[t][i] - c.gt[t][i]).powi(2);
                n += 1;
            }
        }
        if n > 0 {
            total += s / n as f64;
            frames += 1;
        }
    }
    total / frames as f64
}

/// Gradient magnitude by direct 2-D correlation with the flipped
/// first-order Gaussian derivative, replicate borders.
fn gauss_grad_mag(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let half = (sigma * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * 1e-2).ln()).sqrt()).ceil() as i64;
    let g = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    let dg = |x: f64| -x * g(x) / (sigma * sigma);
    let mut kx = vec![vec![0.0; (2 * half + 1) as usize]; (2 * half + 1) as usize];
    let mut norm = 0.0;
    for i in -half..=half {
        for j in -half..=half {
            let v = g(i as f64) * dg(j as f64);
            kx[(i + half) as usize][(j + half) as usize] = v;
            norm += v * v;
        }
    }
    let norm = norm.sqrt();
    let at = |y: i64, x: i64| plane[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize];
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in -half..=half {
                for j in -half..=half {
                    let k = kx[(i + half) as usize][(j + half) as usize] / norm;
                    gx += k * at(y - i, x - j);
                    gy += k * at(y - j, x - i);
                }
            }
            out[(y * w as i64 + x) as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn oracle_grad(c: &MetricCase) -> f64 {
    let mut total = 0.0;
    for t in 0..c.pred.len() {
        let gp = gauss_grad_mag(&c.pred[t], c.h, c.w, 1.4);
        let gg = gauss_grad_mag(&c.gt[t], c.h, c.w, 1.4);
        let mut s = 0.0;
        for i in 0..c.h * c.w {
            if c.mask[t][i] {
                s += (gp[i] - gg[i]).powi(2);
            }
        }
        total += s / 1000.0;
    }
    total / c.pred.len() as f64
}

/// Largest 4-connected component by recursive-style depth-first flood fill.
pub fn flood_largest(set: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut comp = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    for s in 0..h * w {
        if !set[s] || comp[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![s];
        comp[s] = id;
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            for (ny, nx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = (ny * w as i64 + nx) as usize;
                if set[j] && comp[j] == usize::MAX {
                    comp[j] = id;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    // First component with the maximal size, in raster order of discovery.
    let best = (0..sizes.len()).fold(None, |b: Option<usize>, i| match b {
        Some(k) if sizes[k] >= sizes[i] => Some(k),
        _ => Some(i),
    });
    comp.iter().map(|&c| Some(c) == best).collect()
}

pub fn oracle_conn(c: &MetricCase) -> f64 {
    let mut total = 0.0;
    let n = c.h * c.w;
    for t in 0..c.pred.len() {
        let mut level = vec![None; n];
        for step in 1..=9 {
            let th = step as f64 / 10.0;
            let joint: Vec<bool> = (0..n).map(|i| c.pred[t][i] >= th && c.gt[t][i] >= th).collect();
            let omega = flood_largest(&joint, c.h, c.w);
            for i in 0..n {
                if level[i].is_none() && !omega[i] {
                    level[i] = Some((step - 1) as f64 / 10.0);
                }
            }
        }
        let mut s = 0.0;
        for i in 0..n {
            let l = level[i].unwrap_or(1.0);
            let phi = |a: f64| if a - l >= 0.15 { 1.0 - (a - l) } else { 1.0 };
            if c.mask[t][i] {
                s += (phi(c.pred[t][i]) - phi(c.gt[t][i])).abs();
            }
        }
        total += s / 1000.0;
    }
    total / c.pred.len() as f64
}

pub fn oracle_dtssd(c: &MetricCase) -> f64 {
    let mut acc = 0.0;
    let mut pairs = 0;
    for t in 0..c.pred.len() - 1 {
        let (mut s, mut n) = (0.0, 0);
        for i in 0..c.h * c.w {
            if c.mask[t][i] {
                let d = (c.pred[t + 1][i] - c.pred[t][i]) - (c.gt[t + 1][i] - c.gt[t][i]);
                s += d * d;
                n += 1;
            }
        }
        if n > 0 {
            acc += (s / n as f64).sqrt();
            pairs += 1;
        }
    }
    100.0 * acc / pairs as f64
}

pub fn oracle_messddt(c: &MetricCase) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for t in 0..c.pred.len() - 1 {
        for y in 0..c.h {
            for x in 0..c.w {
                let i = y * c.w + x;
                if !c.mask[t][i] {
                    continue;
                }
                let (dx, dy) = c.flows[t][i];
                let (qy, qx) = (y as f64 + dy, x as f64 + dx);
                if qy < 0.0 || qx < 0.0 || qy > (c.h - 1) as f64 || qx > (c.w - 1) as f64 {
                    continue;
                }
                let e0 = (c.pred[t][i] - c.gt[t][i]).powi(2);
                let a = bilinear_zero(&c.pred[t + 1], c.h, c.w, qy, qx);
                let b = bilinear_zero(&c.gt[t + 1], c.h, c.w, qy, qx);
                s += (e0 - (a - b).powi(2)).abs();
                n += 1;
            }
        }
    }
    1000.0 * s / n as f64
}

// ---------------------------------------------------------------- morphology

/// Grows or shrinks a set one Chebyshev ring at a time, pixel by pixel.
pub fn brute_morph(mask: &[bool], h: usize, w: usize, radius: usize, iterations: usize, dilate: bool) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for _ in 0..iterations {
        let mut next = cur.clone();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut any = false;
                let mut all = true;
                for dy in -(radius as i64)..=radius as i64 {
                    for dx in -(radius as i64)..=radius as i64 {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                            continue;
                        }
                        let v = cur[(yy * w as i64 + xx) as usize];
                        any |= v;
                        all &= v;
                    }
                }
                next[(y * w as i64 + x) as usize] = if dilate { any } else { all };
            }
        }
        cur = next;
    }
    cur
}
