//! Matte quality metrics over an evaluation mask: SAD, MSE, gradient and
//! connectivity errors per frame, plus the temporal dtSSD and MESSDdt.
//!
//! Reporting scales: SAD, Grad and Conn are divided by 1000, dtSSD is
//! multiplied by 100 and MESSDdt by 1000. Per-frame values are averaged over
//! frames; temporal values over frame pairs.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::image::{AlphaClip, MotionField};
use crate::kernels::bilinear_sample;

pub const GRAD_SIGMA: f64 = 1.4;

fn sq(v: f64) -> f64 {
    v * v
}

fn check(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>]) -> Result<(usize, usize, usize)> {
    let (t, h, w) = (gt.len(), gt.height(), gt.width());
    if pred.len() != t || pred.height() != h || pred.width() != w {
        return Err(invalid!("prediction {}x{}x{} does not match groundtruth {}x{}x{}", pred.len(), pred.height(), pred.width(), t, h, w));
    }
    if mask.len() != t || mask.iter().any(|m| m.len() != h * w) {
        return Err(invalid!("one {}-pixel mask per frame required", h * w));
    }
    if mask.iter().all(|m| !m.iter().any(|&b| b)) {
        return Err(Error::EmptyMask);
    }
    Ok((t, h, w))
}

fn frames(c: &AlphaClip) -> impl Iterator<Item = Vec<f64>> + '_ {
    c.frames().iter().map(|f| f.data().iter().map(|&v| v as f64).collect())
}

pub fn sad(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>]) -> Result<f64> {
    let (t, _, _) = check(pred, gt, mask)?;
    let total: f64 = frames(pred)
        .zip(frames(gt))
        .zip(mask)
        .map(|((p, g), m)| p.iter().zip(&g).zip(m).filter(|(_, &b)| b).map(|((a, b), _)| (a - b).abs()).sum::<f64>() / 1000.0)
        .sum();
    Ok(total / t as f64)
}

pub fn mse(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>]) -> Result<f64> {
    check(pred, gt, mask)?;
    let per: Vec<f64> = frames(pred)
        .zip(frames(gt))
        .zip(mask)
        .filter_map(|((p, g), m)| {
            let n = m.iter().filter(|&&b| b).count();
            (n > 0).then(|| p.iter().zip(&g).zip(m).filter(|(_, &b)| b).map(|((a, b), _)| (a - b) * (a - b)).sum::<f64>() / n as f64)
        })
        .collect();
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// First-order Gaussian derivative kernel along x, `(2·half + 1)²` taps,
/// normalised to unit L2 norm.
pub fn gaussian_derivative_kernel(sigma: f64) -> (usize, Vec<f64>) {
    let eps = 1e-2;
    let half = libm::ceil(sigma * libm::sqrt(-2.0 * libm::log(libm::sqrt(2.0 * core::f64::consts::PI) * sigma * eps))) as usize;
    let size = 2 * half + 1;
    let gauss = |x: f64| libm::exp(-x * x / (2.0 * sigma * sigma)) / (sigma * libm::sqrt(2.0 * core::f64::consts::PI));
    let dgauss = |x: f64| -x * gauss(x) / (sigma * sigma);
    let mut k = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            k.push(gauss(i as f64 - half as f64) * dgauss(j as f64 - half as f64));
        }
    }
    let norm = libm::sqrt(k.iter().map(|v| v * v).sum::<f64>());
    k.iter_mut().for_each(|v| *v /= norm);
    (half, k)
}

/// Convolution (flipped kernel) with replicate borders.
fn convolve(plane: &[f64], h: usize, w: usize, half: usize, k: &[f64], transpose: bool) -> Vec<f64> {
    let size = 2 * half + 1;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for i in 0..size {
                for j in 0..size {
                    let kv = if transpose { k[j * size + i] } else { k[i * size + j] };
                    let yy = (y as isize + half as isize - i as isize).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + half as isize - j as isize).clamp(0, w as isize - 1) as usize;
                    s += kv * plane[yy * w + xx];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Gradient magnitude under Gaussian-derivative filters.
pub fn gradient_magnitude(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let (half, k) = gaussian_derivative_kernel(sigma);
    let gx = convolve(plane, h, w, half, &k, false);
    let gy = convolve(plane, h, w, half, &k, true);
    gx.iter().zip(&gy).map(|(a, b)| libm::sqrt(a * a + b * b)).collect()
}

/// Squared difference of gradient magnitudes summed over the mask.
pub fn grad_err(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>]) -> Result<f64> {
    let (t, h, w) = check(pred, gt, mask)?;
    let total: f64 = frames(pred)
        .zip(frames(gt))
        .zip(mask)
        .map(|((p, g), m)| {
            let gp = gradient_magnitude(&p, h, w, GRAD_SIGMA);
            let gg = gradient_magnitude(&g, h, w, GRAD_SIGMA);
            gp.iter().zip(&gg).zip(m).filter(|(_, &b)| b).map(|((a, b), _)| (a - b) * (a - b)).sum::<f64>() / 1000.0
        })
        .sum();
    Ok(total / t as f64)
}

/// Largest 4-connected component of `set`.
pub fn largest_component(set: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![0usize; h * w];
    let mut best = (0usize, 0usize);
    let mut next = 1;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !set[start] || label[start] != 0 {
            continue;
        }
        let mut size = 0;
        label[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if set[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
        next += 1;
    }
    label.iter().map(|&l| best.1 > 0 && l == best.0).collect()
}

fn connectivity_phi(pred: &[f64], gt: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let steps = 9;
    let mut level = vec![-1.0f64; h * w];
    for i in 1..=steps {
        let th = i as f64 * 0.1;
        let joint: Vec<bool> = pred.iter().zip(gt).map(|(&p, &g)| p >= th && g >= th).collect();
        let omega = largest_component(&joint, h, w);
        for (l, &o) in level.iter_mut().zip(&omega) {
            if *l == -1.0 && !o {
                *l = (i - 1) as f64 * 0.1;
            }
        }
    }
    level.iter_mut().filter(|l| **l == -1.0).for_each(|l| *l = 1.0);
    let phi = |a: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(&level)
            .map(|(&v, &l)| {
                let d = v - l;
                1.0 - if d >= 0.15 { d } else { 0.0 }
            })
            .collect()
    };
    (phi(pred), phi(gt))
}

/// Connectivity error with thresholds 0.1, 0.2, …, 0.9 and 4-connectivity.
pub fn conn_err(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>]) -> Result<f64> {
    let (t, h, w) = check(pred, gt, mask)?;
    let total: f64 = frames(pred)
        .zip(frames(gt))
        .zip(mask)
        .map(|((p, g), m)| {
            let (pp, gp) = connectivity_phi(&p, &g, h, w);
            pp.iter().zip(&gp).zip(m).filter(|(_, &b)| b).map(|((a, b), _)| (a - b).abs()).sum::<f64>() / 1000.0
        })
        .sum();
    Ok(total / t as f64)
}

/// Root of the masked mean squared mismatch of temporal derivatives, per
/// frame pair (mask of the earlier frame), averaged over pairs, ×100.
pub fn dtssd(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>]) -> Result<f64> {
    let (t, _, _) = check(pred, gt, mask)?;
    if t < 2 {
        return Err(invalid!("dtSSD needs at least two frames"));
    }
    let p: Vec<Vec<f64>> = frames(pred).collect();
    let g: Vec<Vec<f64>> = frames(gt).collect();
    let per: Vec<f64> = (0..t - 1)
        .filter_map(|i| {
            let m = &mask[i];
            let n = m.iter().filter(|&&b| b).count();
            (n > 0).then(|| {
                let s: f64 = (0..m.len()).filter(|&j| m[j]).map(|j| sq((p[i + 1][j] - p[i][j]) - (g[i + 1][j] - g[i][j]))).sum();
                libm::sqrt(s / n as f64)
            })
        })
        .collect();
    if per.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(100.0 * per.iter().sum::<f64>() / per.len() as f64)
}

/// Motion-compensated squared-error change between consecutive frames,
/// averaged over masked pixels whose advected position stays inside the frame, ×1000.
pub fn messddt(pred: &AlphaClip, gt: &AlphaClip, motion: Option<&MotionField>, mask: &[Vec<bool>]) -> Result<f64> {
    let motion = motion.ok_or(Error::MissingMotion)?;
    let (t, h, w) = check(pred, gt, mask)?;
    if t < 2 {
        return Err(invalid!("MESSDdt needs at least two frames"));
    }
    if motion.pairs.len() != t - 1 || motion.pairs.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(invalid!("motion field must hold {} {}x{} maps", t - 1, h, w));
    }
    let p: Vec<Vec<f64>> = frames(pred).collect();
    let g: Vec<Vec<f64>> = frames(gt).collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..t - 1 {
        let flow = &motion.pairs[i];
        for y in 0..h {
            for x in 0..w {
                let j = y * w + x;
                if !mask[i][j] {
                    continue;
                }
                let (dx, dy) = flow.get(y, x);
                let (qy, qx) = (y as f64 + dy as f64, x as f64 + dx as f64);
                if !(qy >= 0.0 && qx >= 0.0 && qy <= (h - 1) as f64 && qx <= (w - 1) as f64) {
                    continue;
                }
                let e0 = sq(p[i][j] - g[i][j]);
                let a1 = bilinear_sample(&p[i + 1], h, w, qy, qx);
                let b1 = bilinear_sample(&g[i + 1], h, w, qy, qx);
                sum += (e0 - sq(a1 - b1)).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(1000.0 * sum / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    /// Absent for single-frame clips.
    pub dtssd: Option<f64>,
    /// Absent when no motion field was supplied.
    pub messddt: Option<f64>,
    pub frames: usize,
    pub masked_pixels: usize,
}

/// All metrics for one clip.
pub fn evaluate(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>], motion: Option<&MotionField>) -> Result<MetricReport> {
    let (t, _, _) = check(pred, gt, mask)?;
    Ok(MetricReport {
        sad: sad(pred, gt, mask)?,
        mse: mse(pred, gt, mask)?,
        grad: grad_err(pred, gt, mask)?,
        conn: conn_err(pred, gt, mask)?,
        dtssd: if t >= 2 { Some(dtssd(pred, gt, mask)?) } else { None },
        messddt: match motion {
            Some(m) if t >= 2 => Some(messddt(pred, gt, Some(m), mask)?),
            _ => None,
        },
        frames: t,
        masked_pixels: mask.iter().map(|m| m.iter().filter(|&&b| b).count()).sum(),
    })
}

/// Per-frame SAD values (same scale as [`sad`]).
pub fn sad_per_frame(pred: &AlphaClip, gt: &AlphaClip, mask: &[Vec<bool>]) -> Result<Vec<f64>> {
    check(pred, gt, mask)?;
    Ok(frames(pred)
        .zip(frames(gt))
        .zip(mask)
        .map(|((p, g), m)| p.iter().zip(&g).zip(m).filter(|(_, &b)| b).map(|((a, b), _)| (a - b).abs()).sum::<f64>() / 1000.0)
        .collect())
}

/// Field-wise mean of several reports; optional metrics average over the reports that carry them.
pub fn aggregate(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let opt_mean = |f: fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some(MetricReport {
        sad: reports.iter().map(|r| r.sad).sum::<f64>() / n,
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        grad: reports.iter().map(|r| r.grad).sum::<f64>() / n,
        conn: reports.iter().map(|r| r.conn).sum::<f64>() / n,
        dtssd: opt_mean(|r| r.dtssd),
        messddt: opt_mean(|r| r.messddt),
        frames: reports.iter().map(|r| r.frames).sum(),
        masked_pixels: reports.iter().map(|r| r.masked_pixels).sum(),
    })
}
