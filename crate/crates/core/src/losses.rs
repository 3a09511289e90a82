//! Training losses on predicted alpha sequences: alpha, composition,
//! gradient-weighted, KL-divergence and temporal coherence terms.
//!
//! Every function works on flat `[T, H, W]` buffers (colour as `[T, 3, H, W]`)
//! and is generic over the float type so gradients can be checked in `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::kernels::sobel::{sobel, sobel_adjoint};
use crate::scalar::Real;

/// Guard inside the logarithm and the normalising sums of the KL term.
pub const KL_EPS: f64 = 1e-8;

/// Predicted alpha plus the groundtruth it is scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBatch<T> {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub pred: Vec<T>,
    pub gt: Vec<T>,
    pub fg: Vec<T>,
    pub bg: Vec<T>,
    pub composite: Vec<T>,
    /// Transition pixels (trimap unknown region).
    pub mask: Vec<bool>,
}

impl<T: Real> LossBatch<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.frames * self.height * self.width;
        if n == 0 {
            return Err(invalid!("empty loss batch"));
        }
        if self.pred.len() != n || self.gt.len() != n || self.mask.len() != n {
            return Err(invalid!("alpha/mask buffers must hold {} values", n));
        }
        if self.fg.len() != 3 * n || self.bg.len() != 3 * n || self.composite.len() != 3 * n {
            return Err(invalid!("colour buffers must hold {} values", 3 * n));
        }
        Ok(())
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_pred(&self, pred: Vec<T>) -> Self {
        Self { pred, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Alpha,
    Composition,
    Gradient,
    Kl,
    Temporal,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [LossTerm::Alpha, LossTerm::Composition, LossTerm::Gradient, LossTerm::Kl, LossTerm::Temporal];
}

/// Per-term multipliers of the total; all ones by default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub composition: f64,
    pub gradient: f64,
    pub kl: f64,
    pub temporal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, composition: 1.0, gradient: 1.0, kl: 1.0, temporal: 1.0 }
    }
}

impl LossWeights {
    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Alpha => self.alpha,
            LossTerm::Composition => self.composition,
            LossTerm::Gradient => self.gradient,
            LossTerm::Kl => self.kl,
            LossTerm::Temporal => self.temporal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub alpha: T,
    pub composition: T,
    pub gradient: T,
    pub kl: T,
    pub temporal: T,
    pub total: T,
    /// Some groundtruth frame had no alpha mass, its KL term was set to zero.
    pub kl_degenerate: bool,
}

impl<T: Real> LossBreakdown<T> {
    pub fn term(&self, term: LossTerm) -> T {
        match term {
            LossTerm::Alpha => self.alpha,
            LossTerm::Composition => self.composition,
            LossTerm::Gradient => self.gradient,
            LossTerm::Kl => self.kl,
            LossTerm::Temporal => self.temporal,
        }
    }
}

fn is_binary<T: Real>(v: T) -> bool {
    v == T::zero() || v == T::one()
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Squared error where the groundtruth is exactly 0 or 1, absolute error elsewhere.
pub fn alpha_loss<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    b.pred
        .iter()
        .zip(&b.gt)
        .map(|(&p, &g)| {
            let d = p - g;
            if is_binary(g) {
                d * d
            } else {
                d.abs()
            }
        })
        .collect()
}

fn alpha_loss_grad<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let two = T::of(2.0);
    b.pred.iter().zip(&b.gt).map(|(&p, &g)| if is_binary(g) { two * (p - g) } else { sign(p - g) }).collect()
}

fn composition_residuals<T: Real>(b: &LossBatch<T>, t: usize, c: usize, i: usize) -> (T, T) {
    let p = b.plane();
    let a = b.pred[t * p + i];
    let k = (t * 3 + c) * p + i;
    let (f, bg) = (b.fg[k], b.bg[k]);
    (a * f + (T::one() - a) * bg - b.composite[k], f - bg)
}

/// Channel-averaged `|α·F̂ + (1 − α)·B̂ − Î|` on transition pixels, zero elsewhere.
pub fn composition_loss<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let p = b.plane();
    let third = T::one() / T::of(3.0);
    (0..b.frames * p)
        .map(|j| {
            if !b.mask[j] {
                return T::zero();
            }
            let (t, i) = (j / p, j % p);
            (0..3).map(|c| composition_residuals(b, t, c, i).0.abs()).sum::<T>() * third
        })
        .collect()
}

fn composition_loss_grad<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let p = b.plane();
    let third = T::one() / T::of(3.0);
    (0..b.frames * p)
        .map(|j| {
            if !b.mask[j] {
                return T::zero();
            }
            let (t, i) = (j / p, j % p);
            (0..3)
                .map(|c| {
                    let (r, dfb) = composition_residuals(b, t, c, i);
                    sign(r) * dfb
                })
                .sum::<T>()
                * third
        })
        .collect()
}

struct SobelDiff<T> {
    dx: Vec<T>,
    dy: Vec<T>,
}

fn sobel_diffs<T: Real>(b: &LossBatch<T>) -> Vec<SobelDiff<T>> {
    let p = b.plane();
    (0..b.frames)
        .map(|t| {
            let (px, py) = sobel(&b.pred[t * p..(t + 1) * p], b.height, b.width);
            let (gx, gy) = sobel(&b.gt[t * p..(t + 1) * p], b.height, b.width);
            SobelDiff { dx: px.iter().zip(&gx).map(|(&a, &c)| a - c).collect(), dy: py.iter().zip(&gy).map(|(&a, &c)| a - c).collect() }
        })
        .collect()
}

/// `(|ΔGx| + |ΔGy|) · L_a` per pixel, with Sobel `G`.
pub fn gradient_loss<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let la = alpha_loss(b);
    let p = b.plane();
    let diffs = sobel_diffs(b);
    (0..b.frames * p)
        .map(|j| {
            let d = &diffs[j / p];
            let i = j % p;
            (d.dx[i].abs() + d.dy[i].abs()) * la[j]
        })
        .collect()
}

fn gradient_loss_grad<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let la = alpha_loss(b);
    let dla = alpha_loss_grad(b);
    let p = b.plane();
    let diffs = sobel_diffs(b);
    let mut out = vec![T::zero(); b.frames * p];
    for (t, d) in diffs.iter().enumerate() {
        let range = t * p..(t + 1) * p;
        let la_t = &la[range.clone()];
        let sx: Vec<T> = d.dx.iter().zip(la_t).map(|(&v, &l)| sign(v) * l).collect();
        let sy: Vec<T> = d.dy.iter().zip(la_t).map(|(&v, &l)| sign(v) * l).collect();
        let o = &mut out[range.clone()];
        sobel_adjoint(&sx, &sy, b.height, b.width, o);
        for i in 0..p {
            o[i] += (d.dx[i].abs() + d.dy[i].abs()) * dla[t * p + i];
        }
    }
    out
}

/// Result of the KL term over a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct KlValue<T> {
    pub per_frame: Vec<T>,
    pub mean: T,
    /// True when some groundtruth frame summed to zero.
    pub degenerate: bool,
}

fn kl_frame<T: Real>(pred: &[T], gt: &[T]) -> (T, Option<Vec<T>>) {
    let eps = T::of(KL_EPS);
    let gsum: T = gt.iter().copied().sum();
    if gsum <= T::zero() {
        return (T::zero(), None);
    }
    let s = pred.iter().copied().sum::<T>() + eps;
    let sg = gsum + eps;
    let mut kl = T::zero();
    let mut g = Vec::with_capacity(pred.len());
    for (&a, &ah) in pred.iter().zip(gt) {
        let (pp, q) = (a / s, ah / sg);
        let log_ratio = (pp + eps).ln() - (q + eps).ln();
        kl += pp * log_ratio;
        g.push(log_ratio + pp / (pp + eps));
    }
    // d/dα_j of Σ_i P_i·r_i with P = α / S
    let gp: T = g.iter().zip(pred).map(|(&gi, &a)| gi * a / s).sum();
    let grad = g.iter().map(|&gi| (gi - gp) / s).collect();
    (kl, Some(grad))
}

/// `D_KL(α/Σα ‖ α̂/Σα̂)` per frame over the whole frame.
pub fn kl_loss<T: Real>(b: &LossBatch<T>) -> KlValue<T> {
    let p = b.plane();
    let mut degenerate = false;
    let per_frame: Vec<T> = (0..b.frames)
        .map(|t| {
            let (v, g) = kl_frame(&b.pred[t * p..(t + 1) * p], &b.gt[t * p..(t + 1) * p]);
            degenerate |= g.is_none();
            v
        })
        .collect();
    let mean = per_frame.iter().copied().sum::<T>() / T::of(b.frames as f64);
    KlValue { per_frame, mean, degenerate }
}

fn kl_loss_grad<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let p = b.plane();
    let mut out = vec![T::zero(); b.frames * p];
    for t in 0..b.frames {
        if let (_, Some(g)) = kl_frame(&b.pred[t * p..(t + 1) * p], &b.gt[t * p..(t + 1) * p]) {
            out[t * p..(t + 1) * p].copy_from_slice(&g);
        }
    }
    out
}

/// `((α_{t+1} − α_t) − (α̂_{t+1} − α̂_t))²` for each of the `T − 1` frame pairs.
pub fn temporal_loss<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let p = b.plane();
    (0..b.frames.saturating_sub(1) * p)
        .map(|j| {
            let d = (b.pred[j + p] - b.pred[j]) - (b.gt[j + p] - b.gt[j]);
            d * d
        })
        .collect()
}

fn temporal_loss_grad<T: Real>(b: &LossBatch<T>) -> Vec<T> {
    let p = b.plane();
    let mut out = vec![T::zero(); b.frames * p];
    let two = T::of(2.0);
    for j in 0..b.frames.saturating_sub(1) * p {
        let d = (b.pred[j + p] - b.pred[j]) - (b.gt[j + p] - b.gt[j]);
        out[j + p] += two * d;
        out[j] -= two * d;
    }
    out
}

fn mean<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        T::zero()
    } else {
        v.iter().copied().sum::<T>() / T::of(v.len() as f64)
    }
}

/// Scalar value of one term as it enters the total (map mean, or frame mean for KL).
pub fn term_value<T: Real>(b: &LossBatch<T>, term: LossTerm) -> T {
    match term {
        LossTerm::Alpha => mean(&alpha_loss(b)),
        LossTerm::Composition => mean(&composition_loss(b)),
        LossTerm::Gradient => mean(&gradient_loss(b)),
        LossTerm::Kl => kl_loss(b).mean,
        LossTerm::Temporal => mean(&temporal_loss(b)),
    }
}

/// Gradient of [`term_value`] w.r.t. the predicted alpha.
pub fn term_gradient<T: Real>(b: &LossBatch<T>, term: LossTerm) -> Vec<T> {
    let n = b.frames * b.plane();
    let (raw, count) = match term {
        LossTerm::Alpha => (alpha_loss_grad(b), n),
        LossTerm::Composition => (composition_loss_grad(b), n),
        LossTerm::Gradient => (gradient_loss_grad(b), n),
        LossTerm::Kl => (kl_loss_grad(b), b.frames),
        LossTerm::Temporal => (temporal_loss_grad(b), b.frames.saturating_sub(1) * b.plane()),
    };
    if count == 0 {
        return vec![T::zero(); n];
    }
    let inv = T::one() / T::of(count as f64);
    raw.into_iter().map(|g| g * inv).collect()
}

/// Sum of the five term means, each scaled by its weight.
pub fn total_loss<T: Real>(b: &LossBatch<T>, w: &LossWeights) -> Result<LossBreakdown<T>> {
    b.validate()?;
    let kl = kl_loss(b);
    let mut out = LossBreakdown {
        alpha: mean(&alpha_loss(b)),
        composition: mean(&composition_loss(b)),
        gradient: mean(&gradient_loss(b)),
        kl: kl.mean,
        temporal: mean(&temporal_loss(b)),
        total: T::zero(),
        kl_degenerate: kl.degenerate,
    };
    out.total = LossTerm::ALL.iter().map(|&t| T::of(w.get(t)) * out.term(t)).sum();
    Ok(out)
}

/// [`total_loss`] together with its gradient w.r.t. the predicted alpha.
pub fn total_loss_with_grad<T: Real>(b: &LossBatch<T>, w: &LossWeights) -> Result<(LossBreakdown<T>, Vec<T>)> {
    let value = total_loss(b, w)?;
    let mut grad = vec![T::zero(); b.pred.len()];
    for term in LossTerm::ALL {
        let wt = w.get(term);
        if wt == 0.0 {
            continue;
        }
        let wt = T::of(wt);
        for (g, d) in grad.iter_mut().zip(term_gradient(b, term)) {
            *g += wt * d;
        }
    }
    Ok((value, grad))
}
