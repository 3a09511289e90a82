//! Deformable convolution: every kernel tap samples the input at its regular
//! grid position plus a per-pixel learned offset, with bilinear interpolation
//! and zeros outside the image.
//!
//! Offsets are laid out `[N, 2·k², H, W]`; channel `2j` holds the vertical and
//! `2j + 1` the horizontal displacement of tap `j` (taps in row-major order).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Bilinear sample point with its four corner indices and weights; corners
/// outside the image carry weight zero.
#[derive(Clone, Copy)]
struct Tap<T> {
    ly: T,
    lx: T,
    idx: [usize; 4],
    wt: [T; 4],
    inside: [bool; 4],
}

impl<T: Real> Tap<T> {
    fn new(y: T, x: T, h: usize, w: usize) -> Self {
        let fy = y.floor();
        let fx = x.floor();
        let y0 = fy.to_isize().unwrap_or(isize::MIN / 2);
        let x0 = fx.to_isize().unwrap_or(isize::MIN / 2);
        let (ly, lx) = (y - fy, x - fx);
        let one = T::one();
        let mut tap = Self { ly, lx, idx: [0; 4], wt: [T::zero(); 4], inside: [false; 4] };
        let weights = [(one - ly) * (one - lx), (one - ly) * lx, ly * (one - lx), ly * lx];
        for (c, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                tap.idx[c] = yy as usize * w + xx as usize;
                tap.wt[c] = weights[c];
                tap.inside[c] = true;
            }
        }
        tap
    }

    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        self.wt[0] * plane[self.idx[0]] + self.wt[1] * plane[self.idx[1]] + self.wt[2] * plane[self.idx[2]] + self.wt[3] * plane[self.idx[3]]
    }

    /// Corner values, zero outside the image.
    #[inline]
    fn values(&self, plane: &[T]) -> [T; 4] {
        core::array::from_fn(|c| if self.inside[c] { plane[self.idx[c]] } else { T::zero() })
    }
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
}

fn check<T: Real>(x: &Tensor<T>, offsets: &Tensor<T>, weight: &Tensor<T>) -> Result<Dims> {
    let (n, c, h, w) = x.dims4();
    let (co, ci, kh, kw) = weight.dims4();
    if ci != c || kh != kw || kh % 2 == 0 {
        return Err(invalid!("deformable weight {:?} incompatible with input {:?}", weight.shape(), x.shape()));
    }
    if offsets.shape() != [n, 2 * kh * kw, h, w] {
        return Err(invalid!("offset field {:?} does not match input {:?} and kernel {}", offsets.shape(), x.shape(), kh));
    }
    if !offsets.is_finite() {
        return Err(invalid!("offset field contains non-finite values"));
    }
    Ok(Dims { n, c, h, w, co, k: kh })
}

fn taps<T: Real>(offsets: &[T], d: &Dims) -> Vec<Tap<T>> {
    let kk = d.k * d.k;
    let p = d.h * d.w;
    let pad = (d.k / 2) as isize;
    let mut out = Vec::with_capacity(kk * p);
    for j in 0..kk {
        let ky = (j / d.k) as isize - pad;
        let kx = (j % d.k) as isize - pad;
        let dy = &offsets[2 * j * p..(2 * j + 1) * p];
        let dx = &offsets[(2 * j + 1) * p..(2 * j + 2) * p];
        for y in 0..d.h {
            for x in 0..d.w {
                let i = y * d.w + x;
                let sy = T::of((y as isize + ky) as f64) + dy[i];
                let sx = T::of((x as isize + kx) as f64) + dx[i];
                out.push(Tap::new(sy, sx, d.h, d.w));
            }
        }
    }
    out
}

fn gather_cols<T: Real>(x: &[T], taps: &[Tap<T>], d: &Dims, cols: &mut [T]) {
    let kk = d.k * d.k;
    let p = d.h * d.w;
    for c in 0..d.c {
        let plane = &x[c * p..(c + 1) * p];
        for j in 0..kk {
            let row = &mut cols[(c * kk + j) * p..(c * kk + j + 1) * p];
            for (o, t) in row.iter_mut().zip(&taps[j * p..(j + 1) * p]) {
                *o = t.sample(plane);
            }
        }
    }
}

pub fn deform_conv2d_forward<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let d = check(x, offsets, weight)?;
    let p = d.h * d.w;
    let kdim = d.c * d.k * d.k;
    let mut out = Tensor::zeros(&[d.n, d.co, d.h, d.w]);
    let mut cols = vec![T::zero(); kdim * p];
    for i in 0..d.n {
        let taps = taps(offsets.item(i), &d);
        gather_cols(x.item(i), &taps, &d, &mut cols);
        let oi = out.item_mut(i);
        if let Some(b) = bias {
            for (o, &bv) in oi.chunks_mut(p).zip(b.data()) {
                o.fill(bv);
            }
        }
        T::gemm(d.co, kdim, p, weight.data(), false, &cols, false, if bias.is_some() { T::one() } else { T::zero() }, oi);
    }
    Ok(out)
}

/// Gradient accumulators for [`deform_conv2d_backward`]; any may be absent.
pub struct DeformGradients<'a, T> {
    pub x: Option<&'a mut Tensor<T>>,
    pub offsets: Option<&'a mut Tensor<T>>,
    pub weight: Option<&'a mut Tensor<T>>,
    pub bias: Option<&'a mut Tensor<T>>,
}

pub fn deform_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    mut grads: DeformGradients<'_, T>,
) -> Result<()> {
    let d = check(x, offsets, weight)?;
    let p = d.h * d.w;
    let kk = d.k * d.k;
    let kdim = d.c * kk;
    let mut cols = vec![T::zero(); kdim * p];
    let mut gcols = vec![T::zero(); kdim * p];
    for i in 0..d.n {
        let go = grad_out.item(i);
        if let Some(gb) = grads.bias.as_deref_mut() {
            for (bv, o) in gb.data_mut().iter_mut().zip(go.chunks(p)) {
                *bv += o.iter().copied().sum::<T>();
            }
        }
        let taps = taps(offsets.item(i), &d);
        if let Some(gw) = grads.weight.as_deref_mut() {
            gather_cols(x.item(i), &taps, &d, &mut cols);
            T::gemm(d.co, p, kdim, go, false, &cols, true, T::one(), gw.data_mut());
        }
        if grads.x.is_none() && grads.offsets.is_none() {
            continue;
        }
        T::gemm(kdim, d.co, p, weight.data(), true, go, false, T::zero(), &mut gcols);
        let xi = x.item(i);
        let one = T::one();
        for c in 0..d.c {
            let plane = &xi[c * p..(c + 1) * p];
            for j in 0..kk {
                let grow = &gcols[(c * kk + j) * p..(c * kk + j + 1) * p];
                for (pi, (&g, t)) in grow.iter().zip(&taps[j * p..(j + 1) * p]).enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    if let Some(gx) = grads.x.as_deref_mut() {
                        let gplane = &mut gx.item_mut(i)[c * p..(c + 1) * p];
                        for k in 0..4 {
                            gplane[t.idx[k]] += g * t.wt[k];
                        }
                    }
                    if let Some(goff) = grads.offsets.as_deref_mut() {
                        let v = t.values(plane);
                        let dval_dy = (one - t.lx) * (v[2] - v[0]) + t.lx * (v[3] - v[1]);
                        let dval_dx = (one - t.ly) * (v[1] - v[0]) + t.ly * (v[3] - v[2]);
                        let go_i = goff.item_mut(i);
                        go_i[2 * j * p + pi] += g * dval_dy;
                        go_i[(2 * j + 1) * p + pi] += g * dval_dx;
                    }
                }
            }
        }
    }
    Ok(())
}
