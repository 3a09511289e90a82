//! 2-D convolution via im2col and GEMM.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Stride and zero padding of a convolution; the kernel size comes from the weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    pub fn same(kh: usize, kw: usize) -> Self {
        Self { stride: 1, pad_h: kh / 2, pad_w: kw / 2 }
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad_h - kh) / self.stride + 1;
        let ow = (w + 2 * self.pad_w - kw) / self.stride + 1;
        (oh, ow)
    }
}

struct Layout {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    g: ConvGeometry,
}

impl Layout {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.g.stride == 1 && self.g.pad_h == 0 && self.g.pad_w == 0
    }
}

/// Output columns `lo..hi` whose stride-1 tap `kx` lands inside a row of width `w`.
fn valid_span(kx: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).min(ow);
    let hi = (w + pad).saturating_sub(kx).min(ow).max(lo);
    (lo, hi)
}

fn im2col<T: Real>(x: &[T], l: &Layout, cols: &mut [T]) {
    let p = l.oh * l.ow;
    for c in 0..l.c {
        let plane = &x[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                let row = ((c * l.kh + ky) * l.kw + kx) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..l.oh {
                    let iy = (oy * l.g.stride + ky) as isize - l.g.pad_h as isize;
                    let out = &mut dst[oy * l.ow..(oy + 1) * l.ow];
                    if iy < 0 || iy >= l.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * l.w..(iy as usize + 1) * l.w];
                    if l.g.stride == 1 {
                        let (lo, hi) = valid_span(kx, l.g.pad_w, l.w, l.ow);
                        out[..lo].fill(T::zero());
                        out[hi..].fill(T::zero());
                        if lo < hi {
                            let start = lo + kx - l.g.pad_w;
                            out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * l.g.stride + kx) as isize - l.g.pad_w as isize;
                        *o = if ix < 0 || ix >= l.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], l: &Layout, gx: &mut [T]) {
    let p = l.oh * l.ow;
    for c in 0..l.c {
        let plane = &mut gx[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                let row = ((c * l.kh + ky) * l.kw + kx) * p;
                let src = &cols[row..row + p];
                for oy in 0..l.oh {
                    let iy = (oy * l.g.stride + ky) as isize - l.g.pad_h as isize;
                    if iy < 0 || iy >= l.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * l.w..(iy as usize + 1) * l.w];
                    if l.g.stride == 1 {
                        let (lo, hi) = valid_span(kx, l.g.pad_w, l.w, l.ow);
                        if lo < hi {
                            let start = lo + kx - l.g.pad_w;
                            let row = &src[oy * l.ow + lo..oy * l.ow + hi];
                            dst[start..start + hi - lo].iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                        continue;
                    }
                    for ox in 0..l.ow {
                        let ix = (ox * l.g.stride + kx) as isize - l.g.pad_w as isize;
                        if ix >= 0 && ix < l.w as isize {
                            dst[ix as usize] += src[oy * l.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn layout<T: Real>(x: &Tensor<T>, w: &Tensor<T>, g: ConvGeometry) -> (usize, usize, Layout) {
    let (n, c, h, wd) = x.dims4();
    let (co, ci, kh, kw) = w.dims4();
    assert_eq!(c, ci, "conv input has {c} channels, weight expects {ci}");
    assert!(h + 2 * g.pad_h >= kh && wd + 2 * g.pad_w >= kw, "conv kernel larger than padded input");
    let (oh, ow) = g.output_size(h, wd, kh, kw);
    (n, co, Layout { c, h, w: wd, kh, kw, oh, ow, g })
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: ConvGeometry) -> Tensor<T> {
    let (n, co, l) = layout(x, w, g);
    let k = l.c * l.kh * l.kw;
    let p = l.oh * l.ow;
    let mut out = Tensor::zeros(&[n, co, l.oh, l.ow]);
    let mut cols = if l.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for i in 0..n {
        let xi = x.item(i);
        let src: &[T] = if l.is_pointwise() {
            xi
        } else {
            im2col(xi, &l, &mut cols);
            &cols
        };
        let oi = out.item_mut(i);
        if let Some(b) = b {
            for (o, &bv) in oi.chunks_mut(p).zip(b.data()) {
                o.fill(bv);
            }
        }
        T::gemm(co, k, p, w.data(), false, src, false, if b.is_some() { T::one() } else { T::zero() }, oi);
    }
    out
}

/// Accumulates gradients of a convolution into the provided buffers.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeometry,
    grad_out: &Tensor<T>,
    grad_x: Option<&mut Tensor<T>>,
    grad_w: Option<&mut Tensor<T>>,
    grad_b: Option<&mut Tensor<T>>,
) {
    let (n, co, l) = layout(x, w, g);
    let k = l.c * l.kh * l.kw;
    let p = l.oh * l.ow;
    if let Some(gb) = grad_b {
        for i in 0..n {
            for (bv, o) in gb.data_mut().iter_mut().zip(grad_out.item(i).chunks(p)) {
                *bv += o.iter().copied().sum::<T>();
            }
        }
    }
    let mut cols = if l.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    if let Some(gw) = grad_w {
        for i in 0..n {
            let src: &[T] = if l.is_pointwise() {
                x.item(i)
            } else {
                im2col(x.item(i), &l, &mut cols);
                &cols
            };
            // gW[co, k] += gOut[co, p] · colsᵀ[p, k]
            T::gemm(co, p, k, grad_out.item(i), false, src, true, T::one(), gw.data_mut());
        }
    }
    if let Some(gx) = grad_x {
        for i in 0..n {
            if l.is_pointwise() {
                T::gemm(k, co, p, w.data(), true, grad_out.item(i), false, T::one(), gx.item_mut(i));
            } else {
                T::gemm(k, co, p, w.data(), true, grad_out.item(i), false, T::zero(), &mut cols);
                col2im(&cols, &l, gx.item_mut(i));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    pub(crate) fn conv_direct(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, g: ConvGeometry) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4();
        let (co, _, kh, kw) = w.dims4();
        let (oh, ow) = g.output_size(h, wd, kh, kw);
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        for i in 0..n {
            for o in 0..co {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b.map(|b| b.data()[o]).unwrap_or(0.0);
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (y * g.stride + ky) as isize - g.pad_h as isize;
                                    let ix = (xx * g.stride + kx) as isize - g.pad_w as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += w.data()[((o * c + ci) * kh + ky) * kw + kx]
                                            * x.data()[((i * c + ci) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((i * co + o) * oh + y) * ow + xx] = s;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], seed: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + seed) * 0.731).sin()).collect()).unwrap()
    }

    #[test]
    fn im2col_conv_matches_direct_loop() {
        let x = ramp(&[2, 3, 7, 6], 0.0);
        for (kh, kw, stride, ph, pw) in [(3, 3, 1, 1, 1), (3, 3, 2, 1, 1), (1, 1, 1, 0, 0), (7, 1, 1, 3, 0), (1, 7, 1, 0, 3)] {
            let w = ramp(&[4, 3, kh, kw], 1.0);
            let b = ramp(&[4], 2.0);
            let g = ConvGeometry { stride, pad_h: ph, pad_w: pw };
            let fast = conv2d_forward(&x, &w, Some(&b), g);
            let slow = conv_direct(&x, &w, Some(&b), g);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "kernel {kh}x{kw} stride {stride}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), r> is linear in x and w, so its gradients equal the directional derivatives.
        let x = ramp(&[1, 2, 5, 5], 0.3);
        let w = ramp(&[3, 2, 3, 3], 0.7);
        let g = ConvGeometry { stride: 2, pad_h: 1, pad_w: 1 };
        let out = conv2d_forward(&x, &w, None, g);
        let r = ramp(out.shape(), 5.0);
        let mut gx = Tensor::zeros(x.shape());
        let mut gw = Tensor::zeros(w.shape());
        conv2d_backward(&x, &w, g, &r, Some(&mut gx), Some(&mut gw), None);
        let dx = ramp(x.shape(), 9.0);
        let lhs: f64 = conv2d_forward(&dx, &w, None, g).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = gx.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let dw = ramp(w.shape(), 4.0);
        let lhs: f64 = conv2d_forward(&x, &dw, None, g).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = gw.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
