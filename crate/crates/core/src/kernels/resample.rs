use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Bilinear lookup in an `h×w` plane at fractional `(y, x)`, zero outside.
pub fn bilinear_sample<T: Real>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let fy = y.floor();
    let fx = x.floor();
    let ly = y - fy;
    let lx = x - fx;
    let (Some(y0), Some(x0)) = (fy.to_isize(), fx.to_isize()) else {
        return T::zero();
    };
    let get = |yy: isize, xx: isize| {
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            plane[yy as usize * w + xx as usize]
        } else {
            T::zero()
        }
    };
    let one = T::one();
    (one - ly) * ((one - lx) * get(y0, x0) + lx * get(y0, x0 + 1)) + ly * ((one - lx) * get(y0 + 1, x0) + lx * get(y0 + 1, x0 + 1))
}

/// Source index pairs and weight of the upper neighbour, half-pixel centres, edge clamped.
fn axis_taps<T: Real>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(s) as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, T::of(s - i0 as f64))
        })
        .collect()
}

pub fn resize_bilinear<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let one = T::one();
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = (one - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1];
                let bot = (one - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1];
                dst[oy * ow + ox] = (one - ly) * top + ly * bot;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<T: Real>(grad_out: &Tensor<T>, h: usize, w: usize, grad_x: &mut Tensor<T>) {
    let (_, _, oh, ow) = grad_out.dims4();
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let one = T::one();
    for (g, dst) in grad_out.data().chunks(oh * ow).zip(grad_x.data_mut().chunks_mut(h * w)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += v * (one - ly) * (one - lx);
                dst[y0 * w + x1] += v * (one - ly) * lx;
                dst[y1 * w + x0] += v * ly * (one - lx);
                dst[y1 * w + x1] += v * ly * lx;
            }
        }
    }
}

/// Pixel shuffle: `[N, C·r², H, W] → [N, C, H·r, W·r]`,
/// with `out[c, y·r + i, x·r + j] = in[c·r² + i·r + j, y, x]`.
pub fn depth_to_space<T: Real>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (n, cr, h, w) = x.dims4();
    assert_eq!(cr % (r * r), 0, "channels {cr} not divisible by {}", r * r);
    let c = cr / (r * r);
    let mut out = Tensor::zeros(&[n, c, h * r, w * r]);
    shuffle(x.data(), out.data_mut(), n, c, h, w, r, false);
    out
}

pub fn depth_to_space_backward<T: Real>(grad_out: &Tensor<T>, r: usize, grad_x: &mut Tensor<T>) {
    let (n, c, hr, wr) = grad_out.dims4();
    shuffle(grad_out.data(), grad_x.data_mut(), n, c, hr / r, wr / r, r, true);
}

#[allow(clippy::too_many_arguments)]
fn shuffle<T: Real>(src: &[T], dst: &mut [T], n: usize, c: usize, h: usize, w: usize, r: usize, inverse: bool) {
    let (ow, plane) = (w * r, h * w);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let in_base = ((b * c + ch) * r * r + i * r + j) * plane;
                    let out_base = (b * c + ch) * plane * r * r;
                    for y in 0..h {
                        for x in 0..w {
                            let a = in_base + y * w + x;
                            let o = out_base + (y * r + i) * ow + x * r + j;
                            if inverse {
                                dst[a] += src[o];
                            } else {
                                dst[o] = src[a];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_when_sizes_match() {
        let x = Tensor::from_vec(&[1, 1, 2, 3], alloc::vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(resize_bilinear(&x, 2, 3), x);
    }

    #[test]
    fn depth_to_space_layout() {
        let x = Tensor::from_vec(&[1, 4, 1, 1], alloc::vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = depth_to_space(&x, 2);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let mut g = Tensor::zeros(x.shape());
        depth_to_space_backward(&y, 2, &mut g);
        assert_eq!(g, x);
    }

    #[test]
    fn bilinear_sample_is_zero_padded() {
        let plane = [1.0f64, 1.0, 1.0, 1.0];
        assert_eq!(bilinear_sample(&plane, 2, 2, 0.5, 0.5), 1.0);
        assert_eq!(bilinear_sample(&plane, 2, 2, -0.5, 0.0), 0.5);
        assert_eq!(bilinear_sample(&plane, 2, 2, 5.0, 5.0), 0.0);
    }
}
