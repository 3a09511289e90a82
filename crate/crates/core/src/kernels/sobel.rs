//! 3×3 Sobel derivatives with replicate padding.

use alloc::vec::Vec;

use crate::scalar::Real;

const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn apply<T: Real>(plane: &[T], h: usize, w: usize, k: &[[f64; 3]; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut s = T::zero();
            for (dy, row) in k.iter().enumerate() {
                for (dx, &kv) in row.iter().enumerate() {
                    if kv != 0.0 {
                        let yy = clamp_idx(y as isize + dy as isize - 1, h);
                        let xx = clamp_idx(x as isize + dx as isize - 1, w);
                        s += T::of(kv) * plane[yy * w + xx];
                    }
                }
            }
            out.push(s);
        }
    }
    out
}

/// Horizontal and vertical Sobel responses of one plane.
pub fn sobel<T: Real>(plane: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    (apply(plane, h, w, &KX), apply(plane, h, w, &KY))
}

/// Adjoint of [`sobel`]: accumulates `Gxᵀ·gx + Gyᵀ·gy` into `out`.
pub fn sobel_adjoint<T: Real>(gx: &[T], gy: &[T], h: usize, w: usize, out: &mut [T]) {
    for (g, k) in [(gx, &KX), (gy, &KY)] {
        for y in 0..h {
            for x in 0..w {
                let v = g[y * w + x];
                if v == T::zero() {
                    continue;
                }
                for (dy, row) in k.iter().enumerate() {
                    for (dx, &kv) in row.iter().enumerate() {
                        if kv != 0.0 {
                            let yy = clamp_idx(y as isize + dy as isize - 1, h);
                            let xx = clamp_idx(x as isize + dx as isize - 1, w);
                            out[yy * w + xx] += T::of(kv) * v;
                        }
                    }
                }
            }
        }
    }
}
