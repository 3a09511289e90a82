//! Binary morphology with square structuring elements and trimap generation.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::image::{AlphaMap, Trimap, TrimapClass};

fn pick(mut it: impl Iterator<Item = bool>, dilate: bool) -> bool {
    if dilate {
        it.any(|b| b)
    } else {
        it.all(|b| b)
    }
}

/// One pass of a square max (dilate) or min (erode) filter of the given
/// radius. The window is clipped at the image border.
fn square_pass(mask: &[bool], h: usize, w: usize, radius: usize, dilate: bool) -> Vec<bool> {
    let mut rows = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows.push(pick((lo..=hi).map(|xx| mask[y * w + xx]), dilate));
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out.push(pick((lo..=hi).map(|yy| rows[yy * w + x]), dilate));
        }
    }
    out
}

/// Side length `2·kernel − 1`: kernel 1 is the identity, kernel `k` grows a set by `k − 1` pixels per iteration.
pub fn kernel_radius(kernel: usize) -> usize {
    kernel.saturating_sub(1)
}

pub fn dilate(mask: &[bool], h: usize, w: usize, kernel: usize, iterations: usize) -> Vec<bool> {
    let r = kernel_radius(kernel);
    (0..iterations).fold(mask.to_vec(), |m, _| if r == 0 { m } else { square_pass(&m, h, w, r, true) })
}

pub fn erode(mask: &[bool], h: usize, w: usize, kernel: usize, iterations: usize) -> Vec<bool> {
    let r = kernel_radius(kernel);
    (0..iterations).fold(mask.to_vec(), |m, _| if r == 0 { m } else { square_pass(&m, h, w, r, false) })
}

/// Trimap from a matte: unknown is the dilated non-background set minus the
/// eroded opaque set. Pixels with `0 < α < 1` always end up unknown, `α = 0`
/// is never foreground and `α = 1` never background.
pub fn make_trimap(alpha: &AlphaMap, kernel: usize, iterations: usize) -> Result<Trimap> {
    if kernel < 1 {
        return Err(invalid!("trimap kernel must be at least 1"));
    }
    let (h, w) = (alpha.height(), alpha.width());
    let opaque: Vec<bool> = alpha.data().iter().map(|&a| a >= 1.0).collect();
    let covered: Vec<bool> = alpha.data().iter().map(|&a| a > 0.0).collect();
    let fg = erode(&opaque, h, w, kernel, iterations);
    let band = dilate(&covered, h, w, kernel, iterations);
    let data = fg
        .iter()
        .zip(&band)
        .map(|(&f, &b)| match (f, b) {
            (true, _) => TrimapClass::Foreground,
            (false, true) => TrimapClass::Unknown,
            (false, false) => TrimapClass::Background,
        })
        .collect();
    Trimap::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_mattes() {
        let t = make_trimap(&AlphaMap::filled(6, 5, 0.0), 3, 4).unwrap();
        assert_eq!(t.count(TrimapClass::Background), 30);
        let t = make_trimap(&AlphaMap::filled(6, 5, 1.0), 3, 0).unwrap();
        assert_eq!(t.count(TrimapClass::Foreground), 30);
    }

    #[test]
    fn rejects_zero_kernel() {
        assert!(make_trimap(&AlphaMap::filled(2, 2, 0.5), 0, 1).is_err());
    }

    #[test]
    fn kernel_one_is_identity() {
        let m = vec![false, true, false, false];
        assert_eq!(dilate(&m, 2, 2, 1, 5), m);
        assert_eq!(erode(&m, 2, 2, 1, 5), m);
    }
}
