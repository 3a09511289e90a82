mod common;

use common::*;
use proptest::prelude::*;
use vidmatte_core::compositor::*;
use vidmatte_core::image::{AlphaMap, TrimapClass};
use vidmatte_core::morphology::*;

fn small_cfg(frames: usize) -> SynthesisConfig {
    SynthesisConfig { height: 24, width: 20, frames, ..SynthesisConfig::default() }
}

/// Largest compositing residual of a sample, recomputed in f32.
pub fn composite_residual(s: &CompositeSample) -> f32 {
    let mut worst = 0.0f32;
    for t in 0..s.len() {
        let a = s.alpha.frames()[t].data();
        let p = a.len();
        let (f, b, i) = (s.fg.frames()[t].data(), s.bg.frames()[t].data(), s.composite.frames()[t].data());
        for k in 0..3 * p {
            let al = a[k % p];
            worst = worst.max((i[k] - (al * f[k] + (1.0 - al) * b[k])).abs());
        }
    }
    worst
}

#[test]
fn composites_satisfy_the_equation() {
    for i in 0..10 {
        let s = synthesize_procedural(&small_cfg(4), 7, i).unwrap();
        assert_eq!(composite_residual(&s), 0.0);
        assert_eq!(s.motion.pairs.len(), 3);
    }
}

#[test]
fn quantized_samples_live_on_the_8bit_grid() {
    let s = synthesize_procedural(&small_cfg(3), 8, 0).unwrap();
    for f in s.fg.frames().iter().chain(s.bg.frames()) {
        assert!(f.data().iter().all(|&v| ((v * 255.0).round() / 255.0 - v).abs() < 1e-7));
    }
    assert!(s.alpha.frames().iter().all(|a| a.data().iter().all(|&v| ((v * 255.0).round() / 255.0 - v).abs() < 1e-7)));
}

#[test]
fn procedural_samples_are_order_independent() {
    let cfg = small_cfg(3);
    let a = synthesize_procedural(&cfg, 3, 5).unwrap();
    let _ = synthesize_procedural(&cfg, 3, 4).unwrap();
    assert_eq!(a, synthesize_procedural(&cfg, 3, 5).unwrap());
    assert_ne!(a.composite, synthesize_procedural(&cfg, 3, 6).unwrap().composite);
}

#[test]
fn rotation_motion_matches_closed_form() {
    let (h, w) = (9, 11);
    let (a0, a1) = (0.1, 0.25);
    let cur = AffinePose { rotation: a0, ..AffinePose::IDENTITY };
    let next = AffinePose { rotation: a1, ..AffinePose::IDENTITY };
    let flow = motion_between(&cur, &next, h, w);
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let d = a1 - a0;
    for y in 0..h {
        for x in 0..w {
            let (rx, ry) = (x as f64 - cx, y as f64 - cy);
            let ex = cx + d.cos() * rx - d.sin() * ry - x as f64;
            let ey = cy + d.sin() * rx + d.cos() * ry - y as f64;
            let (dx, dy) = flow.get(y, x);
            assert!((dx as f64 - ex).abs() < 1e-5 && (dy as f64 - ey).abs() < 1e-5);
        }
    }
}

#[test]
fn motion_tracks_the_warped_matte() {
    // Translation only: the matte at p in frame t reappears at p + v in frame t + 1.
    let track = AffineTrack { poses: vec![AffinePose::IDENTITY, AffinePose { tx: 2.0, ty: 1.0, ..AffinePose::IDENTITY }] };
    let cfg = small_cfg(2);
    let base = synthesize_procedural(&cfg, 1, 0).unwrap();
    let s = synthesize(Foreground::Image { rgb: &base.fg.frames()[0], alpha: &base.alpha.frames()[0] }, &base.bg, &track, false).unwrap();
    let (a0, a1) = (&s.alpha.frames()[0], &s.alpha.frames()[1]);
    for y in 0..cfg.height - 1 {
        for x in 0..cfg.width - 2 {
            let (dx, dy) = s.motion.pairs[0].get(y, x);
            assert_eq!((dx, dy), (2.0, 1.0));
            assert_eq!(a0.get(y, x), a1.get(y + 1, x + 2));
        }
    }
}

#[test]
fn single_soft_pixel_grows_to_a_nine_block() {
    let mut a = vec![0.0f32; 15 * 15];
    a[7 * 15 + 7] = 0.5;
    let t = make_trimap(&AlphaMap::new(15, 15, a).unwrap(), 3, 2).unwrap();
    for y in 0..15 {
        for x in 0..15 {
            let inside = (3..=11).contains(&y) && (3..=11).contains(&x);
            let want = if inside { TrimapClass::Unknown } else { TrimapClass::Background };
            assert_eq!(t.get(y, x), want, "({y}, {x})");
        }
    }
}

#[test]
fn morphology_matches_brute_force() {
    let mut r = rng(30);
    use rand::Rng;
    for _ in 0..30 {
        let (h, w) = (r.gen_range(1..12), r.gen_range(1..12));
        let m: Vec<bool> = (0..h * w).map(|_| r.gen_bool(0.3)).collect();
        let (k, it) = (r.gen_range(1..5), r.gen_range(0..4));
        assert_eq!(dilate(&m, h, w, k, it), brute_morph(&m, h, w, k - 1, it, true));
        assert_eq!(erode(&m, h, w, k, it), brute_morph(&m, h, w, k - 1, it, false));
    }
}

#[test]
fn crop_scales_are_uniform() {
    let cfg = SynthesisConfig { height: 48, width: 48, frames: 3, ..SynthesisConfig::default() };
    let s = synthesize_procedural(&cfg, 2, 0).unwrap();
    let tri: Vec<_> = s.alpha.frames().iter().map(|a| make_trimap(a, 3, 2).unwrap()).collect();
    let crop = CropConfig::multi_scale(16);
    let mut counts = [0usize; 3];
    let mut r = rng(31);
    let draws = 10_000;
    for _ in 0..draws {
        let c = crop_cube(&s, &tri, 1, 1, 16, &crop, &mut r).unwrap();
        counts[crop.scales.iter().position(|&v| v == c.side).unwrap()] += 1;
    }
    for c in counts {
        let frac = c as f64 / draws as f64;
        assert!((frac - 1.0 / 3.0).abs() <= 0.05 / 3.0, "{counts:?}");
    }
}

#[test]
fn crop_cubes_keep_the_equation_and_centre_unknown() {
    let cfg = SynthesisConfig { height: 40, width: 40, frames: 5, ..SynthesisConfig::default() };
    let s = synthesize_procedural(&cfg, 4, 1).unwrap();
    let tri: Vec<_> = s.alpha.frames().iter().map(|a| make_trimap(a, 3, 2).unwrap()).collect();
    let mut r = rng(32);
    for t in 0..5 {
        let c = crop_cube(&s, &tri, t, 2, 16, &CropConfig::multi_scale(16), &mut r).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.frame_indices, window_indices(t, 2, 2, 5));
        assert_eq!(tri[t].get(c.center.0, c.center.1), TrimapClass::Unknown);
        for j in 0..5 {
            let (a, f, b, i) = (c.alpha[j].data(), c.fg[j].data(), c.bg[j].data(), c.composite[j].data());
            for k in 0..3 * 256 {
                assert_eq!(i[k], a[k % 256] * f[k] + (1.0 - a[k % 256]) * b[k]);
            }
        }
    }
}

fn alpha_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        let px = prop_oneof![Just(0.0f32), Just(1.0f32), 0.01f32..0.99];
        proptest::collection::vec(px, h * w).prop_map(move |v| (h, w, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn trimap_is_consistent_with_alpha((h, w, a) in alpha_strategy(), k in 1usize..4, it in 0usize..4) {
        let t = make_trimap(&AlphaMap::new(h, w, a.clone()).unwrap(), k, it).unwrap();
        for (i, &v) in a.iter().enumerate() {
            let c = t.data()[i];
            if v > 0.0 && v < 1.0 {
                prop_assert_eq!(c, TrimapClass::Unknown);
            }
            if v == 0.0 {
                prop_assert_ne!(c, TrimapClass::Foreground);
            }
            if v == 1.0 {
                prop_assert_ne!(c, TrimapClass::Background);
            }
        }
    }

    #[test]
    fn unknown_region_grows_with_iterations((h, w, a) in alpha_strategy(), k in 1usize..4, it in 0usize..4) {
        let am = AlphaMap::new(h, w, a).unwrap();
        let small = make_trimap(&am, k, it).unwrap().unknown_mask();
        let big = make_trimap(&am, k, it + 1).unwrap().unknown_mask();
        prop_assert!(small.iter().zip(&big).all(|(&s, &b)| !s || b));
        let wider = make_trimap(&am, k + 1, it).unwrap().unknown_mask();
        prop_assert!(small.iter().zip(&wider).all(|(&s, &b)| !s || b));
    }
}
