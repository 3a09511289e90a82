mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use vidmatte_core::autograd::Graph;
use vidmatte_core::encoder::{EncoderConfig, Preset};
use vidmatte_core::matting_net::{MattingConfig, MattingNet};
use vidmatte_core::nn::ParamStore;
use vidmatte_core::stfam::{FusionKind, SkipFusion, StfamConfig};
use vidmatte_core::trimap_prop::{Correlation, PropagationConfig, TrimapNet};
use vidmatte_core::Tensor;

#[test]
fn similarity_rows_sum_to_one() {
    let mut r = rng(40);
    let mut store = ParamStore::<f32>::new();
    let corr = Correlation::new(&mut store, "c", 8, &mut r);
    for _ in 0..5 {
        let t = random_tensor(&[2, 8, 3, 5], -2.0, 2.0, &mut r).cast::<f32>();
        let f = random_tensor(&[2, 8, 4, 4], -2.0, 2.0, &mut r).cast::<f32>();
        let m = random_tensor(&[2, 8, 4, 4], -2.0, 2.0, &mut r).cast::<f32>();
        let mut g = Graph::new(&store);
        let (tv, fv, mv) = (g.constant(t), g.constant(f), g.constant(m));
        let out = corr.forward(&mut g, tv, fv, mv).unwrap();
        assert_eq!(g.shape(out.output), &[2, 8, 3, 5]);
        let s = g.value(out.similarity);
        assert_eq!(s.shape(), &[2, 15, 16]);
        for row in s.data().chunks(16) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-5, "{sum}");
        }
    }
}

#[test]
fn self_correlation_matches_each_location_to_itself() {
    let mut r = rng(41);
    let (c, h, w) = (16, 4, 4);
    for _ in 0..20 {
        let mut store = ParamStore::<f32>::new();
        let corr = Correlation::new(&mut store, "c", c, &mut r);
        // Distinct one-hot codes with a large margin plus small noise.
        let mut codes: Vec<usize> = (0..c).collect();
        codes.shuffle(&mut r);
        let mut f = vec![0.0f32; c * h * w];
        for p in 0..h * w {
            for ch in 0..c {
                f[ch * h * w + p] = r.gen_range(-0.05..0.05) + if ch == codes[p] { 6.0 } else { 0.0 };
            }
        }
        let feat = Tensor::from_vec(&[1, c, h, w], f).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(feat);
        let out = corr.forward(&mut g, x, x, x).unwrap();
        let s = g.value(out.similarity);
        for (p, row) in s.data().chunks(h * w).enumerate() {
            let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(best, p);
        }
    }
}

fn matting_shapes(cfg: &MattingConfig, size: usize, r: &mut vidmatte_core::rng::SeededRng) {
    let mut store = ParamStore::<f32>::new();
    let net = MattingNet::new(&mut store, cfg, r).unwrap();
    let frames = cfg.window();
    let input = random_tensor(&[frames, 4, size, size], 0.0, 1.0, r).cast::<f32>();
    let mut g = Graph::new(&store);
    let x = g.constant(input);
    let pyramid = net.encode(&mut g, x).unwrap();
    let sizes = cfg.encoder.stage_sizes(size, size);
    assert_eq!(pyramid.len(), cfg.encoder.widths.len());
    for (l, &v) in pyramid.iter().enumerate() {
        assert_eq!(g.shape(v), &[frames, cfg.encoder.widths[l], sizes[l].0, sizes[l].1]);
    }
    let window: Vec<usize> = (0..frames).collect();
    let alpha = net.decode(&mut g, &pyramid, &[window.clone(), window.iter().rev().copied().collect()]).unwrap();
    assert_eq!(g.shape(alpha), &[2, 1, size, size]);
    assert!(g.value(alpha).data().iter().all(|&a| (0.0..=1.0).contains(&a)));
    // Wrong window length is rejected.
    assert!(net.decode(&mut g, &pyramid, &[vec![0; frames + 1]]).is_err());
}

#[test]
fn toy_matting_shapes() {
    let mut r = rng(42);
    for n in 0..=2 {
        for size in [64, 96] {
            matting_shapes(&MattingConfig::toy(n), size, &mut r);
        }
    }
}

#[test]
fn paper_matting_shapes() {
    let mut r = rng(43);
    for n in 0..=2 {
        for size in [64, 96] {
            matting_shapes(&MattingConfig::for_preset(Preset::Paper, n), size, &mut r);
        }
    }
}

#[test]
fn fusion_variants_share_the_output_shape() {
    let mut r = rng(44);
    for n in 0..=2 {
        let variants = [
            (FusionKind::Stfam, true, true),
            (FusionKind::Stfam, true, false),
            (FusionKind::Stfam, false, true),
            (FusionKind::Stfam, false, false),
            (FusionKind::Naive, false, false),
            (FusionKind::CrossAttention, false, false),
        ];
        for (kind, tfa, tff) in variants {
            let mut cfg = StfamConfig::new(12, 10, n);
            cfg.tfa = tfa;
            cfg.tff = tff;
            let mut store = ParamStore::<f32>::new();
            let f = SkipFusion::new(&mut store, "s", kind, &cfg, &mut r).unwrap();
            let mut g = Graph::new(&store);
            let stack: Vec<_> = (0..2 * n + 1).map(|_| g.constant(random_tensor(&[3, 12, 8, 6], -1.0, 1.0, &mut r).cast::<f32>())).collect();
            let y = f.forward(&mut g, &stack).unwrap();
            assert_eq!(g.shape(y), &[3, 10, 8, 6], "{kind:?} tfa={tfa} tff={tff} n={n}");
            // A stack of the wrong length is rejected.
            assert!(f.forward(&mut g, &stack[..2 * n]).is_err());
        }
    }
}

#[test]
fn trimap_net_shapes_for_both_presets() {
    let mut r = rng(45);
    for cfg in [PropagationConfig::toy(), PropagationConfig::paper()] {
        let mut store = ParamStore::<f32>::new();
        let net = TrimapNet::new(&mut store, &cfg, &mut r).unwrap();
        for size in [64, 96] {
            let mut g = Graph::new(&store);
            let refr = g.constant(random_tensor(&[2, 4, size, size], 0.0, 1.0, &mut r).cast::<f32>());
            let tgt = g.constant(random_tensor(&[2, 3, size, size], 0.0, 1.0, &mut r).cast::<f32>());
            let logits = net.forward(&mut g, refr, tgt).unwrap();
            assert_eq!(g.shape(logits), &[2, 3, size, size]);
        }
    }
}

#[test]
fn encoder_presets_geometry() {
    assert_eq!(EncoderConfig::toy(4).total_stride(), 16);
    assert_eq!(EncoderConfig::resnet50(4).total_stride(), 32);
    assert_eq!(EncoderConfig::resnet50(4).stage_sizes(96, 64), vec![(24, 16), (12, 8), (6, 4), (3, 2)]);
}
