//! Trimap propagation: a reference encoder over image+trimap, a target
//! encoder over the image alone, an attention correlation layer matching
//! target locations to reference locations, and an upsampling decoder that
//! classifies every pixel as background, unknown or foreground.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{invalid, Error, Result};
use crate::image::{stack_rgb, stack_rgb_trimap, RgbImage, Trimap, TrimapClass};
use crate::nn::{Conv2d, ConvSpec, Init, ParamStore};
use crate::scalar::Real;

/// Cross-attention between a target feature map and a reference feature map:
/// `F_t + softmax(Q(F_t)·K(F_r)ᵀ/√c)·V(M_r)`.
#[derive(Clone, Debug)]
pub struct Correlation {
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    channels: usize,
}

pub struct CorrelationOutput {
    /// `[B, c, h_t, w_t]`
    pub output: Var,
    /// `[B, h_t·w_t, h_r·w_r]`, rows sum to one.
    pub similarity: Var,
}

impl Correlation {
    /// Query and key projections start as the identity.
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut R) -> Self {
        let query = ConvSpec::new(channels, channels, 1).build(store, &format!("{name}.query"), rng);
        let key = ConvSpec::new(channels, channels, 1).build(store, &format!("{name}.key"), rng);
        let value = ConvSpec::new(channels, channels, 1).init(Init::Xavier).build(store, &format!("{name}.value"), rng);
        query.set_identity(store, 0);
        key.set_identity(store, 0);
        Self { query, key, value, channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, target: Var, reference: Var, memory: Var) -> Result<CorrelationOutput> {
        let (b, c, ht, wt) = g.value(target).dims4();
        let (br, cr, hr, wr) = g.value(reference).dims4();
        if c != self.channels || cr != c || br != b {
            return Err(invalid!("correlation features {:?} and {:?} disagree with {} channels", g.shape(target), g.shape(reference), self.channels));
        }
        if g.shape(memory) != g.shape(reference) {
            return Err(invalid!("memory feature {:?} must match reference {:?}", g.shape(memory), g.shape(reference)));
        }
        let q = self.query.forward(g, target);
        let q = g.reshape(q, &[b, c, ht * wt]);
        let k = self.key.forward(g, reference);
        let k = g.reshape(k, &[b, c, hr * wr]);
        let logits = g.batch_matmul(q, k, true, false);
        let logits = g.scale(logits, T::one() / T::of(c as f64).sqrt());
        let similarity = g.softmax(logits);
        let v = self.value.forward(g, memory);
        let v = g.reshape(v, &[b, c, hr * wr]);
        let attended = g.batch_matmul(v, similarity, false, true);
        let attended = g.reshape(attended, &[b, c, ht, wt]);
        let output = g.add(target, attended);
        Ok(CorrelationOutput { output, similarity })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationConfig {
    /// Geometry shared by both encoders; input channels are set per encoder.
    pub encoder: EncoderConfig,
}

impl PropagationConfig {
    pub fn toy() -> Self {
        Self { encoder: EncoderConfig::toy(3) }
    }

    pub fn paper() -> Self {
        Self { encoder: EncoderConfig::resnet34(3) }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()
    }

    /// Number of ×2 (or larger) upsampling steps in the decoder.
    pub fn upsampling_steps(&self) -> usize {
        self.encoder.widths.len()
    }
}

#[derive(Clone, Debug)]
pub struct TrimapNet {
    config: PropagationConfig,
    pub reference_encoder: Encoder,
    pub target_encoder: Encoder,
    pub correlation: Correlation,
    /// One fusion convolution per upsampling step, coarsest first.
    decoder: Vec<Conv2d>,
    head: Conv2d,
}

impl TrimapNet {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &PropagationConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ref_cfg = config.encoder.clone();
        ref_cfg.in_channels = 4;
        let mut tgt_cfg = config.encoder.clone();
        tgt_cfg.in_channels = 3;
        let reference_encoder = Encoder::new(store, "trimap.reference", &ref_cfg, rng)?;
        let target_encoder = Encoder::new(store, "trimap.target", &tgt_cfg, rng)?;
        let widths = &config.encoder.widths;
        let deepest = *widths.last().expect("validated");
        let correlation = Correlation::new(store, "trimap.correlation", deepest, rng);
        let mut decoder = Vec::with_capacity(widths.len());
        let mut cin = deepest;
        for s in (0..widths.len() - 1).rev() {
            decoder.push(ConvSpec::new(cin + widths[s], widths[s], 3).build(store, &format!("trimap.decoder{s}"), rng));
            cin = widths[s];
        }
        decoder.push(ConvSpec::new(cin + 3, widths[0], 3).build(store, "trimap.decoder.full", rng));
        let head = ConvSpec::new(widths[0], 3, 3).init(Init::Xavier).build(store, "trimap.head", rng);
        Ok(Self { config: config.clone(), reference_encoder, target_encoder, correlation, decoder, head })
    }

    pub fn config(&self) -> &PropagationConfig {
        &self.config
    }

    /// Class logits `[B, 3, H, W]` for targets `[B, 3, H, W]` given references
    /// `[B, 4, H, W]` (image plus trimap channel).
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, reference: Var, target: Var) -> Result<Var> {
        let (b, c, h, w) = g.value(target).dims4();
        if c != 3 || g.shape(reference) != [b, 4, h, w] {
            return Err(invalid!("reference {:?} and target {:?} must be [B,4,H,W] and [B,3,H,W]", g.shape(reference), g.shape(target)));
        }
        let ref_rgb = g.slice_channels(reference, 0, 3);
        let both = g.concat_batch(&[target, ref_rgb]);
        let pyramid = self.target_encoder.forward(g, both)?;
        let memory = *self.reference_encoder.forward(g, reference)?.last().expect("stages");
        let tgt: Vec<usize> = (0..b).collect();
        let refs: Vec<usize> = (b..2 * b).collect();
        let deepest = *pyramid.last().expect("stages");
        let f_t = g.index_batch(deepest, &tgt);
        let f_r = g.index_batch(deepest, &refs);
        let mut x = self.correlation.forward(g, f_t, f_r, memory)?.output;
        let stages = pyramid.len();
        for (step, conv) in self.decoder.iter().enumerate() {
            let skip = if step + 1 < stages { g.index_batch(pyramid[stages - 2 - step], &tgt) } else { target };
            let (_, _, sh, sw) = g.value(skip).dims4();
            let up = g.resize(x, sh, sw);
            let cat = g.concat_channels(&[up, skip]);
            let y = conv.forward(g, cat);
            x = g.relu(y);
        }
        Ok(self.head.forward(g, x))
    }

    /// Propagated trimap for `target` from a labelled `reference` frame.
    pub fn propagate<T: Real>(&self, params: &ParamStore<T>, reference: (&RgbImage, &Trimap), target: &RgbImage) -> Result<Trimap> {
        let (img, tri) = reference;
        if img.height() != target.height() || img.width() != target.width() {
            return Err(invalid!("reference {}x{} and target {}x{} differ in size", img.height(), img.width(), target.height(), target.width()));
        }
        let mut g = Graph::new(params);
        let r = g.constant(stack_rgb_trimap(&[(img, tri)])?.cast());
        let t = g.constant(stack_rgb(&[target]).cast());
        let logits = self.forward(&mut g, r, t)?;
        Ok(argmax_trimap(g.value(logits).item(0), target.height(), target.width()))
    }
}

/// Per-pixel argmax over a `[3, H, W]` block of class scores.
pub fn argmax_trimap<T: Real>(scores: &[T], h: usize, w: usize) -> Trimap {
    let p = h * w;
    let data = (0..p)
        .map(|i| {
            let mut best = 0;
            for k in 1..3 {
                if scores[k * p + i] > scores[best * p + i] {
                    best = k;
                }
            }
            TrimapClass::from_index(best).expect("three classes")
        })
        .collect();
    Trimap::new(h, w, data).expect("argmax trimap size")
}

/// Nearest labelled frame to `t`; ties go to the earlier frame.
pub fn pick_reference(t: usize, labeled: &[usize]) -> Result<usize> {
    labeled
        .iter()
        .copied()
        .min_by_key(|&r| (r.abs_diff(t), r))
        .ok_or_else(|| Error::InvalidInput("no labelled frames to propagate from".into()))
}

/// Fraction of pixels on which two trimaps agree.
pub fn pixel_agreement(a: &Trimap, b: &Trimap) -> f64 {
    let same = a.data().iter().zip(b.data()).filter(|(x, y)| x == y).count();
    same as f64 / a.data().len().max(1) as f64
}
