//! Encoder–decoder alpha prediction over a temporal window.
//!
//! Every frame of the window is encoded from RGB plus its trimap. The decoder
//! starts from the target's deepest feature and at each finer level
//! upsamples by sub-pixel convolution (convolution to `r²·c` channels then
//! depth-to-space), adds the aggregated skip feature of that level's
//! `2n + 1` frame stack and refines with a 3×3 convolution. A final
//! sub-pixel step reaches full resolution, followed by a 3×3 head and sigmoid.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::compositor::window_indices;
use crate::encoder::{Encoder, EncoderConfig, Preset};
use crate::error::{invalid, Error, Result};
use crate::image::{stack_rgb_trimap, AlphaClip, AlphaMap, Clip, Trimap};
use crate::nn::{Conv2d, ConvSpec, Init, ParamStore};
use crate::scalar::Real;
use crate::stfam::{FusionKind, SkipFusion, SpatialAttention, StfamConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MattingConfig {
    pub encoder: EncoderConfig,
    /// Decoder width at each skip level, finest first (one fewer than encoder stages).
    pub decoder_widths: Vec<usize>,
    pub n: usize,
    pub fusion: FusionKind,
    pub tfa: bool,
    pub tff: bool,
    pub spatial_attention: SpatialAttention,
    pub global_kernel: usize,
}

impl MattingConfig {
    pub fn toy(n: usize) -> Self {
        Self::with_encoder(EncoderConfig::toy(4), n)
    }

    /// ResNet-50 encoder geometry with a reduced decoder.
    pub fn paper(n: usize) -> Self {
        let mut c = Self::with_encoder(EncoderConfig::resnet50(4), n);
        c.decoder_widths = alloc::vec![64, 128, 256];
        c
    }

    pub fn for_preset(preset: Preset, n: usize) -> Self {
        match preset {
            Preset::Toy => Self::toy(n),
            Preset::Paper => Self::paper(n),
        }
    }

    /// Decoder widths mirror the encoder widths.
    pub fn with_encoder(encoder: EncoderConfig, n: usize) -> Self {
        let decoder_widths = encoder.widths[..encoder.widths.len().saturating_sub(1)].to_vec();
        Self {
            encoder,
            decoder_widths,
            n,
            fusion: FusionKind::Stfam,
            tfa: true,
            tff: true,
            spatial_attention: SpatialAttention::Computed,
            global_kernel: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.in_channels != 4 {
            return Err(Error::Config("matting encoder takes 4 input channels".into()));
        }
        if self.decoder_widths.len() + 1 != self.encoder.widths.len() || self.decoder_widths.contains(&0) {
            return Err(Error::Config("one positive decoder width per skip level required".into()));
        }
        if self.global_kernel % 2 == 0 {
            return Err(Error::Config("global convolution kernel must be odd".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        2 * self.n + 1
    }

    /// Skip aggregation configuration at decoder level `level`.
    pub fn skip_config(&self, level: usize) -> StfamConfig {
        let mut c = StfamConfig::new(self.encoder.widths[level], self.decoder_widths[level], self.n);
        c.tfa = self.tfa;
        c.tff = self.tff;
        c.spatial_attention = self.spatial_attention;
        c.global_kernel = self.global_kernel;
        c
    }
}

#[derive(Clone, Debug)]
pub struct MattingNet {
    config: MattingConfig,
    pub encoder: Encoder,
    /// Skip aggregators, finest level first.
    pub skips: Vec<SkipFusion>,
    /// Sub-pixel convolutions into each skip level, finest first.
    pub upsample: Vec<Conv2d>,
    pub refine: Vec<Conv2d>,
    pub final_upsample: Conv2d,
    pub head: Conv2d,
}

impl MattingNet {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &MattingConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(store, "matting.encoder", &config.encoder, rng)?;
        encoder.zero_input_channel(store, 3);
        let widths = &config.encoder.widths;
        let strides = &config.encoder.strides;
        let dec = &config.decoder_widths;
        let levels = dec.len();
        let mut skips = Vec::with_capacity(levels);
        let mut upsample = Vec::with_capacity(levels);
        let mut refine = Vec::with_capacity(levels);
        for l in 0..levels {
            skips.push(SkipFusion::new(store, &format!("matting.skip{l}"), config.fusion, &config.skip_config(l), rng)?);
            let cin = if l + 1 == levels { widths[l + 1] } else { dec[l + 1] };
            let r = strides[l + 1];
            upsample.push(ConvSpec::new(cin, r * r * dec[l], 3).init(Init::Xavier).build(store, &format!("matting.up{l}"), rng));
            refine.push(ConvSpec::new(dec[l], dec[l], 3).init(Init::Xavier).build(store, &format!("matting.refine{l}"), rng));
        }
        let r0 = strides[0];
        let final_upsample = ConvSpec::new(dec[0], r0 * r0 * dec[0], 3).init(Init::Xavier).build(store, "matting.up_full", rng);
        let head = ConvSpec::new(dec[0], 1, 3).init(Init::Xavier).build(store, "matting.head", rng);
        Ok(Self { config: config.clone(), encoder, skips, upsample, refine, final_upsample, head })
    }

    pub fn config(&self) -> &MattingConfig {
        &self.config
    }

    /// Feature pyramid of `[N, 4, H, W]` inputs, finest stage first.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, frames: Var) -> Result<Vec<Var>> {
        self.encoder.forward(g, frames)
    }

    /// Alpha `[B, 1, H, W]` for `B` windows. Each window lists the `2n + 1`
    /// batch indices of its frames in the pyramid, target in the middle.
    pub fn decode<T: Real>(&self, g: &mut Graph<'_, T>, pyramid: &[Var], windows: &[Vec<usize>]) -> Result<Var> {
        let n = self.config.n;
        let stages = self.config.encoder.widths.len();
        if pyramid.len() != stages {
            return Err(invalid!("pyramid has {} levels, expected {stages}", pyramid.len()));
        }
        for (l, &v) in pyramid.iter().enumerate() {
            let s = g.shape(v);
            if s.len() != 4 || s[1] != self.config.encoder.widths[l] {
                return Err(invalid!("pyramid level {l} has shape {:?}", s));
            }
            if l > 0 {
                let prev = g.shape(pyramid[l - 1]);
                let r = self.config.encoder.strides[l];
                if prev[0] != s[0] || prev[2] != s[2] * r || prev[3] != s[3] * r {
                    return Err(invalid!("pyramid levels {} and {l} have inconsistent geometry", l - 1));
                }
            }
        }
        let frames = g.shape(pyramid[0])[0];
        if windows.is_empty() || windows.iter().any(|w| w.len() != 2 * n + 1 || w.iter().any(|&i| i >= frames)) {
            return Err(invalid!("every window needs {} frame indices below {frames}", 2 * n + 1));
        }
        let pick = |g: &mut Graph<'_, T>, level: Var, slot: usize| {
            let idx: Vec<usize> = windows.iter().map(|w| w[slot]).collect();
            g.index_batch(level, &idx)
        };
        let mut x = pick(g, pyramid[stages - 1], n);
        for l in (0..stages - 1).rev() {
            let y = self.upsample[l].forward(g, x);
            let up = g.depth_to_space(y, self.config.encoder.strides[l + 1]);
            let stack: Vec<Var> = (0..2 * n + 1).map(|i| pick(g, pyramid[l], i)).collect();
            let skip = self.skips[l].forward(g, &stack)?;
            let sum = g.add(up, skip);
            let y = self.refine[l].forward(g, sum);
            x = g.relu(y);
        }
        let y = self.final_upsample.forward(g, x);
        let y = g.depth_to_space(y, self.config.encoder.strides[0]);
        let y = g.relu(y);
        let logits = self.head.forward(g, y);
        Ok(g.sigmoid(logits))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, frames: Var, windows: &[Vec<usize>]) -> Result<Var> {
        let pyramid = self.encode(g, frames)?;
        self.decode(g, &pyramid, windows)
    }

    /// One alpha matte per frame, windows clamped at the clip ends by frame replication.
    pub fn predict_clip<T: Real>(&self, params: &ParamStore<T>, clip: &Clip, trimaps: &[Trimap]) -> Result<AlphaClip> {
        self.predict_clip_chunked(params, clip, trimaps, 4)
    }

    /// As [`MattingNet::predict_clip`], decoding `chunk` targets per pass.
    pub fn predict_clip_chunked<T: Real>(&self, params: &ParamStore<T>, clip: &Clip, trimaps: &[Trimap], chunk: usize) -> Result<AlphaClip> {
        let len = clip.len();
        if trimaps.len() != len {
            return Err(invalid!("{} trimaps for {len} frames", trimaps.len()));
        }
        let (h, w) = (clip.height(), clip.width());
        let s = self.config.encoder.total_stride();
        let (ph, pw) = (h.div_ceil(s) * s, w.div_ceil(s) * s);
        let n = self.config.n;
        let mut out = Vec::with_capacity(len);
        for start in (0..len).step_by(chunk.max(1)) {
            let targets: Vec<usize> = (start..(start + chunk.max(1)).min(len)).collect();
            let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
            let windows: Vec<Vec<usize>> = targets.iter().map(|&t| window_indices(t, n, n, len)).collect();
            for &f in windows.iter().flatten() {
                let next = slot.len();
                slot.entry(f).or_insert(next);
            }
            let mut order: Vec<(usize, usize)> = slot.iter().map(|(&f, &i)| (i, f)).collect();
            order.sort_unstable();
            let pairs: Vec<_> = order.iter().map(|&(_, f)| (&clip.frames()[f], &trimaps[f])).collect();
            let input = pad_replicate(&stack_rgb_trimap(&pairs)?, ph, pw).cast::<T>();
            let local: Vec<Vec<usize>> = windows.iter().map(|w| w.iter().map(|f| slot[f]).collect()).collect();
            let mut g = Graph::new(params);
            let x = g.constant(input);
            let alpha = self.forward(&mut g, x, &local)?;
            let a = g.value(alpha);
            for b in 0..targets.len() {
                let plane = a.item(b);
                let data = (0..h * w).map(|i| plane[(i / w) * pw + i % w].to_f32().unwrap_or(0.0).clamp(0.0, 1.0)).collect();
                out.push(AlphaMap::new(h, w, data)?);
            }
        }
        AlphaClip::new(out)
    }
}

/// Pads `[N, C, H, W]` on the bottom and right to `oh×ow` by edge replication.
pub fn pad_replicate<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    if (oh, ow) == (h, w) {
        return x.clone();
    }
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for (dst, src) in out.data_mut().chunks_mut(oh * ow).zip(x.data().chunks(h * w)) {
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[y.min(h - 1) * w + xx.min(w - 1)];
            }
        }
    }
    out
}
