//! Spatio-temporal feature aggregation for decoder skip connections.
//!
//! Alignment warps every frame of a `2n + 1` feature stack towards the
//! target (index `n`) with a deformable convolution whose offsets come from a
//! per-displacement head over `concat(F_t, F_{t+Δt})`. Fusion concatenates the
//! aligned stack, applies channel attention `sigmoid(FC(GAP(x)))` and spatial
//! attention, reduces channels with a 1×1 convolution and finishes with a
//! global convolution (`k×1∘1×k + 1×k∘k×1`).
//!
//! [`SkipFusion`] also provides the two alternative fusion networks used in
//! comparisons: plain stacked 3×3 convolutions and cross-attention.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::nn::{Conv2d, ConvSpec, Init, ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::trimap_prop::Correlation;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpatialAttention {
    /// `sigmoid(conv3×3(x))`, one weight per location computed from the features.
    Computed,
    /// A free learnable map, resized to the feature size when needed.
    ParameterMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StfamConfig {
    /// Channels of each frame's feature.
    pub channels: usize,
    pub out_channels: usize,
    pub n: usize,
    /// Deformable kernel size (odd).
    pub kernel: usize,
    pub offset_hidden: usize,
    pub global_kernel: usize,
    pub tfa: bool,
    pub tff: bool,
    pub spatial_attention: SpatialAttention,
    /// Size of the learnable map in [`SpatialAttention::ParameterMap`] mode.
    pub map_size: (usize, usize),
}

impl StfamConfig {
    pub fn new(channels: usize, out_channels: usize, n: usize) -> Self {
        Self {
            channels,
            out_channels,
            n,
            kernel: 3,
            offset_hidden: channels.min(64),
            global_kernel: 7,
            tfa: true,
            tff: true,
            spatial_attention: SpatialAttention::Computed,
            map_size: (8, 8),
        }
    }

    pub fn frames(&self) -> usize {
        2 * self.n + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.out_channels == 0 || self.offset_hidden == 0 {
            return Err(Error::Config("aggregation channel counts must be positive".into()));
        }
        if self.kernel % 2 == 0 || self.global_kernel % 2 == 0 {
            return Err(Error::Config("aggregation kernels must be odd".into()));
        }
        if self.map_size.0 == 0 || self.map_size.1 == 0 {
            return Err(Error::Config("spatial attention map must be non-empty".into()));
        }
        Ok(())
    }
}

/// Checks a `2n + 1` stack of `[B, c, h, w]` features and returns `(B, h, w)`.
pub fn check_stack<T: Real>(g: &Graph<'_, T>, stack: &[Var], n: usize, channels: usize) -> Result<(usize, usize, usize)> {
    if stack.len() != 2 * n + 1 {
        return Err(invalid!("feature stack of {} frames, expected {}", stack.len(), 2 * n + 1));
    }
    let shape = g.shape(stack[0]).to_vec();
    if shape.len() != 4 || shape[1] != channels {
        return Err(invalid!("stack feature {:?} must be [B, {channels}, h, w]", shape));
    }
    if stack.iter().any(|&v| g.shape(v) != &shape[..]) {
        return Err(invalid!("stack features disagree in shape"));
    }
    Ok((shape[0], shape[2], shape[3]))
}

#[derive(Clone, Debug)]
pub struct OffsetHead {
    pub hidden: Conv2d,
    /// Zero-initialised so alignment starts as the identity.
    pub output: Conv2d,
}

impl OffsetHead {
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, target: Var, neighbor: Var) -> Var {
        let x = g.concat_channels(&[target, neighbor]);
        let h = self.hidden.forward(g, x);
        let h = g.relu(h);
        self.output.forward(g, h)
    }
}

/// Global convolution: two separable `k×1`/`1×k` branches, summed.
#[derive(Clone, Debug)]
pub struct GlobalConv {
    pub vertical_first: (Conv2d, Conv2d),
    pub horizontal_first: (Conv2d, Conv2d),
}

impl GlobalConv {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, k: usize, rng: &mut R) -> Self {
        let conv = |store: &mut ParamStore<T>, rng: &mut R, tag: &str, kh: usize, kw: usize| {
            ConvSpec::new(c, c, 1).rect(kh, kw).init(Init::Xavier).build(store, &format!("{name}.{tag}"), rng)
        };
        let a1 = conv(store, rng, "v1", k, 1);
        let a2 = conv(store, rng, "v2", 1, k);
        let b1 = conv(store, rng, "h1", 1, k);
        let b2 = conv(store, rng, "h2", k, 1);
        Self { vertical_first: (a1, a2), horizontal_first: (b1, b2) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let a = self.vertical_first.0.forward(g, x);
        let a = self.vertical_first.1.forward(g, a);
        let b = self.horizontal_first.0.forward(g, x);
        let b = self.horizontal_first.1.forward(g, b);
        g.add(a, b)
    }
}

#[derive(Clone, Debug)]
pub enum SpatialWeights {
    Conv(Conv2d),
    Map(ParamId),
}

#[derive(Clone, Debug)]
pub struct Tff {
    /// Fully connected layer on the pooled descriptor, as a 1×1 convolution.
    pub channel_fc: Conv2d,
    pub spatial: SpatialWeights,
    pub reduce: Conv2d,
    pub global: GlobalConv,
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Attention(Tff),
    /// Channel concatenation followed by a 1×1 convolution.
    Basic(Conv2d),
}

pub struct FuseOutput {
    pub output: Var,
    /// `[B, C, 1, 1]`
    pub channel_attention: Option<Var>,
    /// `[B, 1, h, w]`
    pub spatial_attention: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Stfam {
    config: StfamConfig,
    /// One head per displacement `Δt = -n..=n`, or none when alignment is off.
    pub heads: Vec<OffsetHead>,
    /// Deformable kernel shared by all displacements.
    pub align_weight: Option<ParamId>,
    pub align_bias: Option<ParamId>,
    pub fusion: Fusion,
}

impl Stfam {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, config: &StfamConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let k = config.kernel;
        let (mut heads, mut align_weight, mut align_bias) = (Vec::new(), None, None);
        if config.tfa {
            for i in 0..config.frames() {
                let hidden = ConvSpec::new(2 * c, config.offset_hidden, 3).build(store, &format!("{name}.offset{i}.hidden"), rng);
                let output = ConvSpec::new(config.offset_hidden, 2 * k * k, 3)
                    .init(Init::Zeros)
                    .build(store, &format!("{name}.offset{i}.output"), rng);
                heads.push(OffsetHead { hidden, output });
            }
            let w = ConvSpec::new(c, c, k).init(Init::Xavier).build(store, &format!("{name}.align"), rng);
            align_weight = Some(w.weight);
            align_bias = w.bias;
        }
        let total = c * config.frames();
        let fusion = if config.tff {
            let channel_fc = ConvSpec::new(total, total, 1).init(Init::Xavier).build(store, &format!("{name}.channel_fc"), rng);
            let spatial = match config.spatial_attention {
                SpatialAttention::Computed => {
                    SpatialWeights::Conv(ConvSpec::new(total, 1, 3).init(Init::Xavier).build(store, &format!("{name}.spatial"), rng))
                }
                SpatialAttention::ParameterMap => {
                    let (mh, mw) = config.map_size;
                    SpatialWeights::Map(store.add(format!("{name}.spatial_map"), Tensor::zeros(&[1, 1, mh, mw])))
                }
            };
            let reduce = ConvSpec::new(total, config.out_channels, 1).init(Init::Xavier).build(store, &format!("{name}.reduce"), rng);
            let global = GlobalConv::new(store, &format!("{name}.global"), config.out_channels, config.global_kernel, rng);
            Fusion::Attention(Tff { channel_fc, spatial, reduce, global })
        } else {
            Fusion::Basic(ConvSpec::new(total, config.out_channels, 1).init(Init::Xavier).build(store, &format!("{name}.basic"), rng))
        };
        Ok(Self { config: config.clone(), heads, align_weight, align_bias, fusion })
    }

    pub fn config(&self) -> &StfamConfig {
        &self.config
    }

    /// Offsets predicted for displacement slot `i` (target is slot `n`).
    pub fn offsets<T: Real>(&self, g: &mut Graph<'_, T>, stack: &[Var], i: usize) -> Result<Var> {
        check_stack(g, stack, self.config.n, self.config.channels)?;
        let head = self.heads.get(i).ok_or_else(|| invalid!("no offset head for slot {i}"))?;
        Ok(head.forward(g, stack[self.config.n], stack[i]))
    }

    /// Aligns every frame of the stack to the target; identity when alignment is off.
    pub fn align<T: Real>(&self, g: &mut Graph<'_, T>, stack: &[Var]) -> Result<Vec<Var>> {
        check_stack(g, stack, self.config.n, self.config.channels)?;
        let Some(weight) = self.align_weight else {
            return Ok(stack.to_vec());
        };
        let target = stack[self.config.n];
        let mut out = Vec::with_capacity(stack.len());
        for (head, &f) in self.heads.iter().zip(stack) {
            let offsets = head.forward(g, target, f);
            let w = g.param(weight);
            let b = self.align_bias.map(|b| g.param(b));
            out.push(g.deform_conv2d(f, offsets, w, b)?);
        }
        Ok(out)
    }

    pub fn fuse<T: Real>(&self, g: &mut Graph<'_, T>, aligned: &[Var]) -> Result<FuseOutput> {
        self.fuse_with(g, aligned, false)
    }

    /// Fusion with the option of replacing both attention maps by ones.
    pub fn fuse_with<T: Real>(&self, g: &mut Graph<'_, T>, aligned: &[Var], unit_attention: bool) -> Result<FuseOutput> {
        let (b, h, w) = check_stack(g, aligned, self.config.n, self.config.channels)?;
        let x = g.concat_channels(aligned);
        let tff = match &self.fusion {
            Fusion::Basic(conv) => {
                return Ok(FuseOutput { output: conv.forward(g, x), channel_attention: None, spatial_attention: None });
            }
            Fusion::Attention(tff) => tff,
        };
        let (mut x, mut ca, mut sa) = (x, None, None);
        if !unit_attention {
            let pooled = g.global_avg_pool(x);
            let fc = tff.channel_fc.forward(g, pooled);
            let a_c = g.sigmoid(fc);
            x = g.mul_channels(x, a_c);
            let logits = match &tff.spatial {
                SpatialWeights::Conv(conv) => conv.forward(g, x),
                &SpatialWeights::Map(id) => {
                    let mut m = g.param(id);
                    if g.shape(m)[2..] != [h, w] {
                        m = g.resize(m, h, w);
                    }
                    g.index_batch(m, &alloc::vec![0; b])
                }
            };
            let a_s = g.sigmoid(logits);
            x = g.mul_spatial(x, a_s);
            ca = Some(a_c);
            sa = Some(a_s);
        }
        let reduced = tff.reduce.forward(g, x);
        let output = tff.global.forward(g, reduced);
        Ok(FuseOutput { output, channel_attention: ca, spatial_attention: sa })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, stack: &[Var]) -> Result<Var> {
        let aligned = self.align(g, stack)?;
        Ok(self.fuse(g, &aligned)?.output)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    Stfam,
    Naive,
    CrossAttention,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Stfam, FusionKind::Naive, FusionKind::CrossAttention];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Stfam => "stfam",
            FusionKind::Naive => "naive",
            FusionKind::CrossAttention => "cross-attention",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown fusion variant `{name}`")))
    }
}

/// Channel concatenation followed by three 3×3 convolutions.
#[derive(Clone, Debug)]
pub struct NaiveFusion {
    n: usize,
    channels: usize,
    pub convs: [Conv2d; 3],
}

impl NaiveFusion {
    /// Sets the convolutions so the target frame's channels pass straight through.
    pub fn set_identity<T: Real>(&self, store: &mut ParamStore<T>) {
        self.convs[0].set_identity(store, self.n * self.channels);
        self.convs[1].set_identity(store, 0);
        self.convs[2].set_identity(store, 0);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, stack: &[Var]) -> Result<Var> {
        check_stack(g, stack, self.n, self.channels)?;
        let x = g.concat_channels(stack);
        let x = self.convs[0].forward(g, x);
        let x = g.relu(x);
        let x = self.convs[1].forward(g, x);
        let x = g.relu(x);
        Ok(self.convs[2].forward(g, x))
    }
}

/// Each neighbour is matched to the target by the correlation layer; the
/// enhanced features are concatenated with the target and reduced by a 1×1 convolution.
#[derive(Clone, Debug)]
pub struct CrossAttentionFusion {
    n: usize,
    channels: usize,
    pub correlation: Correlation,
    pub reduce: Conv2d,
}

impl CrossAttentionFusion {
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, stack: &[Var]) -> Result<Var> {
        check_stack(g, stack, self.n, self.channels)?;
        let target = stack[self.n];
        let mut parts = Vec::with_capacity(stack.len());
        for (i, &f) in stack.iter().enumerate() {
            parts.push(if i == self.n { target } else { self.correlation.forward(g, target, f, f)?.output });
        }
        let x = g.concat_channels(&parts);
        Ok(self.reduce.forward(g, x))
    }
}

/// Any of the interchangeable skip-connection aggregators.
#[derive(Clone, Debug)]
pub enum SkipFusion {
    Stfam(Stfam),
    Naive(NaiveFusion),
    CrossAttention(CrossAttentionFusion),
}

impl SkipFusion {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, kind: FusionKind, config: &StfamConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (c, out, total) = (config.channels, config.out_channels, config.channels * config.frames());
        Ok(match kind {
            FusionKind::Stfam => SkipFusion::Stfam(Stfam::new(store, name, config, rng)?),
            FusionKind::Naive => SkipFusion::Naive(NaiveFusion {
                n: config.n,
                channels: c,
                convs: [
                    ConvSpec::new(total, out, 3).init(Init::Xavier).build(store, &format!("{name}.naive0"), rng),
                    ConvSpec::new(out, out, 3).init(Init::Xavier).build(store, &format!("{name}.naive1"), rng),
                    ConvSpec::new(out, out, 3).init(Init::Xavier).build(store, &format!("{name}.naive2"), rng),
                ],
            }),
            FusionKind::CrossAttention => SkipFusion::CrossAttention(CrossAttentionFusion {
                n: config.n,
                channels: c,
                correlation: Correlation::new(store, &format!("{name}.correlation"), c, rng),
                reduce: ConvSpec::new(total, out, 1).init(Init::Xavier).build(store, &format!("{name}.reduce"), rng),
            }),
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            SkipFusion::Stfam(_) => FusionKind::Stfam,
            SkipFusion::Naive(_) => FusionKind::Naive,
            SkipFusion::CrossAttention(_) => FusionKind::CrossAttention,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, stack: &[Var]) -> Result<Var> {
        match self {
            SkipFusion::Stfam(m) => m.forward(g, stack),
            SkipFusion::Naive(m) => m.forward(g, stack),
            SkipFusion::CrossAttention(m) => m.forward(g, stack),
        }
    }
}
