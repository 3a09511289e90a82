//! Residual pyramid encoders shared by the propagation and matting networks.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::nn::{BottleneckBlock, Conv2d, ConvSpec, ParamStore, ResidualBlock};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Paper => "paper",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub preset: Preset,
    pub in_channels: usize,
    pub widths: Vec<usize>,
    /// Resolution reduction of each stage.
    pub strides: Vec<usize>,
    pub blocks: Vec<usize>,
    pub block: BlockKind,
    /// Width of a 7×7 stride-2 stem convolution ahead of the first stage.
    pub stem: Option<usize>,
}

impl EncoderConfig {
    /// Four single-block stages of widths (16, 32, 64, 128), stride 16.
    pub fn toy(in_channels: usize) -> Self {
        Self::narrow(in_channels, &[16, 32, 64, 128])
    }

    /// One stride-2 basic block per stage with the given widths.
    pub fn narrow(in_channels: usize, widths: &[usize]) -> Self {
        Self {
            preset: Preset::Toy,
            in_channels,
            widths: widths.to_vec(),
            strides: alloc::vec![2; widths.len()],
            blocks: alloc::vec![1; widths.len()],
            block: BlockKind::Basic,
            stem: None,
        }
    }

    /// ResNet-50 stage geometry (bottleneck blocks 3-4-6-3), stride 32.
    pub fn resnet50(in_channels: usize) -> Self {
        Self {
            preset: Preset::Paper,
            in_channels,
            widths: alloc::vec![256, 512, 1024, 2048],
            strides: alloc::vec![4, 2, 2, 2],
            blocks: alloc::vec![3, 4, 6, 3],
            block: BlockKind::Bottleneck,
            stem: Some(64),
        }
    }

    /// ResNet-34 stage geometry (basic blocks 3-4-6-3), stride 32.
    pub fn resnet34(in_channels: usize) -> Self {
        Self {
            preset: Preset::Paper,
            in_channels,
            widths: alloc::vec![64, 128, 256, 512],
            strides: alloc::vec![4, 2, 2, 2],
            blocks: alloc::vec![3, 4, 6, 3],
            block: BlockKind::Basic,
            stem: Some(64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.widths.len();
        if s < 2 {
            return Err(Error::Config(format!("encoder needs at least two stages, got {s}")));
        }
        if self.strides.len() != s || self.blocks.len() != s {
            return Err(Error::Config("encoder widths, strides and blocks must have equal length".into()));
        }
        if self.in_channels == 0 || self.widths.contains(&0) || self.blocks.contains(&0) {
            return Err(Error::Config("encoder widths, blocks and input channels must be positive".into()));
        }
        if self.block == BlockKind::Bottleneck && self.widths.iter().any(|w| w % 4 != 0) {
            return Err(Error::Config("bottleneck widths must be multiples of 4".into()));
        }
        for (i, &st) in self.strides.iter().enumerate() {
            let ok = match (i, self.stem) {
                (0, Some(_)) => st == 2 || st == 4,
                _ => st == 1 || st == 2,
            };
            if !ok {
                return Err(Error::Config(format!("unsupported stride {st} at stage {i}")));
            }
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Spatial size of every stage output for an input divisible by the total stride.
    pub fn stage_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut acc = 1;
        self.strides
            .iter()
            .map(|s| {
                acc *= s;
                (h / acc, w / acc)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Block {
    Basic(ResidualBlock),
    Bottleneck(BottleneckBlock),
}

impl Block {
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match self {
            Block::Basic(b) => b.forward(g, x),
            Block::Bottleneck(b) => b.forward(g, x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    stem: Option<Conv2d>,
    stages: Vec<Vec<Block>>,
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = config
            .stem
            .map(|w| ConvSpec::new(config.in_channels, w, 7).stride(2).build(store, &format!("{name}.stem"), rng));
        let mut cin = config.stem.unwrap_or(config.in_channels);
        let mut stages = Vec::with_capacity(config.widths.len());
        for (s, (&width, &count)) in config.widths.iter().zip(&config.blocks).enumerate() {
            let first_stride = if s == 0 && config.stem.is_some() { config.strides[0] / 2 } else { config.strides[s] };
            let blocks = (0..count)
                .map(|b| {
                    let bname = format!("{name}.stage{s}.block{b}");
                    let stride = if b == 0 { first_stride } else { 1 };
                    let bin = if b == 0 { cin } else { width };
                    match config.block {
                        BlockKind::Basic => Block::Basic(ResidualBlock::new(store, &bname, bin, width, stride, rng)),
                        BlockKind::Bottleneck => Block::Bottleneck(BottleneckBlock::new(store, &bname, bin, width, stride, rng)),
                    }
                })
                .collect();
            stages.push(blocks);
            cin = width;
        }
        Ok(Self { config: config.clone(), stem, stages })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Zeroes the weights reading input channel `channel` in every layer that consumes the raw input.
    pub fn zero_input_channel<T: Real>(&self, store: &mut ParamStore<T>, channel: usize) {
        let names: Vec<_> = store.ids().filter(|&id| is_input_layer(store.name(id))).collect();
        for id in names {
            let t = store.get_mut(id);
            let (co, ci, kh, kw) = t.dims4();
            if ci != self.config.in_channels || channel >= ci {
                continue;
            }
            for o in 0..co {
                let start = (o * ci + channel) * kh * kw;
                t.data_mut()[start..start + kh * kw].fill(T::zero());
            }
        }
    }

    /// Runs `x[N, C, H, W]` through every stage, finest first.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        let (_, c, h, w) = g.value(x).dims4();
        let s = self.config.total_stride();
        if c != self.config.in_channels {
            return Err(invalid!("encoder expects {} input channels, got {c}", self.config.in_channels));
        }
        if h % s != 0 || w % s != 0 || h == 0 || w == 0 {
            return Err(invalid!("input {h}x{w} is not a positive multiple of the encoder stride {s}"));
        }
        let mut x = match &self.stem {
            Some(stem) => {
                let y = stem.forward(g, x);
                g.relu(y)
            }
            None => x,
        };
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in stage {
                x = block.forward(g, x);
            }
            out.push(x);
        }
        Ok(out)
    }
}

fn is_input_layer(name: &str) -> bool {
    name.ends_with(".stem.weight")
        || name.ends_with(".stage0.block0.conv1.weight")
        || name.ends_with(".stage0.block0.reduce.weight")
        || name.ends_with(".stage0.block0.shortcut.weight")
}
