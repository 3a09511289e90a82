//! Frame, matte and trimap containers.
//!
//! Colour images are stored planar (`[3, H, W]`), values in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width || height == 0 || width == 0 {
            return Err(invalid!("rgb buffer of {} values for {}x{}", data.len(), height, width));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(core::iter::repeat(c).take(height * width));
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[1, 3, self.height, self.width], self.data.clone()).expect("rgb tensor")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl AlphaMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(invalid!("alpha buffer of {} values for {}x{}", data.len(), height, width));
        }
        if data.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid!("alpha values must lie in [0, 1]"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value.clamp(0.0, 1.0); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access; callers must keep values inside `[0, 1]`.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum TrimapClass {
    Background = 0,
    Unknown = 1,
    Foreground = 2,
}

impl TrimapClass {
    pub const ALL: [TrimapClass; 3] = [TrimapClass::Background, TrimapClass::Unknown, TrimapClass::Foreground];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Network input encoding `{0, 0.5, 1}`.
    pub fn input_value(self) -> f32 {
        self as u8 as f32 * 0.5
    }

    /// 8-bit image encoding `{0, 128, 255}`.
    pub fn gray(self) -> u8 {
        match self {
            TrimapClass::Background => 0,
            TrimapClass::Unknown => 128,
            TrimapClass::Foreground => 255,
        }
    }

    pub fn from_gray(v: u8) -> Option<Self> {
        match v {
            0 => Some(TrimapClass::Background),
            128 => Some(TrimapClass::Unknown),
            255 => Some(TrimapClass::Foreground),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trimap {
    height: usize,
    width: usize,
    data: Vec<TrimapClass>,
}

impl Trimap {
    pub fn new(height: usize, width: usize, data: Vec<TrimapClass>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(invalid!("trimap buffer of {} values for {}x{}", data.len(), height, width));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: TrimapClass) -> Self {
        Self { height, width, data: vec![class; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[TrimapClass] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> TrimapClass {
        self.data[y * self.width + x]
    }

    pub fn unknown_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&c| c == TrimapClass::Unknown).collect()
    }

    pub fn count(&self, class: TrimapClass) -> usize {
        self.data.iter().filter(|&&c| c == class).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.data.iter().map(|&c| c as u8).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: Vec<RgbImage>,
    pub fps: Option<f64>,
}

impl Clip {
    pub fn new(frames: Vec<RgbImage>, fps: Option<f64>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| invalid!("clip needs at least one frame"))?;
        let (h, w) = (first.height, first.width);
        if frames.iter().any(|f| f.height != h || f.width != w) {
            return Err(invalid!("clip frames must share one size"));
        }
        if frames.iter().any(|f| f.data.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(invalid!("clip values must lie in [0, 1]"));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaClip {
    frames: Vec<AlphaMap>,
}

impl AlphaClip {
    pub fn new(frames: Vec<AlphaMap>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| invalid!("alpha clip needs at least one frame"))?;
        if frames.iter().any(|f| f.height != first.height || f.width != first.width) {
            return Err(invalid!("alpha frames must share one size"));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[AlphaMap] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }
}

/// Per-pixel displacement from one frame to the next, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap {
    height: usize,
    width: usize,
    /// Interleaved `(dx, dy)` pairs, row-major.
    data: Vec<f32>,
}

impl FlowMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 2 * height * width {
            return Err(invalid!("flow buffer of {} values for {}x{}", data.len(), height, width));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `(dx, dy)` at pixel `(y, x)`.
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }
}

/// One [`FlowMap`] per consecutive frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    pub pairs: Vec<FlowMap>,
}

/// Stacks a slice of images into a `[N, 3, H, W]` tensor.
pub fn stack_rgb(frames: &[&RgbImage]) -> Tensor<f32> {
    let (h, w) = (frames[0].height, frames[0].width);
    let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
    for f in frames {
        data.extend_from_slice(&f.data);
    }
    Tensor::from_vec(&[frames.len(), 3, h, w], data).expect("stack shape")
}

/// Stacks image + trimap pairs into a `[N, 4, H, W]` tensor.
pub fn stack_rgb_trimap(frames: &[(&RgbImage, &Trimap)]) -> Result<Tensor<f32>> {
    let (h, w) = (frames[0].0.height, frames[0].0.width);
    let mut data = Vec::with_capacity(frames.len() * 4 * h * w);
    for (img, tri) in frames {
        if img.height != h || img.width != w || tri.height != h || tri.width != w {
            return Err(invalid!("image {}x{} and trimap {}x{} sizes disagree", img.height, img.width, tri.height, tri.width));
        }
        data.extend_from_slice(&img.data);
        data.extend(tri.data.iter().map(|c| c.input_value()));
    }
    Ok(Tensor::from_vec(&[frames.len(), 4, h, w], data).expect("stack shape"))
}
