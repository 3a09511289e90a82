//! Clip synthesis: moving foregrounds composited over background clips with
//! `I = αF + (1 − α)B`, exact motion vectors derived from the affine track,
//! and the crop-cube augmentation used for training.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::image::{AlphaClip, AlphaMap, Clip, FlowMap, MotionField, RgbImage, Trimap, TrimapClass};
use crate::kernels::{bilinear_sample, resize_bilinear};
use crate::procedural::{background_clip, blob_foreground, BlobConfig};
use crate::rng::derive_rng;
use crate::tensor::Tensor;

/// Longest clip the synthesiser will produce.
pub const MAX_CLIP_FRAMES: usize = 150;

/// `alpha·fg + (1 − alpha)·bg`, clamped to `[0, 1]`.
pub fn composite(fg: &RgbImage, bg: &RgbImage, alpha: &AlphaMap) -> Result<RgbImage> {
    let (h, w) = (fg.height(), fg.width());
    if bg.height() != h || bg.width() != w || alpha.height() != h || alpha.width() != w {
        return Err(invalid!(
            "composite operands disagree: fg {}x{}, bg {}x{}, alpha {}x{}",
            h,
            w,
            bg.height(),
            bg.width(),
            alpha.height(),
            alpha.width()
        ));
    }
    let p = h * w;
    let a = alpha.data();
    let data = fg
        .data()
        .iter()
        .zip(bg.data())
        .enumerate()
        .map(|(i, (&f, &b))| {
            let al = a[i % p];
            (al * f + (1.0 - al) * b).clamp(0.0, 1.0)
        })
        .collect();
    RgbImage::new(h, w, data)
}

/// Pose of the foreground in one frame: rotation and zoom about the canvas
/// centre followed by a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffinePose {
    pub tx: f64,
    pub ty: f64,
    pub rotation: f64,
    pub scale: f64,
}

impl AffinePose {
    pub const IDENTITY: AffinePose = AffinePose { tx: 0.0, ty: 0.0, rotation: 0.0, scale: 1.0 };

    /// Maps a canvas point `(x, y)` to frame coordinates.
    pub fn apply(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let (s, c) = (libm::sin(self.rotation), libm::cos(self.rotation));
        let (dx, dy) = (x - cx, y - cy);
        (cx + self.scale * (c * dx - s * dy) + self.tx, cy + self.scale * (s * dx + c * dy) + self.ty)
    }

    pub fn invert(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let (s, c) = (libm::sin(self.rotation), libm::cos(self.rotation));
        let (dx, dy) = ((x - cx - self.tx) / self.scale, (y - cy - self.ty) / self.scale);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineTrack {
    pub poses: Vec<AffinePose>,
}

impl AffineTrack {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Velocity caps and ranges for [`generate_track`]. Defaults are toy-scale
/// choices, not measurements of any real dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackConfig {
    /// Pixels per frame, per axis.
    pub max_translation_speed: f64,
    /// Radians per frame.
    pub max_rotation_speed: f64,
    /// Scale change per frame.
    pub max_scale_speed: f64,
    pub scale_range: (f64, f64),
    /// Frames between random keyframes.
    pub keyframe_interval: usize,
    /// Largest initial offset from the identity pose, in pixels.
    pub initial_jitter: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            max_translation_speed: 2.0,
            max_rotation_speed: 0.02,
            max_scale_speed: 0.01,
            scale_range: (0.85, 1.15),
            keyframe_interval: 6,
            initial_jitter: 4.0,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(invalid!("scale range must satisfy 0 < min <= max"));
        }
        if self.max_translation_speed < 0.0 || self.max_rotation_speed < 0.0 || self.max_scale_speed < 0.0 {
            return Err(invalid!("velocity caps must be non-negative"));
        }
        if self.keyframe_interval == 0 {
            return Err(invalid!("keyframe interval must be positive"));
        }
        Ok(())
    }
}

/// Smooth random motion: random keyframes reachable within the velocity caps,
/// linearly interpolated in between.
pub fn generate_track(length: usize, cfg: &TrackConfig, seed: u64) -> Result<AffineTrack> {
    if length < 1 {
        return Err(invalid!("track length must be at least 1"));
    }
    cfg.validate()?;
    let mut rng = derive_rng(seed, 0x7ac4);
    let (smin, smax) = cfg.scale_range;
    let j = cfg.initial_jitter;
    let mut key = AffinePose {
        tx: if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 },
        ty: if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 },
        rotation: 0.0,
        scale: 1.0f64.clamp(smin, smax),
    };
    let k = cfg.keyframe_interval;
    let mut poses = Vec::with_capacity(length);
    poses.push(key);
    let sym = |rng: &mut crate::rng::SeededRng, cap: f64| if cap > 0.0 { rng.gen_range(-cap..=cap) } else { 0.0 };
    while poses.len() < length {
        let next = AffinePose {
            tx: key.tx + sym(&mut rng, cfg.max_translation_speed) * k as f64,
            ty: key.ty + sym(&mut rng, cfg.max_translation_speed) * k as f64,
            rotation: key.rotation + sym(&mut rng, cfg.max_rotation_speed) * k as f64,
            scale: (key.scale + sym(&mut rng, cfg.max_scale_speed) * k as f64).clamp(smin, smax),
        };
        for i in 1..=k {
            if poses.len() == length {
                break;
            }
            let f = i as f64 / k as f64;
            poses.push(AffinePose {
                tx: key.tx + (next.tx - key.tx) * f,
                ty: key.ty + (next.ty - key.ty) * f,
                rotation: key.rotation + (next.rotation - key.rotation) * f,
                scale: key.scale + (next.scale - key.scale) * f,
            });
        }
        key = next;
    }
    Ok(AffineTrack { poses })
}

/// Displacement of every frame pixel under `next ∘ current⁻¹`.
pub fn motion_between(current: &AffinePose, next: &AffinePose, h: usize, w: usize) -> FlowMap {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut data = Vec::with_capacity(2 * h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = current.invert(x as f64, y as f64, cx, cy);
            let (nx, ny) = next.apply(sx, sy, cx, cy);
            data.push((nx - x as f64) as f32);
            data.push((ny - y as f64) as f32);
        }
    }
    FlowMap::new(h, w, data).expect("flow size")
}

pub fn motion_field(track: &AffineTrack, h: usize, w: usize) -> MotionField {
    MotionField { pairs: track.poses.windows(2).map(|p| motion_between(&p[0], &p[1], h, w)).collect() }
}

pub enum Foreground<'a> {
    Image { rgb: &'a RgbImage, alpha: &'a AlphaMap },
    Video { clip: &'a Clip, alpha: &'a AlphaClip },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSample {
    pub fg: Clip,
    pub bg: Clip,
    pub alpha: AlphaClip,
    pub composite: Clip,
    pub track: AffineTrack,
    pub motion: MotionField,
}

impl CompositeSample {
    pub fn len(&self) -> usize {
        self.composite.len()
    }

    pub fn is_empty(&self) -> bool {
        self.composite.is_empty()
    }
}

fn quantize(v: f32) -> f32 {
    libm::roundf(v * 255.0) / 255.0
}

/// Warps the foreground along `track` (bilinear, zero outside) and composites
/// it over the first `track.len()` background frames. With `quantize_8bit`
/// the warped foreground, background and matte are snapped to the 8-bit grid
/// before compositing, so an 8-bit export reproduces them exactly.
pub fn synthesize(fg: Foreground<'_>, bg: &Clip, track: &AffineTrack, quantize_8bit: bool) -> Result<CompositeSample> {
    let t_len = track.len();
    if t_len == 0 {
        return Err(invalid!("empty track"));
    }
    if bg.len() < t_len {
        return Err(invalid!("background has {} frames, track needs {}", bg.len(), t_len));
    }
    let (h, w) = (bg.height(), bg.width());
    let frame_src = |t: usize| -> Result<(&RgbImage, &AlphaMap)> {
        match &fg {
            Foreground::Image { rgb, alpha } => Ok((*rgb, *alpha)),
            Foreground::Video { clip, alpha } => {
                if clip.len() < t_len || alpha.len() < t_len {
                    return Err(invalid!("foreground video shorter than track"));
                }
                Ok((&clip.frames()[t], &alpha.frames()[t]))
            }
        }
    };
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let q = |v: f32| if quantize_8bit { quantize(v) } else { v };
    let (mut fgs, mut bgs, mut alphas, mut comps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (t, pose) in track.poses.iter().enumerate() {
        let (src_rgb, src_alpha) = frame_src(t)?;
        if src_rgb.height() != h || src_rgb.width() != w || src_alpha.height() != h || src_alpha.width() != w {
            return Err(invalid!("foreground canvas must match the background size {}x{}", h, w));
        }
        let mut rgb = alloc::vec![0.0f32; 3 * h * w];
        let mut alpha = alloc::vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = pose.invert(x as f64, y as f64, cx, cy);
                let (sy, sx) = (sy as f32, sx as f32);
                let i = y * w + x;
                alpha[i] = q(bilinear_sample(src_alpha.data(), h, w, sy, sx).clamp(0.0, 1.0));
                for c in 0..3 {
                    rgb[c * h * w + i] = q(bilinear_sample(src_rgb.channel(c), h, w, sy, sx).clamp(0.0, 1.0));
                }
            }
        }
        let fg_t = RgbImage::new(h, w, rgb)?;
        let alpha_t = AlphaMap::new(h, w, alpha)?;
        let bg_t = RgbImage::new(h, w, bg.frames()[t].data().iter().map(|&v| q(v)).collect())?;
        comps.push(composite(&fg_t, &bg_t, &alpha_t)?);
        fgs.push(fg_t);
        bgs.push(bg_t);
        alphas.push(alpha_t);
    }
    Ok(CompositeSample {
        fg: Clip::new(fgs, bg.fps)?,
        bg: Clip::new(bgs, bg.fps)?,
        alpha: AlphaClip::new(alphas)?,
        composite: Clip::new(comps, bg.fps)?,
        motion: motion_field(track, h, w),
        track: track.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub track: TrackConfig,
    pub blob: BlobConfig,
    pub quantize_8bit: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { height: 160, width: 160, frames: 24, track: TrackConfig::default(), blob: BlobConfig::default(), quantize_8bit: true }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.frames > MAX_CLIP_FRAMES {
            return Err(invalid!("clip length must be in 1..={MAX_CLIP_FRAMES}"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(invalid!("frames must be at least 8x8"));
        }
        self.track.validate()
    }
}

/// Procedural sample `index` of the dataset keyed by `seed`; independent of
/// the order in which samples are generated.
pub fn synthesize_procedural(cfg: &SynthesisConfig, seed: u64, index: u64) -> Result<CompositeSample> {
    cfg.validate()?;
    let mut rng = derive_rng(seed, index.wrapping_mul(4).wrapping_add(1));
    let (rgb, alpha) = blob_foreground(cfg.height, cfg.width, &cfg.blob, &mut rng);
    let bg = background_clip(cfg.height, cfg.width, cfg.frames, &mut rng)?;
    let track_seed: u64 = rng.gen();
    let track = generate_track(cfg.frames, &cfg.track, track_seed)?;
    synthesize(Foreground::Image { rgb: &rgb, alpha: &alpha }, &bg, &track, cfg.quantize_8bit)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropConfig {
    /// Crop side lengths drawn uniformly before resizing to the output size.
    pub scales: Vec<usize>,
    pub flip_probability: f64,
}

impl CropConfig {
    /// Sides of 1×, 1.5× and 2× the output size.
    pub fn multi_scale(size: usize) -> Self {
        Self { scales: alloc::vec![size, size * 3 / 2, size * 2], flip_probability: 0.5 }
    }
}

/// Aligned crops of a temporal window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingCube {
    pub composite: Vec<RgbImage>,
    pub fg: Vec<RgbImage>,
    pub bg: Vec<RgbImage>,
    pub alpha: Vec<AlphaMap>,
    pub trimaps: Vec<Trimap>,
    /// Source frame of every cube entry after end replication.
    pub frame_indices: Vec<usize>,
    /// Crop centre `(y, x)` in the source frame.
    pub center: (usize, usize),
    pub side: usize,
    pub flipped: bool,
}

impl TrainingCube {
    pub fn len(&self) -> usize {
        self.composite.len()
    }

    pub fn is_empty(&self) -> bool {
        self.composite.is_empty()
    }
}

/// Frame indices `t - before ..= t + after`, clamped to the clip by repeating end frames.
pub fn window_indices(t: usize, before: usize, after: usize, len: usize) -> Vec<usize> {
    (0..before + after + 1).map(|i| (t + i).saturating_sub(before).min(len - 1)).collect()
}

fn crop_planes(planes: &[f32], channels: usize, h: usize, w: usize, top: isize, left: isize, side: usize, size: usize, flip: bool) -> Vec<f32> {
    let mut crop = alloc::vec![0.0f32; channels * side * side];
    for c in 0..channels {
        for y in 0..side {
            let sy = top + y as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..side {
                let sx = left + x as isize;
                if sx >= 0 && sx < w as isize {
                    crop[(c * side + y) * side + x] = planes[(c * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    let t = Tensor::from_vec(&[1, channels, side, side], crop).expect("crop shape");
    let mut out = if side == size { t.into_data() } else { resize_bilinear(&t, size, size).into_data() };
    if flip {
        for row in out.chunks_mut(size) {
            row.reverse();
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

fn crop_trimap(t: &Trimap, top: isize, left: isize, side: usize, size: usize, flip: bool) -> Trimap {
    let (h, w) = (t.height() as isize, t.width() as isize);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let xs = if flip { size - 1 - x } else { x };
            // nearest neighbour with half-pixel centres
            let sy = top + ((y * side + side / 2) / size) as isize;
            let sx = left + ((xs * side + side / 2) / size) as isize;
            data.push(if sy >= 0 && sx >= 0 && sy < h && sx < w { t.get(sy as usize, sx as usize) } else { TrimapClass::Background });
        }
    }
    Trimap::new(size, size, data).expect("trimap crop")
}

/// Crop cube around target frame `target_t` with `n` neighbours on each side.
pub fn crop_cube<R: Rng + ?Sized>(
    sample: &CompositeSample,
    trimaps: &[Trimap],
    target_t: usize,
    n: usize,
    size: usize,
    cfg: &CropConfig,
    rng: &mut R,
) -> Result<TrainingCube> {
    crop_window(sample, trimaps, target_t, n, n, size, cfg, rng)
}

/// Like [`crop_cube`] with an asymmetric window of `before`/`after` neighbours.
#[allow(clippy::too_many_arguments)]
pub fn crop_window<R: Rng + ?Sized>(
    sample: &CompositeSample,
    trimaps: &[Trimap],
    target_t: usize,
    before: usize,
    after: usize,
    size: usize,
    cfg: &CropConfig,
    rng: &mut R,
) -> Result<TrainingCube> {
    let len = sample.len();
    if trimaps.len() != len {
        return Err(invalid!("{} trimaps for {} frames", trimaps.len(), len));
    }
    if len < before + after + 1 {
        return Err(invalid!("clip of {} frames is shorter than a {}-frame window", len, before + after + 1));
    }
    if target_t >= len || size == 0 || cfg.scales.is_empty() || cfg.scales.contains(&0) {
        return Err(invalid!("invalid crop request"));
    }
    let (h, w) = (sample.composite.height(), sample.composite.width());
    let unknown: Vec<usize> =
        trimaps[target_t].data().iter().enumerate().filter(|(_, &c)| c == TrimapClass::Unknown).map(|(i, _)| i).collect();
    if unknown.is_empty() {
        return Err(Error::SkipSample("target frame has no unknown pixels".to_string()));
    }
    let centre = unknown[rng.gen_range(0..unknown.len())];
    let (cy, cx) = (centre / w, centre % w);
    let side = cfg.scales[rng.gen_range(0..cfg.scales.len())];
    let flip = rng.gen_bool(cfg.flip_probability.clamp(0.0, 1.0));
    let place = |c: usize, extent: usize| -> isize {
        let start = c as isize - side as isize / 2;
        if side <= extent {
            start.clamp(0, (extent - side) as isize)
        } else {
            start
        }
    };
    let (top, left) = (place(cy, h), place(cx, w));
    let frame_indices = window_indices(target_t, before, after, len);
    let mut cube = TrainingCube {
        composite: Vec::new(),
        fg: Vec::new(),
        bg: Vec::new(),
        alpha: Vec::new(),
        trimaps: Vec::new(),
        frame_indices: frame_indices.clone(),
        center: (cy, cx),
        side,
        flipped: flip,
    };
    for &t in &frame_indices {
        let f = crop_planes(sample.fg.frames()[t].data(), 3, h, w, top, left, side, size, flip);
        let b = crop_planes(sample.bg.frames()[t].data(), 3, h, w, top, left, side, size, flip);
        let a = crop_planes(sample.alpha.frames()[t].data(), 1, h, w, top, left, side, size, flip);
        let fg = RgbImage::new(size, size, f)?;
        let bg = RgbImage::new(size, size, b)?;
        let alpha = AlphaMap::new(size, size, a)?;
        // Re-composite so the cube satisfies the compositing equation exactly after resampling.
        cube.composite.push(composite(&fg, &bg, &alpha)?);
        cube.fg.push(fg);
        cube.bg.push(bg);
        cube.alpha.push(alpha);
        cube.trimaps.push(crop_trimap(&trimaps[t], top, left, side, size, flip));
    }
    Ok(cube)
}
