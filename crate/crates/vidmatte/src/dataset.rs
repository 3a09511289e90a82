//! On-disk synthetic datasets: one directory per sample holding PNG
//! sequences, motion files and a JSON manifest, plus a dataset manifest.

use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use vidmatte_core::compositor::{self, AffinePose, AffineTrack, CompositeSample, Foreground, SynthesisConfig, TrackConfig};
use vidmatte_core::image::{AlphaClip, AlphaMap, Clip, MotionField, RgbImage};
use vidmatte_core::procedural::{background_clip, blob_foreground};
use vidmatte_core::rng::derive_rng;

use crate::error::{Error, Result};
use crate::motion::{motion_name, read_flow, write_flow};
use crate::pngio::{frame_name, list_frames, read_alpha, read_rgb, write_alpha8, write_rgb};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub tx: f64,
    pub ty: f64,
    pub rotation: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub max_translation_speed: f64,
    pub max_rotation_speed: f64,
    pub max_scale_speed: f64,
    pub scale_range: [f64; 2],
    pub keyframe_interval: usize,
    pub initial_jitter: f64,
    pub poses: Vec<PoseRecord>,
}

/// Per-sample manifest; paths are relative to the sample directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub version: u32,
    pub seed: u64,
    pub index: u64,
    pub fg_mode: String,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub composite: Vec<String>,
    pub foreground: Vec<String>,
    pub background: Vec<String>,
    pub alpha: Vec<String>,
    pub motion: Vec<String>,
    pub track: TrackRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub fg_mode: String,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Sample manifests relative to the dataset directory.
    pub samples: Vec<String>,
}

/// Where foregrounds and backgrounds come from.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    /// `(image, matte)` file pairs; procedural blobs when empty.
    pub foregrounds: Vec<(PathBuf, PathBuf)>,
    /// Frame sequences; procedural backgrounds when empty.
    pub backgrounds: Vec<Vec<PathBuf>>,
}

impl Sources {
    pub fn fg_mode(&self) -> &'static str {
        if self.foregrounds.is_empty() {
            "procedural"
        } else {
            "files"
        }
    }

    /// Foreground pairs from a directory of `<name>.png` images with `<name>_alpha.png` mattes.
    pub fn foregrounds_from_dir(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
        let mut pairs = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if path.extension().and_then(|e| e.to_str()) != Some("png") || stem.ends_with("_alpha") {
                continue;
            }
            let matte = dir.join(format!("{stem}_alpha.png"));
            if matte.exists() {
                pairs.push((path, matte));
            }
        }
        pairs.sort();
        if pairs.is_empty() {
            return Err(Error::format(dir, "no <name>.png / <name>_alpha.png pairs"));
        }
        Ok(pairs)
    }

    /// Background clips from the frame sequences in `dir` and its immediate subdirectories.
    pub fn backgrounds_from_dir(dir: &Path) -> Result<Vec<Vec<PathBuf>>> {
        let mut clips = Vec::new();
        if let Ok(frames) = list_frames(dir) {
            clips.push(frames);
        }
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            if let Ok(frames) = list_frames(&sub) {
                clips.push(frames);
            }
        }
        if clips.is_empty() {
            return Err(Error::format(dir, "no frame sequences found"));
        }
        Ok(clips)
    }
}

fn load_clip(paths: &[PathBuf], frames: usize, h: usize, w: usize) -> Result<Clip> {
    if paths.len() < frames {
        return Err(Error::Usage(format!("background clip has {} frames, {} needed", paths.len(), frames)));
    }
    let imgs = paths[..frames].iter().map(|p| check_size(p, read_rgb(p)?, h, w)).collect::<Result<Vec<_>>>()?;
    Ok(Clip::new(imgs, None)?)
}

fn check_size(path: &Path, img: RgbImage, h: usize, w: usize) -> Result<RgbImage> {
    if img.height() != h || img.width() != w {
        return Err(Error::format(path, format!("image is {}x{}, expected {h}x{w}", img.height(), img.width())));
    }
    Ok(img)
}

/// Sample `index` of the dataset keyed by `seed`; independent of generation order.
pub fn synthesize_sample(cfg: &SynthesisConfig, sources: &Sources, seed: u64, index: u64) -> Result<CompositeSample> {
    if sources.foregrounds.is_empty() && sources.backgrounds.is_empty() {
        return Ok(compositor::synthesize_procedural(cfg, seed, index)?);
    }
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = derive_rng(seed, index.wrapping_mul(4).wrapping_add(2));
    let (rgb, alpha) = if sources.foregrounds.is_empty() {
        blob_foreground(h, w, &cfg.blob, &mut rng)
    } else {
        let (img, matte) = &sources.foregrounds[index as usize % sources.foregrounds.len()];
        let rgb = check_size(img, read_rgb(img)?, h, w)?;
        let alpha = read_alpha(matte)?;
        if alpha.height() != h || alpha.width() != w {
            return Err(Error::format(matte, format!("matte is {}x{}, expected {h}x{w}", alpha.height(), alpha.width())));
        }
        (rgb, alpha)
    };
    let bg = if sources.backgrounds.is_empty() {
        background_clip(h, w, cfg.frames, &mut rng)?
    } else {
        load_clip(&sources.backgrounds[index as usize % sources.backgrounds.len()], cfg.frames, h, w)?
    };
    let track_seed = rng.next_u64();
    let track = compositor::generate_track(cfg.frames, &cfg.track, track_seed)?;
    Ok(compositor::synthesize(Foreground::Image { rgb: &rgb, alpha: &alpha }, &bg, &track, cfg.quantize_8bit)?)
}

pub fn sample_dir_name(index: u64) -> String {
    format!("sample_{index:05}")
}

fn names(prefix: &str, count: usize, name: fn(usize) -> String) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}/{}", name(i))).collect()
}

/// Writes one sample into `dir` and returns its manifest.
pub fn write_sample(dir: &Path, sample: &CompositeSample, cfg: &SynthesisConfig, seed: u64, index: u64, fg_mode: &str) -> Result<SampleManifest> {
    let frames = sample.len();
    let manifest = SampleManifest {
        version: MANIFEST_VERSION,
        seed,
        index,
        fg_mode: fg_mode.to_string(),
        height: sample.composite.height(),
        width: sample.composite.width(),
        frames,
        composite: names("composite", frames, frame_name),
        foreground: names("foreground", frames, frame_name),
        background: names("background", frames, frame_name),
        alpha: names("alpha", frames, frame_name),
        motion: names("motion", frames.saturating_sub(1), motion_name),
        track: TrackRecord {
            max_translation_speed: cfg.track.max_translation_speed,
            max_rotation_speed: cfg.track.max_rotation_speed,
            max_scale_speed: cfg.track.max_scale_speed,
            scale_range: [cfg.track.scale_range.0, cfg.track.scale_range.1],
            keyframe_interval: cfg.track.keyframe_interval,
            initial_jitter: cfg.track.initial_jitter,
            poses: sample.track.poses.iter().map(|p| PoseRecord { tx: p.tx, ty: p.ty, rotation: p.rotation, scale: p.scale }).collect(),
        },
    };
    for sub in ["composite", "foreground", "background", "alpha", "motion"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for t in 0..frames {
        write_rgb(&dir.join(&manifest.composite[t]), &sample.composite.frames()[t])?;
        write_rgb(&dir.join(&manifest.foreground[t]), &sample.fg.frames()[t])?;
        write_rgb(&dir.join(&manifest.background[t]), &sample.bg.frames()[t])?;
        write_alpha8(&dir.join(&manifest.alpha[t]), &sample.alpha.frames()[t])?;
    }
    for (p, flow) in sample.motion.pairs.iter().enumerate() {
        write_flow(&dir.join(&manifest.motion[p]), flow)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

impl SampleManifest {
    pub fn validate(&self, path: &Path) -> Result<()> {
        let bad = |msg: String| Err(Error::format(path, msg));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported manifest version {}", self.version));
        }
        if self.frames == 0 {
            return bad("sample has no frames".into());
        }
        for (name, list, want) in [
            ("composite", &self.composite, self.frames),
            ("foreground", &self.foreground, self.frames),
            ("background", &self.background, self.frames),
            ("alpha", &self.alpha, self.frames),
            ("motion", &self.motion, self.frames - 1),
        ] {
            if list.len() != want {
                return bad(format!("`{name}` lists {} files, expected {want}", list.len()));
            }
        }
        if self.track.poses.len() != self.frames {
            return bad(format!("track has {} poses for {} frames", self.track.poses.len(), self.frames));
        }
        Ok(())
    }

    pub fn track_config(&self) -> TrackConfig {
        let t = &self.track;
        TrackConfig {
            max_translation_speed: t.max_translation_speed,
            max_rotation_speed: t.max_rotation_speed,
            max_scale_speed: t.max_scale_speed,
            scale_range: (t.scale_range[0], t.scale_range[1]),
            keyframe_interval: t.keyframe_interval,
            initial_jitter: t.initial_jitter,
        }
    }
}

/// Loads a sample from the directory containing its manifest.
pub fn load_sample(dir: &Path) -> Result<CompositeSample> {
    let path = dir.join(MANIFEST_FILE);
    let m: SampleManifest = read_json(&path)?;
    m.validate(&path)?;
    let rgb_seq = |list: &[String]| -> Result<Clip> {
        let frames = list.iter().map(|f| check_size(&dir.join(f), read_rgb(&dir.join(f))?, m.height, m.width)).collect::<Result<Vec<_>>>()?;
        Ok(Clip::new(frames, None)?)
    };
    let alpha = m.alpha.iter().map(|f| read_alpha(&dir.join(f))).collect::<Result<Vec<AlphaMap>>>()?;
    let pairs = m.motion.iter().map(|f| read_flow(&dir.join(f))).collect::<Result<Vec<_>>>()?;
    Ok(CompositeSample {
        fg: rgb_seq(&m.foreground)?,
        bg: rgb_seq(&m.background)?,
        alpha: AlphaClip::new(alpha)?,
        composite: rgb_seq(&m.composite)?,
        track: AffineTrack {
            poses: m.track.poses.iter().map(|p| AffinePose { tx: p.tx, ty: p.ty, rotation: p.rotation, scale: p.scale }).collect(),
        },
        motion: MotionField { pairs },
    })
}

/// Loads every sample of a dataset directory, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<CompositeSample>> {
    let path = dir.join(MANIFEST_FILE);
    let m: DatasetManifest = read_json(&path)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(&path, format!("unsupported manifest version {}", m.version)));
    }
    m.samples
        .iter()
        .map(|s| {
            let sample_manifest = dir.join(s);
            let sample_dir = sample_manifest.parent().unwrap_or(dir);
            load_sample(sample_dir)
        })
        .collect()
}
