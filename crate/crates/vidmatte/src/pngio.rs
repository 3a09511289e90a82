//! PNG reading and writing for frames, mattes and trimaps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use vidmatte_core::image::{AlphaMap, RgbImage, Trimap, TrimapClass};

use crate::error::{Error, Result};

/// Decoded image with every sample scaled to `[0, 1]`, channels interleaved.
struct Decoded {
    height: usize,
    width: usize,
    channels: usize,
    samples: Vec<f32>,
    /// Raw 8-bit samples when the file is 8-bit.
    bytes: Option<Vec<u8>>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    buf.truncate(info.line_size * info.height as usize);
    let channels = info.color_type.samples();
    let (height, width) = (info.height as usize, info.width as usize);
    let row_samples = width * channels;
    let (samples, bytes) = match info.bit_depth {
        BitDepth::Eight => {
            let packed: Vec<u8> = buf.chunks(info.line_size).flat_map(|r| r[..row_samples].iter().copied()).collect();
            (packed.iter().map(|&b| b as f32 / 255.0).collect(), Some(packed))
        }
        BitDepth::Sixteen => {
            let s = buf
                .chunks(info.line_size)
                .flat_map(|r| r[..2 * row_samples].chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0))
                .collect();
            (s, None)
        }
        other => return Err(Error::format(path, format!("unsupported bit depth {other:?}"))),
    };
    Ok(Decoded { height, width, channels, samples, bytes })
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e))?;
    writer.write_image_data(data).map_err(|e| Error::format(path, e))?;
    writer.finish().map_err(|e| Error::format(path, e))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an RGB frame; grey frames are replicated and alpha channels dropped.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let d = decode(path)?;
    let p = d.height * d.width;
    let mut data = vec![0.0; 3 * p];
    for i in 0..p {
        let px = &d.samples[i * d.channels..(i + 1) * d.channels];
        for c in 0..3 {
            data[c * p + i] = if d.channels >= 3 { px[c] } else { px[0] };
        }
    }
    Ok(RgbImage::new(d.height, d.width, data)?)
}

/// Writes an 8-bit RGB frame.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let p = img.height() * img.width();
    let mut bytes = Vec::with_capacity(3 * p);
    for i in 0..p {
        for c in 0..3 {
            bytes.push(to_u8(img.channel(c)[i]));
        }
    }
    encode(path, img.width(), img.height(), ColorType::Rgb, BitDepth::Eight, &bytes)
}

/// Reads a matte from the first channel of an 8- or 16-bit image.
pub fn read_alpha(path: &Path) -> Result<AlphaMap> {
    let d = decode(path)?;
    let data = d.samples.chunks(d.channels).map(|px| px[0]).collect();
    Ok(AlphaMap::new(d.height, d.width, data)?)
}

pub fn write_alpha8(path: &Path, alpha: &AlphaMap) -> Result<()> {
    let bytes: Vec<u8> = alpha.data().iter().map(|&v| to_u8(v)).collect();
    encode(path, alpha.width(), alpha.height(), ColorType::Grayscale, BitDepth::Eight, &bytes)
}

/// 16-bit big-endian greyscale, values `round(α · 65535)`.
pub fn write_alpha16(path: &Path, alpha: &AlphaMap) -> Result<()> {
    let bytes: Vec<u8> = alpha
        .data()
        .iter()
        .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    encode(path, alpha.width(), alpha.height(), ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

/// Reads a trimap encoded as 0, 128 and 255 in an 8-bit image.
pub fn read_trimap(path: &Path) -> Result<Trimap> {
    let d = decode(path)?;
    let bytes = d.bytes.ok_or_else(|| Error::format(path, "trimaps must be 8-bit"))?;
    let data = bytes
        .chunks(d.channels)
        .map(|px| TrimapClass::from_gray(px[0]).ok_or_else(|| Error::format(path, format!("trimap value {} is not 0, 128 or 255", px[0]))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trimap::new(d.height, d.width, data)?)
}

pub fn write_trimap(path: &Path, trimap: &Trimap) -> Result<()> {
    let bytes: Vec<u8> = trimap.data().iter().map(|c| c.gray()).collect();
    encode(path, trimap.width(), trimap.height(), ColorType::Grayscale, BitDepth::Eight, &bytes)
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

/// Sorted `frame_*.png` files of a directory.
pub fn list_frames(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("frame_") && name.ends_with(".png") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no frame_*.png files"));
    }
    Ok(paths)
}
