//! Motion field files: per frame pair, a little-endian `i32` height and width
//! followed by `height · width` interleaved `(dx, dy)` `f32` pairs.

use std::path::Path;

use vidmatte_core::image::FlowMap;

use crate::error::{Error, Result};

pub fn encode_flow(flow: &FlowMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * flow.data().len());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8], path: &Path) -> Result<FlowMap> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "motion file shorter than its header"));
    }
    let h = i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if h <= 0 || w <= 0 {
        return Err(Error::format(path, format!("invalid motion size {h}x{w}")));
    }
    let (h, w) = (h as usize, w as usize);
    let body = &bytes[8..];
    if body.len() != 8 * h * w {
        return Err(Error::format(path, format!("motion body has {} bytes, expected {}", body.len(), 8 * h * w)));
    }
    let data = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Ok(FlowMap::new(h, w, data)?)
}

pub fn write_flow(path: &Path, flow: &FlowMap) -> Result<()> {
    std::fs::write(path, encode_flow(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: &Path) -> Result<FlowMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes, path)
}

pub fn motion_name(pair: usize) -> String {
    format!("motion_{pair:05}.bin")
}
