//! Training configuration files.
//!
//! One `key = value` setting per line; keys are dotted (`lr.initial`), `#`
//! starts a comment and blank lines are ignored. `net` and `preset` choose
//! the starting recipe, every other key overrides one field of it, in any order.

use std::path::Path;

use vidmatte_core::encoder::Preset;
use vidmatte_core::trainer::{NetKind, TrainConfig};

use crate::error::{Error, Result};

/// `(line, key, value)` triples.
pub fn parse(text: &str) -> std::result::Result<Vec<(usize, String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("line {}: invalid key `{key}`", i + 1));
        }
        if out.iter().any(|(_, existing, _)| existing == key) {
            return Err(format!("line {}: duplicate key `{key}`", i + 1));
        }
        out.push((i + 1, key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Starts from the recipe named by `net`/`preset` (or the fallbacks) and applies the other entries.
pub fn build(entries: &[(String, String)], net: Option<NetKind>, preset: Option<Preset>) -> vidmatte_core::Result<TrainConfig> {
    let lookup = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let net = match lookup("net") {
        Some(v) => NetKind::from_name(v)?,
        None => net.unwrap_or(NetKind::Matting),
    };
    let preset = match lookup("preset") {
        Some(v) => Preset::from_name(v)?,
        None => preset.unwrap_or(Preset::Toy),
    };
    let mut cfg = TrainConfig::preset(net, preset);
    for (k, v) in entries {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_from_entries(entries: &[(String, String)]) -> Result<TrainConfig> {
    Ok(build(entries, None, None)?)
}

pub fn load(path: &Path, net: Option<NetKind>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse(&text).map_err(|msg| Error::format(path, msg))?;
    let mut entries: Vec<(String, String)> = parsed.into_iter().map(|(_, k, v)| (k, v)).collect();
    if let Some(n) = net {
        match entries.iter().find(|(k, _)| k == "net") {
            Some((_, v)) if NetKind::from_name(v).ok() != Some(n) => {
                return Err(Error::Usage(format!("--net {} contradicts `net = {v}` in {}", n.name(), path.display())));
            }
            Some(_) => {}
            None => entries.insert(0, ("net".into(), n.name().into())),
        }
    }
    for (k, v) in overrides {
        entries.retain(|(key, _)| key != k);
        entries.push((k.clone(), v.clone()));
    }
    build(&entries, net, None).map_err(|e| Error::format(path, e))
}

/// Renders a configuration in the file grammar.
pub fn render(cfg: &TrainConfig) -> String {
    cfg.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
