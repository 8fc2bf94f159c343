//! Plain-text key-value serialization of [`ArchSpec`].
//!
//! One `key = value` pair per line; `#` starts a comment. Keys: depth,
//! width_factor, classes, downsample, input_size, and optionally stem.
//! The same pairs, comma-separated, are accepted inline on the command
//! line.

use std::fs;
use std::path::Path;

use crate::arch::{ArchSpec, DownsampleKind, StemKind, WidthFactor};
use crate::error::{Error, Result};

pub fn to_text(spec: &ArchSpec) -> String {
    format!(
        "depth = {}\nwidth_factor = {}\nclasses = {}\ndownsample = {}\ninput_size = {}x{}\nstem = {}\n",
        spec.depth,
        spec.width_factor.label(),
        spec.num_classes,
        spec.downsample.label(),
        spec.input_size.0,
        spec.input_size.1,
        spec.stem.label(),
    )
}

fn apply_pair(spec: &mut ArchSpec, key: &str, value: &str) -> Result<()> {
    match key {
        "depth" => {
            spec.depth = value
                .parse()
                .map_err(|_| Error::Config(format!("depth: '{value}' is not an integer")))?;
        }
        "width_factor" => spec.width_factor = WidthFactor::parse(value)?,
        "classes" => {
            spec.num_classes = value
                .parse()
                .map_err(|_| Error::Config(format!("classes: '{value}' is not an integer")))?;
        }
        "downsample" => spec.downsample = DownsampleKind::parse(value)?,
        "input_size" => {
            let mut parts = value.split(['x', 'X']);
            let h: usize = parts
                .next()
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("input_size: bad value '{value}'")))?;
            let w: usize = match parts.next() {
                Some(p) => p
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("input_size: bad value '{value}'")))?,
                None => h,
            };
            if parts.next().is_some() {
                return Err(Error::Config(format!("input_size: bad value '{value}'")));
            }
            spec.input_size = (h, w);
        }
        "stem" => spec.stem = StemKind::parse(value)?,
        other => {
            return Err(Error::Config(format!(
                "unknown key '{other}' (expected depth, width_factor, classes, downsample, input_size, stem)"
            )))
        }
    }
    Ok(())
}

fn parse_pairs<'a>(pairs: impl Iterator<Item = &'a str>) -> Result<ArchSpec> {
    let mut spec = ArchSpec::new(50, WidthFactor::One, 1000, DownsampleKind::Strided);
    let mut seen_any = false;
    for raw in pairs {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected 'key = value', got '{line}'")))?;
        apply_pair(&mut spec, key.trim(), value.trim())?;
        seen_any = true;
    }
    if !seen_any {
        return Err(Error::Config("empty architecture config".into()));
    }
    spec.validate()?;
    Ok(spec)
}

/// Parses the multi-line config format.
pub fn from_text(text: &str) -> Result<ArchSpec> {
    parse_pairs(text.lines())
}

/// Parses the inline `key=value,key=value` form.
pub fn from_inline(text: &str) -> Result<ArchSpec> {
    parse_pairs(text.split(','))
}

pub fn read_file(path: &Path) -> Result<ArchSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_text(&text)
}

pub fn write_file(path: &Path, spec: &ArchSpec) -> Result<()> {
    fs::write(path, to_text(spec)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Accepts either a path to a config file or an inline spec containing '='.
pub fn load(arg: &str) -> Result<ArchSpec> {
    if arg.contains('=') {
        from_inline(arg)
    } else {
        read_file(Path::new(arg))
    }
}
