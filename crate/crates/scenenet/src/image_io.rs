//! 8-bit image reading and writing: binary PPM (P6) and PGM (P5), plus
//! PNG through the `png` crate. Everything is normalized to RGB on load.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<RgbImage> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "pixel buffer length {} does not match {width}x{height} RGB",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<RgbImage> {
        if gray.len() != width * height {
            return Err(Error::Format(format!(
                "gray buffer length {} does not match {width}x{height}",
                gray.len()
            )));
        }
        let mut pixels = Vec::with_capacity(gray.len() * 3);
        for &g in gray {
            pixels.extend_from_slice(&[g, g, g]);
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }
}

fn parse_ppm(bytes: &[u8], path: &str) -> Result<RgbImage> {
    let fail = |msg: &str| Error::Format(format!("{path}: {msg}"));
    if bytes.len() < 2 {
        return Err(fail("truncated header"));
    }
    let magic = &bytes[0..2];
    let gray = match magic {
        b"P6" => false,
        b"P5" => true,
        _ => return Err(fail("expected P6 or P5 magic")),
    };
    // Header tokens: width, height, maxval; comments start with '#'.
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("bad header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| fail("bad header value"))?;
    }
    if fields[2] != 255 {
        return Err(fail("only maxval 255 is supported"));
    }
    // Single whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing header terminator"));
    }
    pos += 1;
    let (width, height) = (fields[0], fields[1]);
    let expect = width * height * if gray { 1 } else { 3 };
    let payload = &bytes[pos..];
    if payload.len() < expect {
        return Err(fail("truncated payload"));
    }
    if gray {
        RgbImage::from_gray(width, height, &payload[..expect])
    } else {
        RgbImage::new(width, height, payload[..expect].to_vec())
    }
}

fn read_png(path: &Path) -> Result<RgbImage> {
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(name.clone(), e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{name}: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{name}: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("{name}: only 8-bit PNGs supported")));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    match info.color_type {
        png::ColorType::Rgb => RgbImage::new(w, h, data.to_vec()),
        png::ColorType::Grayscale => RgbImage::from_gray(w, h, data),
        png::ColorType::Rgba => {
            let mut pixels = Vec::with_capacity(w * h * 3);
            for px in data.chunks_exact(4) {
                pixels.extend_from_slice(&px[..3]);
            }
            RgbImage::new(w, h, pixels)
        }
        png::ColorType::GrayscaleAlpha => {
            let mut gray = Vec::with_capacity(w * h);
            for px in data.chunks_exact(2) {
                gray.push(px[0]);
            }
            RgbImage::from_gray(w, h, &gray)
        }
        other => Err(Error::Format(format!(
            "{name}: unsupported PNG color type {other:?}"
        ))),
    }
}

fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let name = path.display().to_string();
    let file = fs::File::create(path).map_err(|e| Error::io(name.clone(), e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        image.width as u32,
        image.height as u32,
    );
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("{name}: {e}")))?;
    writer
        .write_image_data(&image.pixels)
        .map_err(|e| Error::Format(format!("{name}: {e}")))
}

/// Reads a PPM/PGM/PNG image by extension (PPM assumed otherwise).
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    if ext == "png" {
        return read_png(path);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_ppm(&bytes, &path.display().to_string())
}

/// Writes PNG or binary PPM depending on the extension.
pub fn write_image(path: &Path, image: &RgbImage) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    if ext == "png" {
        return write_png(path, image);
    }
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}
