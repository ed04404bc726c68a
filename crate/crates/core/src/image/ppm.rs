//! Binary PPM (`P6`, maxval 255).

use std::fs;
use std::path::Path;

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path)?;
    decode_ppm(&bytes)
}

pub fn save_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

/// Quantizes with round-half-up and clamps to `[0, 255]`.
#[inline]
fn quantize(v: f32) -> u8 {
    let scaled = (v as f64) * 255.0 + 0.5;
    scaled.floor().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, field: &'static str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(field, "expected a decimal integer"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(field, "integer out of range"))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format("magic", "expected \"P6\""));
    }
    let mut header = Header { bytes, pos: 2 };
    match bytes.get(2) {
        Some(b) if b.is_ascii_whitespace() || *b == b'#' => {}
        _ => return Err(Error::format("magic", "missing whitespace after \"P6\"")),
    }
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if width == 0 {
        return Err(Error::format("width", "must be positive"));
    }
    if height == 0 {
        return Err(Error::format("height", "must be positive"));
    }
    if maxval != 255 {
        return Err(Error::format("maxval", format!("only 255 is supported, got {maxval}")));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(Error::format("maxval", "missing whitespace byte before payload")),
    }
    let payload = &bytes[header.pos + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(CHANNELS))
        .ok_or_else(|| Error::format("width", "image too large"))?;
    if payload.len() < expected {
        return Err(Error::format(
            "payload",
            format!("truncated: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    let data = payload[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image::from_parts(height, width, data))
}
