use serde::{Deserialize, Serialize};

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsampleMode {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            other => Err(Error::Config(format!("unknown upsample mode {other:?}"))),
        }
    }
}

/// Block-mean downsampling of an interleaved `h`x`w`x`c` plane.
pub fn area_downsample_raw(
    data: &[f32],
    h: usize,
    w: usize,
    c: usize,
    factor: usize,
) -> Result<Vec<f32>> {
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Dimension(format!(
            "downsample factor {factor} does not divide {h}x{w}"
        )));
    }
    debug_assert_eq!(data.len(), h * w * c);
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0f32; oh * ow * c];
    let mut acc = vec![0.0f64; c];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for y in oy * factor..(oy + 1) * factor {
                let row = &data[(y * w + ox * factor) * c..(y * w + (ox + 1) * factor) * c];
                for px in row.chunks_exact(c) {
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += v as f64;
                    }
                }
            }
            let dst = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = (a / norm) as f32;
            }
        }
    }
    Ok(out)
}

// Source coordinate taps for one axis under the half-pixel-centre convention.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of an interleaved plane with align-corners-false sampling.
pub fn bilinear_resize_raw(
    data: &[f32],
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f32>> {
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!(
            "cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    debug_assert_eq!(data.len(), h * w * c);
    let ys = bilinear_taps(h, out_h);
    let xs = bilinear_taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let p = |y: usize, x: usize| data[(y * w + x) * c + ch] as f64;
                let top = (1.0 - tx) * p(y0, x0) + tx * p(y0, x1);
                let bottom = (1.0 - tx) * p(y1, x0) + tx * p(y1, x1);
                out.push(((1.0 - ty) * top + ty * bottom) as f32);
            }
        }
    }
    Ok(out)
}

fn nearest_upsample_raw(data: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Vec<f32> {
    let ow = w * factor;
    let mut out = Vec::with_capacity(h * factor * ow * c);
    for y in 0..h * factor {
        let src_row = &data[(y / factor) * w * c..(y / factor + 1) * w * c];
        for x in 0..ow {
            let s = (x / factor) * c;
            out.extend_from_slice(&src_row[s..s + c]);
        }
    }
    out
}

pub fn downsample_area(img: &Image, factor: usize) -> Result<Image> {
    let data = area_downsample_raw(img.data(), img.height(), img.width(), CHANNELS, factor)?;
    Ok(Image::from_parts(
        img.height() / factor,
        img.width() / factor,
        data,
    ))
}

pub fn upsample(img: &Image, factor: usize, mode: UpsampleMode) -> Result<Image> {
    if factor == 0 {
        return Err(Error::Dimension("upsample factor must be positive".into()));
    }
    let (h, w) = (img.height(), img.width());
    let data = match mode {
        UpsampleMode::Nearest => nearest_upsample_raw(img.data(), h, w, CHANNELS, factor),
        UpsampleMode::Bilinear => {
            bilinear_resize_raw(img.data(), h, w, CHANNELS, h * factor, w * factor)?
        }
    };
    Ok(Image::from_parts(h * factor, w * factor, data))
}

/// Arbitrary-size bilinear resize.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    let data = bilinear_resize_raw(img.data(), img.height(), img.width(), CHANNELS, out_h, out_w)?;
    Ok(Image::from_parts(out_h, out_w, data))
}

/// `upsample(downsample_area(img, factor), factor, mode)`.
pub fn blur(img: &Image, factor: usize, mode: UpsampleMode) -> Result<Image> {
    if factor == 1 {
        return Ok(img.clone());
    }
    upsample(&downsample_area(img, factor)?, factor, mode)
}

/// Mean squared difference over all elements, accumulated in `f64`.
pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "mse shape mismatch: {} vs {} elements",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Dimension("mse of empty tensors".into()));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn mse_images(a: &Image, b: &Image) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Dimension(format!(
            "mse shape mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    mse(a.data(), b.data())
}
