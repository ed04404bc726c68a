//! Dense RGB rasters and the pixel-level operations the scorers and the
//! tokenizer are built on.
//!
//! Samples are `f32` in `[0, 1]`, row-major and channel-interleaved. Every
//! reduction (block means, MSE) accumulates in `f64`.

mod ppm;
mod resample;

pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use resample::{
    area_downsample_raw, bilinear_resize_raw, blur, downsample_area, mse, mse_images,
    resize_bilinear, upsample, UpsampleMode,
};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Wraps raw interleaved samples, rejecting wrong lengths and samples
    /// outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        let expected = height * width * CHANNELS;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} samples for {height}x{width}x3, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            if !bad.is_finite() {
                return Err(Error::NonFinite("image samples"));
            }
            return Err(Error::Contract(format!("image sample {bad} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Image::new(height, width, vec![value; height * width * CHANNELS])
    }

    /// Builds an image from a per-sample generator `f(y, x, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Image::new(height, width, data)
    }

    // Internal constructor for results of operations that provably stay in range.
    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Image {
            height,
            width,
            data,
        }
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

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    /// Copies out the `w`x`h` region whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::Dimension(format!(
                "crop {w}x{h} at ({x}, {y}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for row in y..y + h {
            let start = (row * self.width + x) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + w * CHANNELS]);
        }
        Ok(Image::from_parts(h, w, data))
    }

    /// Channel-wise mean over the whole image.
    pub fn channel_means(&self) -> [f64; CHANNELS] {
        let mut sums = [0.0f64; CHANNELS];
        for px in self.data.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                sums[c] += px[c] as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.map(|s| s / n)
    }
}
