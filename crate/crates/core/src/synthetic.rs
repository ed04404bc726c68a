//! Deterministic synthetic scenes for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, CHANNELS};

/// A smooth gradient background with a few flat and a few textured blobs.
/// Pixel values stay on the 1/255 grid so scenes survive a PPM round trip.
pub fn scene(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f32; CHANNELS] = [rng.gen(), rng.gen(), rng.gen()];
    let slope: [f32; CHANNELS] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
    let mut data = Vec::with_capacity(height * width * CHANNELS);
    for y in 0..height {
        for x in 0..width {
            let t = (x + y) as f32 / (height + width) as f32;
            for c in 0..CHANNELS {
                data.push((base[c] + slope[c] * t).clamp(0.0, 1.0));
            }
        }
    }
    let blobs = rng.gen_range(2..6);
    for _ in 0..blobs {
        let cx = rng.gen_range(0..width) as f32;
        let cy = rng.gen_range(0..height) as f32;
        let r = rng.gen_range(0.05..0.25) * height.min(width) as f32;
        let color: [f32; CHANNELS] = [rng.gen(), rng.gen(), rng.gen()];
        let textured = rng.gen_bool(0.6);
        let freq = rng.gen_range(0.3..1.5);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let tex = if textured {
                    0.35 * ((x as f32 * freq).sin() * (y as f32 * freq * 1.3).cos())
                } else {
                    0.0
                };
                for c in 0..CHANNELS {
                    data[(y * width + x) * CHANNELS + c] = (color[c] + tex).clamp(0.0, 1.0);
                }
            }
        }
    }
    for v in &mut data {
        *v = (*v * 255.0).round() / 255.0;
    }
    Image::new(height, width, data).expect("synthetic scene is in range")
}

/// Nearest-neighbour integer upscale.
pub fn upscale_nearest(img: &Image, factor: usize) -> Image {
    crate::image::upsample(img, factor, crate::image::UpsampleMode::Nearest)
        .expect("positive factor")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_on_byte_grid() {
        let a = scene(64, 96, 3);
        assert_eq!(a, scene(64, 96, 3));
        assert_ne!(a, scene(64, 96, 4));
        assert!(a.data().iter().all(|v| ((v * 255.0).round() - v * 255.0).abs() < 1e-3));
    }
}
