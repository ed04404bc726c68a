use super::{blur_factor, PatchScorer, PatchScores};
use crate::error::Result;
use crate::image::{blur, mse_images, Image, UpsampleMode};
use crate::quadtree::PatchRect;

/// MSE between each patch and its own down-then-up sampled copy at the
/// representation size.
pub fn score_pixel_blur(
    img: &Image,
    candidates: &[PatchRect],
    s_rep: usize,
    mode: UpsampleMode,
) -> Result<PatchScores> {
    let scores = candidates
        .iter()
        .map(|p| {
            let factor = blur_factor(p.size, s_rep)?;
            let patch = img.crop(p.x, p.y, p.size, p.size)?;
            let blurred = blur(&patch, factor, mode)?;
            Ok((*p, mse_images(&patch, &blurred)?))
        })
        .collect::<Result<Vec<_>>>()?;
    PatchScores::new(scores)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBlurScorer {
    pub s_rep: usize,
    pub mode: UpsampleMode,
}

impl PixelBlurScorer {
    pub fn new(s_rep: usize, mode: UpsampleMode) -> Self {
        PixelBlurScorer { s_rep, mode }
    }
}

impl PatchScorer for PixelBlurScorer {
    fn score(&self, img: &Image, candidates: &[PatchRect]) -> Result<PatchScores> {
        score_pixel_blur(img, candidates, self.s_rep, self.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_patch_scores_zero() {
        let img = Image::filled(64, 64, 0.4).unwrap();
        let s = score_pixel_blur(&img, &[PatchRect::new(0, 0, 64)], 16, UpsampleMode::Bilinear)
            .unwrap();
        assert!(s.values()[0] < 1e-14);
    }

    #[test]
    fn alternating_pattern_hand_value() {
        // Channel 0 alternates {0, 1} pixel by pixel, so every 2x2 blur block
        // averages to 0.5; (x - 0.5)^2 = 0.25 there and 0 on the constant
        // channels, giving 0.25 / 3 overall.
        let img = Image::from_fn(32, 32, |y, x, c| if c == 0 { ((x + y) % 2) as f32 } else { 0.25 })
            .unwrap();
        let s = score_pixel_blur(&img, &[PatchRect::new(0, 0, 32)], 16, UpsampleMode::Nearest)
            .unwrap();
        assert_eq!(s.values()[0], 0.25 / 3.0);

        // The same {0, 1, 0, 1} values laid out as four 16x16 blocks are
        // block-constant at the representation size and score exactly zero.
        let blocks = Image::from_fn(32, 32, |y, x, c| if c == 0 { ((x / 16 + y / 16) % 2) as f32 } else { 0.25 })
            .unwrap();
        let s = score_pixel_blur(&blocks, &[PatchRect::new(0, 0, 32)], 16, UpsampleMode::Nearest)
            .unwrap();
        assert_eq!(s.values()[0], 0.0);
    }

    #[test]
    fn block_constant_iff_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let cells: Vec<f32> = (0..4 * 4 * 3).map(|_| rng.gen()).collect();
        let blocky = Image::from_fn(64, 64, |y, x, c| cells[((y / 16) * 4 + x / 16) * 3 + c]).unwrap();
        let p = [PatchRect::new(0, 0, 64)];
        assert_eq!(score_pixel_blur(&blocky, &p, 16, UpsampleMode::Nearest).unwrap().values()[0], 0.0);
        let mut data = blocky.data().to_vec();
        data[100] = 1.0 - data[100];
        let perturbed = Image::new(64, 64, data).unwrap();
        assert!(score_pixel_blur(&perturbed, &p, 16, UpsampleMode::Nearest).unwrap().values()[0] > 0.0);
    }

    #[test]
    fn undersized_candidate_is_rejected() {
        let img = Image::filled(32, 32, 0.0).unwrap();
        assert!(matches!(
            score_pixel_blur(&img, &[PatchRect::new(0, 0, 8)], 16, UpsampleMode::Nearest),
            Err(Error::Config(_))
        ));
    }
}
