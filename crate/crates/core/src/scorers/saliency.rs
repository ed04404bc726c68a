use super::pooling::{pool_grid, Grid};
use super::{PatchScorer, PatchScores};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::quadtree::PatchRect;
use crate::tensor::Tensor;

/// Externally computed per-pixel saliency, possibly at an integer-ratio
/// resolution of the image it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    grid: Grid,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("saliency map"));
        }
        if let Some(v) = data.iter().find(|v| **v < 0.0) {
            return Err(Error::Contract(format!("negative saliency value {v}")));
        }
        Ok(SaliencyMap {
            grid: Grid::new(height, width, data)?,
        })
    }

    /// Accepts `[H, W]` or `[H, W, 1]` tensors.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [h, w] | [h, w, 1] => SaliencyMap::new(h, w, t.data().to_vec()),
            ref d => Err(Error::Dimension(format!(
                "saliency map must be [H, W] or [H, W, 1], found {d:?}"
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.grid.rows, self.grid.cols], self.grid.data.clone())
            .expect("grid shape is consistent")
    }

    pub fn height(&self) -> usize {
        self.grid.rows
    }

    pub fn width(&self) -> usize {
        self.grid.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.grid.data
    }

    fn check_ratio(&self, image_h: usize, image_w: usize) -> Result<()> {
        let (mh, mw) = (self.grid.rows, self.grid.cols);
        let ok = if mh <= image_h {
            image_h % mh == 0 && image_w % mw == 0 && image_h / mh == image_w / mw
        } else {
            mh % image_h == 0 && mw % image_w == 0 && mh / image_h == mw / image_w
        };
        if !ok {
            return Err(Error::Dimension(format!(
                "saliency map {mh}x{mw} has no integer ratio to image {image_h}x{image_w}"
            )));
        }
        Ok(())
    }
}

/// Mean saliency over each patch's pixel footprint.
pub fn score_from_saliency_map(
    map: &SaliencyMap,
    image_h: usize,
    image_w: usize,
    candidates: &[PatchRect],
) -> Result<PatchScores> {
    map.check_ratio(image_h, image_w)?;
    let scores = candidates
        .iter()
        .map(|p| Ok((*p, pool_grid(&map.grid, image_h, image_w, p)?)))
        .collect::<Result<Vec<_>>>()?;
    PatchScores::new(scores)
}

/// Oracle-style scorer bound to one image's saliency map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScorer {
    pub map: SaliencyMap,
}

impl PatchScorer for SaliencyScorer {
    fn score(&self, img: &Image, candidates: &[PatchRect]) -> Result<PatchScores> {
        score_from_saliency_map(&self.map, img.height(), img.width(), candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadtree::{candidate_patches, QuadtreeConfig};
    use rand::{Rng, SeedableRng};

    fn cands() -> Vec<PatchRect> {
        candidate_patches(128, 128, &QuadtreeConfig::new(16, 64, 4)).unwrap()
    }

    #[test]
    fn uniform_map() {
        let map = SaliencyMap::new(128, 128, vec![0.75; 128 * 128]).unwrap();
        let s = score_from_saliency_map(&map, 128, 128, &cands()).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn delta_map() {
        let mut data = vec![0.0; 128 * 128];
        data[70 * 128 + 40] = 1.0;
        let map = SaliencyMap::new(128, 128, data).unwrap();
        let s = score_from_saliency_map(&map, 128, 128, &cands()).unwrap();
        for (p, v) in s.iter() {
            if p.contains_pixel(40, 70) {
                assert_eq!(v, 1.0 / p.area() as f64);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn matches_loop_mean_and_is_linear() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f32> = (0..128 * 128).map(|_| rng.gen()).collect();
        let b: Vec<f32> = (0..128 * 128).map(|_| rng.gen()).collect();
        let ma = SaliencyMap::new(128, 128, a.clone()).unwrap();
        let sa = score_from_saliency_map(&ma, 128, 128, &cands()).unwrap();
        for (p, v) in sa.iter() {
            let mut s = 0.0f64;
            for y in p.y..p.y + p.size {
                for x in p.x..p.x + p.size {
                    s += a[y * 128 + x] as f64;
                }
            }
            let oracle = s / p.area() as f64;
            assert!((v - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
        let mb = SaliencyMap::new(128, 128, b.clone()).unwrap();
        let sb = score_from_saliency_map(&mb, 128, 128, &cands()).unwrap();
        let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + 0.5 * y).collect();
        let mm = SaliencyMap::new(128, 128, mix).unwrap();
        let sm = score_from_saliency_map(&mm, 128, 128, &cands()).unwrap();
        for ((x, y), z) in sa.values().iter().zip(sb.values()).zip(sm.values()) {
            assert!((2.0 * x + 0.5 * y - z).abs() < 1e-6);
        }
    }

    #[test]
    fn lower_resolution_map() {
        // 4x downscaled map: each cell is a 4x4 pixel block.
        let map = SaliencyMap::new(32, 32, (0..32 * 32).map(|i| (i % 7) as f32).collect()).unwrap();
        let s = score_from_saliency_map(&map, 128, 128, &[PatchRect::new(0, 0, 32)]).unwrap();
        let mut sum = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                sum += ((r * 32 + c) % 7) as f64;
            }
        }
        assert!((s.values()[0] - sum / 64.0).abs() < 1e-12);
        let bad = SaliencyMap::new(30, 32, vec![0.0; 30 * 32]).unwrap();
        assert!(score_from_saliency_map(&bad, 128, 128, &[PatchRect::new(0, 0, 32)]).is_err());
    }

    #[test]
    fn rejects_negative_and_bad_tensor() {
        assert!(SaliencyMap::new(1, 1, vec![-1.0]).is_err());
        let t = Tensor::new(vec![2, 2, 2], vec![0.0; 8]).unwrap();
        assert!(SaliencyMap::from_tensor(&t).is_err());
        let t = Tensor::new(vec![2, 2, 1], vec![0.0; 4]).unwrap();
        assert_eq!(SaliencyMap::from_tensor(&t).unwrap().height(), 2);
    }
}
