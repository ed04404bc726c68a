//! Convolutional feature extraction and the feature-difference scorer.
//!
//! The extractor is a plain stack of strided convolutions over HWC
//! tensors. Scoring compares features of the image with features of the
//! image blurred to each candidate size's representation level, restricted
//! to the patch's region of the feature map.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pooling::{pool_grid, Grid};
use super::{blur_factor, PatchScorer, PatchScores, ScorerConfig};
use crate::error::{Error, Result};
use crate::image::{bilinear_resize_raw, blur, mse, resize_bilinear, Image, UpsampleMode, CHANNELS};
use crate::quadtree::PatchRect;
use crate::tensor::{Tensor, TensorBundle};

/// Dense `H' x W' x d` feature tensor, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    /// Image pixels per feature cell along each axis.
    pub downscale_ratio: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        depth: usize,
        downscale_ratio: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != height * width * depth {
            return Err(Error::Dimension(format!(
                "feature map {height}x{width}x{depth} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap {
            height,
            width,
            depth,
            downscale_ratio,
            data,
        })
    }

    /// Loads a precomputed `[H', W', d]` tensor describing an
    /// `image_h`-pixel-tall image.
    pub fn from_tensor(t: &Tensor, image_h: usize, image_w: usize) -> Result<Self> {
        let [h, w, d] = *t.dims() else {
            return Err(Error::Dimension(format!(
                "feature map tensor must be rank 3, found {:?}",
                t.dims()
            )));
        };
        if h == 0 || w == 0 || image_h % h != 0 || image_w % w != 0 || image_h / h != image_w / w {
            return Err(Error::Dimension(format!(
                "feature grid {h}x{w} does not evenly divide image {image_h}x{image_w}"
            )));
        }
        FeatureMap::new(h, w, d, image_h / h, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, self.depth], self.data.clone())
            .expect("feature map shape is consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
}

/// A `kernel x kernel` convolution. Weights are stored `[out, ky, kx, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayerDesc {
    kernel: usize,
    stride: usize,
    padding: usize,
    in_channels: usize,
    out_channels: usize,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtractorMeta {
    downscale_ratio: usize,
    layers: Vec<LayerDesc>,
}

impl ConvLayer {
    fn desc(&self) -> LayerDesc {
        LayerDesc {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            activation: self.activation,
        }
    }

    fn check(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("degenerate conv layer {:?}", self.desc())));
        }
        let wlen = self.out_channels * self.kernel * self.kernel * self.in_channels;
        if self.weight.len() != wlen || self.bias.len() != self.out_channels {
            return Err(Error::Dimension(format!(
                "conv weights {} / bias {} do not match descriptor {:?}",
                self.weight.len(),
                self.bias.len(),
                self.desc()
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conv weights"));
        }
        Ok(())
    }

    fn out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::Dimension(format!("input {len} smaller than kernel")));
        }
        let out = (padded - self.kernel) / self.stride + 1;
        if out * self.stride != len {
            return Err(Error::Dimension(format!(
                "conv k{} s{} p{} maps {len} to {out}, not {len}/{}",
                self.kernel, self.stride, self.padding, self.stride
            )));
        }
        Ok(out)
    }

    /// Forward pass over an HWC tensor.
    pub fn forward(&self, input: &[f32], h: usize, w: usize) -> Result<(Vec<f32>, usize, usize)> {
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        if input.len() != h * w * cin {
            return Err(Error::Dimension(format!(
                "conv input has {} values, expected {h}x{w}x{cin}",
                input.len()
            )));
        }
        let (oh, ow) = (self.out_len(h)?, self.out_len(w)?);
        // [ky][kx][in][out] so the innermost loop runs over contiguous outputs.
        let mut wt = vec![0.0f32; k * k * cin * cout];
        for o in 0..cout {
            for ky in 0..k {
                for kx in 0..k {
                    for i in 0..cin {
                        wt[((ky * k + kx) * cin + i) * cout + o] =
                            self.weight[((o * k + ky) * k + kx) * cin + i];
                    }
                }
            }
        }
        let mut out = vec![0.0f32; oh * ow * cout];
        let mut acc = vec![0.0f32; cout];
        for oy in 0..oh {
            for ox in 0..ow {
                acc.copy_from_slice(&self.bias);
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let px = &input[(iy as usize * w + ix as usize) * cin..][..cin];
                        let taps = &wt[(ky * k + kx) * cin * cout..][..cin * cout];
                        for (i, &v) in px.iter().enumerate() {
                            for (a, &wv) in acc.iter_mut().zip(&taps[i * cout..(i + 1) * cout]) {
                                *a += wv * v;
                            }
                        }
                    }
                }
                let dst = &mut out[(oy * ow + ox) * cout..][..cout];
                match self.activation {
                    Activation::Identity => dst.copy_from_slice(&acc),
                    Activation::Relu => {
                        for (d, &a) in dst.iter_mut().zip(&acc) {
                            *d = a.max(0.0);
                        }
                    }
                }
            }
        }
        Ok((out, oh, ow))
    }
}

/// A conv stack standing in for a pretrained backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractorSpec {
    layers: Vec<ConvLayer>,
}

impl FeatureExtractorSpec {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("feature extractor needs at least one layer".into()));
        }
        let mut channels = CHANNELS;
        for l in &layers {
            l.check()?;
            if l.in_channels != channels {
                return Err(Error::Dimension(format!(
                    "layer expects {} input channels, previous layer gives {channels}",
                    l.in_channels
                )));
            }
            channels = l.out_channels;
        }
        Ok(FeatureExtractorSpec { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn downscale_ratio(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn depth(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(CHANNELS)
    }

    /// 1x1 conv copying RGB through.
    pub fn identity() -> Self {
        let mut weight = vec![0.0; 9];
        for c in 0..3 {
            weight[c * 3 + c] = 1.0;
        }
        FeatureExtractorSpec::new(vec![ConvLayer {
            kernel: 1,
            stride: 1,
            padding: 0,
            in_channels: 3,
            out_channels: 3,
            activation: Activation::Identity,
            weight,
            bias: vec![0.0; 3],
        }])
        .expect("identity extractor is well formed")
    }

    /// `k x k` stride-`k` per-channel box filter.
    pub fn average_pool(k: usize) -> Self {
        let mut weight = vec![0.0; 3 * k * k * 3];
        let w = 1.0 / (k * k) as f32;
        for o in 0..3 {
            for t in 0..k * k {
                weight[(o * k * k + t) * 3 + o] = w;
            }
        }
        FeatureExtractorSpec::new(vec![ConvLayer {
            kernel: k,
            stride: k,
            padding: 0,
            in_channels: 3,
            out_channels: 3,
            activation: Activation::Identity,
            weight,
            bias: vec![0.0; 3],
        }])
        .expect("average-pool extractor is well formed")
    }

    /// Randomly initialised stack of 3x3 stride-2 convolutions with the
    /// given output channel counts; ReLU between layers, none after the last.
    pub fn random_stack(channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(channels.len());
        let mut cin = CHANNELS;
        for (i, &cout) in channels.iter().enumerate() {
            let fan_in = (9 * cin) as f32;
            let bound = (6.0 / fan_in).sqrt();
            layers.push(ConvLayer {
                kernel: 3,
                stride: 2,
                padding: 1,
                in_channels: cin,
                out_channels: cout,
                activation: if i + 1 == channels.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
                weight: (0..cout * 9 * cin).map(|_| rng.gen_range(-bound..bound)).collect(),
                bias: (0..cout).map(|_| rng.gen_range(-0.05..0.05)).collect(),
            });
            cin = cout;
        }
        FeatureExtractorSpec::new(layers).expect("random stack is well formed")
    }

    /// Five stride-2 layers, depth 32, `x32` downscaling.
    pub fn default_stack(seed: u64) -> Self {
        Self::random_stack(&[8, 16, 16, 32, 32], seed)
    }

    pub fn to_bundle(&self) -> TensorBundle {
        let meta = ExtractorMeta {
            downscale_ratio: self.downscale_ratio(),
            layers: self.layers.iter().map(ConvLayer::desc).collect(),
        };
        let mut b = TensorBundle::new(
            "feature-extractor",
            serde_json::to_value(meta).expect("meta serializes"),
        );
        for (i, l) in self.layers.iter().enumerate() {
            let (k, cin, cout) = (l.kernel, l.in_channels, l.out_channels);
            b.push(
                format!("layer{i}.weight"),
                "conv.weight",
                Tensor::new(vec![cout, k, k, cin], l.weight.clone()).expect("shape"),
            );
            b.push(
                format!("layer{i}.bias"),
                "conv.bias",
                Tensor::new(vec![cout], l.bias.clone()).expect("shape"),
            );
        }
        b
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        if b.kind != "feature-extractor" {
            return Err(Error::format("manifest", format!("bundle kind {:?} is not a feature extractor", b.kind)));
        }
        let meta: ExtractorMeta = serde_json::from_value(b.meta.clone())?;
        let layers = meta
            .layers
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let w = b.get_shaped(
                    &format!("layer{i}.weight"),
                    &[d.out_channels, d.kernel, d.kernel, d.in_channels],
                )?;
                let bias = b.get_shaped(&format!("layer{i}.bias"), &[d.out_channels])?;
                Ok(ConvLayer {
                    kernel: d.kernel,
                    stride: d.stride,
                    padding: d.padding,
                    in_channels: d.in_channels,
                    out_channels: d.out_channels,
                    activation: d.activation,
                    weight: w.data().to_vec(),
                    bias: bias.data().to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = FeatureExtractorSpec::new(layers)?;
        if spec.downscale_ratio() != meta.downscale_ratio {
            return Err(Error::format(
                "manifest",
                format!(
                    "declared downscale ratio {} but strides multiply to {}",
                    meta.downscale_ratio,
                    spec.downscale_ratio()
                ),
            ));
        }
        Ok(spec)
    }
}

pub fn extract_features(img: &Image, spec: &FeatureExtractorSpec) -> Result<FeatureMap> {
    let ratio = spec.downscale_ratio();
    if img.height() % ratio != 0 || img.width() % ratio != 0 {
        return Err(Error::Dimension(format!(
            "image {}x{} is not divisible by the extractor's x{ratio} downscaling",
            img.height(),
            img.width()
        )));
    }
    let (mut h, mut w) = (img.height(), img.width());
    let mut x = img.data().to_vec();
    for layer in spec.layers() {
        let (y, oh, ow) = layer.forward(&x, h, w)?;
        x = y;
        h = oh;
        w = ow;
    }
    FeatureMap::new(h, w, spec.depth(), ratio, x)
}

/// The feature cells under `patch`, which must sit on cell boundaries.
pub fn roi_slice(fm: &FeatureMap, patch: &PatchRect) -> Result<FeatureMap> {
    let r = fm.downscale_ratio;
    if r == 0 || patch.x % r != 0 || patch.y % r != 0 || patch.size % r != 0 || patch.size == 0 {
        return Err(Error::Dimension(format!(
            "patch {patch:?} is not aligned to x{r} feature cells"
        )));
    }
    let (cx, cy, n) = (patch.x / r, patch.y / r, patch.size / r);
    if cx + n > fm.width || cy + n > fm.height {
        return Err(Error::Dimension(format!("patch {patch:?} outside the feature map")));
    }
    let d = fm.depth;
    let mut data = Vec::with_capacity(n * n * d);
    for row in cy..cy + n {
        data.extend_from_slice(&fm.data[(row * fm.width + cx) * d..][..n * d]);
    }
    FeatureMap::new(n, n, d, r, data)
}

/// Per-cell mean over channels of the squared feature difference.
fn difference_grid(a: &FeatureMap, b: &FeatureMap) -> Result<Grid> {
    if (a.height, a.width, a.depth) != (b.height, b.width, b.depth) {
        return Err(Error::Dimension("feature maps differ in shape".into()));
    }
    let d = a.depth;
    let data = a
        .data
        .chunks_exact(d)
        .zip(b.data.chunks_exact(d))
        .map(|(x, y)| {
            let s: f64 = x
                .iter()
                .zip(y)
                .map(|(&p, &q)| {
                    let t = p as f64 - q as f64;
                    t * t
                })
                .sum();
            (s / d as f64) as f32
        })
        .collect();
    Grid::new(a.height, a.width, data)
}

/// Scores candidates from an original feature map and one feature map of
/// the blurred image per candidate size.
///
/// Aligned candidates use the exact region MSE. Otherwise the per-cell
/// difference map is optionally resized to `resample_to` (bilinear) and
/// area-pooled over each patch footprint.
pub fn score_from_feature_maps(
    image_h: usize,
    image_w: usize,
    original: &FeatureMap,
    blurred: &[(usize, FeatureMap)],
    candidates: &[PatchRect],
    resample_to: Option<(usize, usize)>,
) -> Result<PatchScores> {
    let exact = resample_to.is_none()
        && original.height * original.downscale_ratio == image_h
        && original.width * original.downscale_ratio == image_w;
    let mut grids: Vec<(usize, Option<Grid>)> = Vec::with_capacity(blurred.len());
    let scores = candidates
        .iter()
        .map(|p| {
            let fb = &blurred
                .iter()
                .find(|(s, _)| *s == p.size)
                .ok_or_else(|| Error::Contract(format!("no blurred features for size {}", p.size)))?
                .1;
            let r = original.downscale_ratio;
            if exact && p.x % r == 0 && p.y % r == 0 && p.size % r == 0 {
                let a = roi_slice(fb, p)?;
                let b = roi_slice(original, p)?;
                return Ok((*p, mse(&a.data, &b.data)?));
            }
            let slot = match grids.iter().position(|(s, _)| *s == p.size) {
                Some(i) => i,
                None => {
                    grids.push((p.size, None));
                    grids.len() - 1
                }
            };
            if grids[slot].1.is_none() {
                let mut g = difference_grid(fb, original)?;
                if let Some((rows, cols)) = resample_to {
                    let data = bilinear_resize_raw(&g.data, g.rows, g.cols, 1, rows, cols)?;
                    g = Grid::new(rows, cols, data)?;
                }
                grids[slot].1 = Some(g);
            }
            let g = grids[slot].1.as_ref().expect("grid just built");
            Ok((*p, pool_grid(g, image_h, image_w, p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    PatchScores::new(scores)
}

/// Scores plus the number of extractor forward passes spent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScoring {
    pub scores: PatchScores,
    pub forward_passes: usize,
}

pub fn score_feature_based_traced(
    img: &Image,
    candidates: &[PatchRect],
    spec: &FeatureExtractorSpec,
    cfg: &ScorerConfig,
) -> Result<FeatureScoring> {
    cfg.validate()?;
    let scale = cfg.scoring_scale;
    let work = if scale < 1.0 {
        let h = (img.height() as f64 * scale).round() as usize;
        let w = (img.width() as f64 * scale).round() as usize;
        resize_bilinear(img, h.max(1), w.max(1))?
    } else {
        img.clone()
    };
    let original = extract_features(&work, spec)?;
    let mut passes = 1;
    let sizes: BTreeSet<usize> = candidates.iter().map(|p| p.size).collect();
    let mut blurred = Vec::with_capacity(sizes.len());
    for &size in sizes.iter().rev() {
        let factor = blur_factor(size, cfg.s_rep)?;
        let b = blur(&work, factor, cfg.upsample_mode)?;
        blurred.push((size, extract_features(&b, spec)?));
        passes += 1;
    }
    let resample_to = (scale < 1.0).then(|| {
        (
            (original.height as f64 / scale).round() as usize,
            (original.width as f64 / scale).round() as usize,
        )
    });
    let scores = score_from_feature_maps(
        img.height(),
        img.width(),
        &original,
        &blurred,
        candidates,
        resample_to,
    )?;
    Ok(FeatureScoring {
        scores,
        forward_passes: passes,
    })
}

pub fn score_feature_based(
    img: &Image,
    candidates: &[PatchRect],
    spec: &FeatureExtractorSpec,
    cfg: &ScorerConfig,
) -> Result<PatchScores> {
    Ok(score_feature_based_traced(img, candidates, spec, cfg)?.scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScorer {
    pub extractor: FeatureExtractorSpec,
    pub config: ScorerConfig,
}

impl FeatureScorer {
    pub fn new(extractor: FeatureExtractorSpec, s_rep: usize) -> Self {
        FeatureScorer {
            extractor,
            config: ScorerConfig {
                kind: super::ScorerKind::FeatureBased,
                s_rep,
                ..ScorerConfig::default()
            },
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.config.scoring_scale = scale;
        self
    }

    pub fn with_mode(mut self, mode: UpsampleMode) -> Self {
        self.config.upsample_mode = mode;
        self
    }
}

impl PatchScorer for FeatureScorer {
    fn score(&self, img: &Image, candidates: &[PatchRect]) -> Result<PatchScores> {
        score_feature_based(img, candidates, &self.extractor, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::downsample_area;
    use crate::quadtree::{candidate_patches, QuadtreeConfig};
    use crate::scorers::score_pixel_blur;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    // Nested-loop zero-padded convolution, weights indexed [out][ky][kx][in].
    fn conv_oracle(x: &[f32], h: usize, w: usize, l: &ConvLayer) -> (Vec<f64>, usize, usize) {
        let oh = (h + 2 * l.padding - l.kernel) / l.stride + 1;
        let ow = (w + 2 * l.padding - l.kernel) / l.stride + 1;
        let mut out = vec![0.0; oh * ow * l.out_channels];
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..l.out_channels {
                    let mut s = l.bias[o] as f64;
                    for ky in 0..l.kernel {
                        for kx in 0..l.kernel {
                            let iy = (oy * l.stride + ky) as i64 - l.padding as i64;
                            let ix = (ox * l.stride + kx) as i64 - l.padding as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for i in 0..l.in_channels {
                                let wv = l.weight[((o * l.kernel + ky) * l.kernel + kx) * l.in_channels + i];
                                s += wv as f64 * x[(iy as usize * w + ix as usize) * l.in_channels + i] as f64;
                            }
                        }
                    }
                    out[(oy * ow + ox) * l.out_channels + o] = match l.activation {
                        Activation::Identity => s,
                        Activation::Relu => s.max(0.0),
                    };
                }
            }
        }
        (out, oh, ow)
    }

    #[test]
    fn identity_extractor_returns_image() {
        let img = random_image(8, 8, 1);
        let fm = extract_features(&img, &FeatureExtractorSpec::identity()).unwrap();
        assert_eq!((fm.height, fm.width, fm.depth, fm.downscale_ratio), (8, 8, 3, 1));
        assert_eq!(fm.data, img.data());
    }

    #[test]
    fn average_pool_extractor_matches_downsample() {
        let img = random_image(16, 16, 2);
        let fm = extract_features(&img, &FeatureExtractorSpec::average_pool(4)).unwrap();
        let d = downsample_area(&img, 4).unwrap();
        for (a, b) in fm.data.iter().zip(d.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_stack_matches_loop_oracle() {
        let spec = FeatureExtractorSpec::random_stack(&[5, 7], 3);
        let img = random_image(16, 12, 4);
        let fm = extract_features(&img, &spec).unwrap();
        let (mut x, mut h, mut w): (Vec<f64>, usize, usize) =
            (img.data().iter().map(|&v| v as f64).collect(), 16, 12);
        for l in spec.layers() {
            let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            let (y, oh, ow) = conv_oracle(&xf, h, w, l);
            x = y;
            h = oh;
            w = ow;
        }
        assert_eq!((fm.height, fm.width), (h, w));
        for (a, b) in fm.data.iter().zip(&x) {
            assert!((*a as f64 - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let mut spec = FeatureExtractorSpec::identity().layers().to_vec();
        spec[0].weight.pop();
        assert!(matches!(FeatureExtractorSpec::new(spec), Err(Error::Dimension(_))));
        let img = random_image(20, 20, 0);
        assert!(extract_features(&img, &FeatureExtractorSpec::default_stack(0)).is_err());
    }

    #[test]
    fn roi_slice_examples() {
        let spec = FeatureExtractorSpec::default_stack(0);
        let img = random_image(256, 256, 5);
        let fm = extract_features(&img, &spec).unwrap();
        assert_eq!((fm.height, fm.width, fm.depth), (8, 8, 32));
        let s = roi_slice(&fm, &PatchRect::new(0, 0, 64)).unwrap();
        assert_eq!((s.height, s.width), (2, 2));
        for r in 0..2 {
            for c in 0..2 {
                for k in 0..32 {
                    assert_eq!(s.data[(r * 2 + c) * 32 + k], fm.data[(r * 8 + c) * 32 + k]);
                }
            }
        }
        assert_eq!(roi_slice(&fm, &PatchRect::new(0, 0, 256)).unwrap().data, fm.data);
        assert!(roi_slice(&fm, &PatchRect::new(16, 0, 16)).is_err());
    }

    #[test]
    fn identity_features_equal_pixel_blur() {
        let img = random_image(128, 128, 6);
        let cfg = QuadtreeConfig::new(16, 64, 16);
        let cands = candidate_patches(128, 128, &cfg).unwrap();
        let sc = ScorerConfig {
            upsample_mode: UpsampleMode::Nearest,
            ..ScorerConfig::default()
        };
        let feat =
            score_feature_based(&img, &cands, &FeatureExtractorSpec::identity(), &sc).unwrap();
        let pix = score_pixel_blur(&img, &cands, 16, UpsampleMode::Nearest).unwrap();
        assert_eq!(feat.values(), pix.values());
    }

    #[test]
    fn constant_image_scores_zero_and_counts_passes() {
        let img = Image::filled(256, 256, 0.3).unwrap();
        let cands = candidate_patches(256, 256, &QuadtreeConfig::new(16, 64, 64)).unwrap();
        let spec = FeatureExtractorSpec::default_stack(1);
        let t = score_feature_based_traced(&img, &cands, &spec, &ScorerConfig::default()).unwrap();
        assert_eq!(t.forward_passes, 3);
        assert!(t.scores.values().iter().all(|&v| v < 1e-10));
    }

    #[test]
    fn scaled_scoring_covers_every_candidate() {
        let img = random_image(256, 256, 8);
        let cands = candidate_patches(256, 256, &QuadtreeConfig::new(16, 64, 64)).unwrap();
        let spec = FeatureExtractorSpec::default_stack(2);
        let cfg = ScorerConfig {
            scoring_scale: 0.75,
            ..ScorerConfig::default()
        };
        let t = score_feature_based_traced(&img, &cands, &spec, &cfg).unwrap();
        assert_eq!(t.scores.len(), 80);
        assert_eq!(t.forward_passes, 3);
        assert!(t.scores.values().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn bundle_round_trip() {
        let spec = FeatureExtractorSpec::default_stack(3);
        let dir = tempfile::tempdir().unwrap();
        spec.to_bundle().save(dir.path()).unwrap();
        let back = FeatureExtractorSpec::from_bundle(&TensorBundle::load(dir.path()).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
