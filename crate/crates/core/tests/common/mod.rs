//! Straight-loop reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use quadtok::image::{Image, UpsampleMode};
use quadtok::quadtree::PatchRect;
use quadtok::scorers::{Activation, FeatureExtractorSpec};
use quadtok::tokenizer::{PatchEmbedder, TokenMatrix, TokenizerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise_image(h: usize, w: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    Image::from_fn(h, w, |_, _, _| r.gen::<f32>()).unwrap()
}

/// Plain `h x w x 3` buffer with explicit indexing.
#[derive(Clone)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub v: Vec<f32>,
}

impl Plane {
    pub fn from_image(img: &Image) -> Self {
        Plane {
            h: img.height(),
            w: img.width(),
            c: 3,
            v: img.data().to_vec(),
        }
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.v[(y * self.w + x) * self.c + ch]
    }

    pub fn crop(&self, px: usize, py: usize, size: usize) -> Plane {
        let mut v = Vec::new();
        for y in py..py + size {
            for x in px..px + size {
                for ch in 0..self.c {
                    v.push(self.get(y, x, ch));
                }
            }
        }
        Plane { h: size, w: size, c: self.c, v }
    }
}

pub fn box_down(p: &Plane, f: usize) -> Plane {
    let (oh, ow) = (p.h / f, p.w / f);
    let mut v = vec![0.0f32; oh * ow * p.c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..p.c {
                let mut s = 0.0f64;
                for y in 0..f {
                    for x in 0..f {
                        s += p.get(oy * f + y, ox * f + x, ch) as f64;
                    }
                }
                v[(oy * ow + ox) * p.c + ch] = (s / (f * f) as f64) as f32;
            }
        }
    }
    Plane { h: oh, w: ow, c: p.c, v }
}

fn src_coord(o: usize, f: usize, n: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0).min((n - 1) as f64);
    let i0 = s as usize;
    let i1 = if i0 + 1 < n { i0 + 1 } else { i0 };
    (i0, i1, s - i0 as f64)
}

pub fn up(p: &Plane, f: usize, mode: UpsampleMode) -> Plane {
    let (oh, ow) = (p.h * f, p.w * f);
    let mut v = Vec::with_capacity(oh * ow * p.c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..p.c {
                let val = match mode {
                    UpsampleMode::Nearest => p.get(y / f, x / f, ch),
                    UpsampleMode::Bilinear => {
                        let (y0, y1, ty) = src_coord(y, f, p.h);
                        let (x0, x1, tx) = src_coord(x, f, p.w);
                        let g = |yy: usize, xx: usize| p.get(yy, xx, ch) as f64;
                        let top = (1.0 - tx) * g(y0, x0) + tx * g(y0, x1);
                        let bottom = (1.0 - tx) * g(y1, x0) + tx * g(y1, x1);
                        ((1.0 - ty) * top + ty * bottom) as f32
                    }
                };
                v.push(val);
            }
        }
    }
    Plane { h: oh, w: ow, c: p.c, v }
}

pub fn blur(p: &Plane, f: usize, mode: UpsampleMode) -> Plane {
    if f == 1 {
        return p.clone();
    }
    up(&box_down(p, f), f, mode)
}

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s / a.len() as f64
}

/// Pixel-blur score of one patch.
pub fn pixel_blur_score(img: &Image, p: &PatchRect, s_rep: usize, mode: UpsampleMode) -> f64 {
    let crop = Plane::from_image(img).crop(p.x, p.y, p.size);
    let b = blur(&crop, p.size / s_rep, mode);
    mse(&crop.v, &b.v)
}

/// Direct convolution stack, `f64` accumulation, `f32` storage between layers.
pub fn features(p: &Plane, spec: &FeatureExtractorSpec) -> Plane {
    let mut cur = p.clone();
    for l in spec.layers() {
        let oh = (cur.h + 2 * l.padding - l.kernel) / l.stride + 1;
        let ow = (cur.w + 2 * l.padding - l.kernel) / l.stride + 1;
        let mut v = vec![0.0f32; oh * ow * l.out_channels];
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..l.out_channels {
                    let mut s = l.bias[o] as f64;
                    for ky in 0..l.kernel {
                        for kx in 0..l.kernel {
                            let iy = (oy * l.stride + ky) as isize - l.padding as isize;
                            let ix = (ox * l.stride + kx) as isize - l.padding as isize;
                            if iy < 0 || ix < 0 || iy >= cur.h as isize || ix >= cur.w as isize {
                                continue;
                            }
                            for i in 0..l.in_channels {
                                let wt = l.weight[((o * l.kernel + ky) * l.kernel + kx) * l.in_channels + i];
                                s += wt as f64 * cur.get(iy as usize, ix as usize, i) as f64;
                            }
                        }
                    }
                    if l.activation == Activation::Relu && s < 0.0 {
                        s = 0.0;
                    }
                    v[(oy * ow + ox) * l.out_channels + o] = s as f32;
                }
            }
        }
        cur = Plane { h: oh, w: ow, c: l.out_channels, v };
    }
    cur
}

/// Feature-based score with both feature maps materialised per patch.
pub fn feature_score(
    img: &Image,
    p: &PatchRect,
    spec: &FeatureExtractorSpec,
    s_rep: usize,
    mode: UpsampleMode,
) -> f64 {
    let full = Plane::from_image(img);
    let fo = features(&full, spec);
    let fb = features(&blur(&full, p.size / s_rep, mode), spec);
    let r = img.height() / fo.h;
    let (cx, cy, n) = (p.x / r, p.y / r, p.size / r);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for y in cy..cy + n {
        for x in cx..cx + n {
            for ch in 0..fo.c {
                a.push(fb.get(y, x, ch));
                b.push(fo.get(y, x, ch));
            }
        }
    }
    mse(&a, &b)
}

pub fn interleave(x: u64, y: u64) -> u64 {
    let mut out = 0;
    for bit in 0..32 {
        out |= ((x >> bit) & 1) << (2 * bit);
        out |= ((y >> bit) & 1) << (2 * bit + 1);
    }
    out
}

/// Tokens for a fixed `cell x cell` grid (cell == s_rep) in z-order.
pub fn uniform_grid_tokens(img: &Image, cfg: &TokenizerConfig, embedder: &PatchEmbedder) -> TokenMatrix {
    let cell = cfg.s_rep;
    let full = Plane::from_image(img);
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for gy in 0..img.height() / cell {
        for gx in 0..img.width() / cell {
            cells.push((gx, gy));
        }
    }
    cells.sort_by_key(|&(gx, gy)| interleave(gx as u64, gy as u64));
    let d = cfg.d_model;
    let mut data = Vec::new();
    for (gx, gy) in cells {
        let rep = full.crop(gx * cell, gy * cell, cell).v;
        let cx = (gx * cell) as f64 / cfg.s_min as f64 + cell as f64 / 2.0 / cfg.s_min as f64;
        let cy = (gy * cell) as f64 / cfg.s_min as f64 + cell as f64 / 2.0 / cfg.s_min as f64;
        let mut pos = Vec::with_capacity(d);
        for coord in [cx, cy] {
            for i in 0..d / 4 {
                let omega = cfg.pos_temperature.powf(-4.0 * i as f64 / d as f64);
                pos.push((coord * omega).sin());
                pos.push((coord * omega).cos());
            }
        }
        for j in 0..d {
            let mut dot = 0.0f64;
            for k in 0..rep.len() {
                dot += embedder.weight[j * rep.len() + k] as f64 * rep[k] as f64;
            }
            data.push((dot + embedder.bias[j] as f64 + pos[j]) as f32);
        }
    }
    TokenMatrix::new(data.len() / d, d, data).unwrap()
}

/// O(n^2) tau-b from pair counts.
pub fn kendall_pairs(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    let (mut s, mut ta, mut tb) = (0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]).unwrap() as i64;
            let db = b[i].partial_cmp(&b[j]).unwrap() as i64;
            s += da * db;
            if da == 0 {
                ta += 1;
            }
            if db == 0 {
                tb += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    let (na, nb) = (pairs - ta, pairs - tb);
    if na == 0 || nb == 0 {
        return None;
    }
    Some(s as f64 / ((na as f64) * (nb as f64)).sqrt())
}

/// Mid-ranks by counting, then Pearson.
pub fn spearman_counts(a: &[f64], b: &[f64]) -> Option<f64> {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let less = v.iter().filter(|&&y| y < x).count();
                let eq = v.iter().filter(|&&y| y == x).count();
                (2 * less + eq + 1) as f64 / 2.0
            })
            .collect()
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let (x, y) = (ra[i] - ma, rb[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
