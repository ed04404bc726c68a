//! Mosaic visualisation and score heatmaps.

use std::path::Path;

use anyhow::{Context, Result};
use quadtok::image::{save_ppm, upsample, Image, CHANNELS};
use quadtok::quadtree::PatchMosaic;
use quadtok::scorers::PatchScores;
use quadtok::tokenizer::patch_to_representation;
use quadtok::{Error, UpsampleMode};

use crate::RenderArgs;

fn parse_color(hex: &str) -> Result<[f32; 3]> {
    let hex = hex.trim_start_matches('#');
    let bad = || Error::Config(format!("grid colour {hex:?} is not RRGGBB"));
    if hex.len() != 6 {
        return Err(bad().into());
    }
    let mut out = [0.0; 3];
    for (i, c) in out.iter_mut().enumerate() {
        let v = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        *c = v as f32 / 255.0;
    }
    Ok(out)
}

/// Each patch replaced by its `s_rep` representation, enlarged back.
pub fn render_mosaic(img: &Image, mosaic: &PatchMosaic, s_rep: usize, mode: UpsampleMode) -> Result<Vec<f32>> {
    if (img.height(), img.width()) != (mosaic.height(), mosaic.width()) {
        return Err(Error::Dimension(format!(
            "mosaic is {}x{} but image is {}x{}",
            mosaic.height(),
            mosaic.width(),
            img.height(),
            img.width()
        ))
        .into());
    }
    let w = img.width();
    let mut out = img.data().to_vec();
    for p in mosaic.patches() {
        let rep = patch_to_representation(img, p, s_rep)?;
        let rep = Image::new(s_rep, s_rep, rep)?;
        let back = upsample(&rep, p.size / s_rep, mode)?;
        for y in 0..p.size {
            let dst = ((p.y + y) * w + p.x) * CHANNELS;
            out[dst..dst + p.size * CHANNELS]
                .copy_from_slice(&back.data()[y * p.size * CHANNELS..(y + 1) * p.size * CHANNELS]);
        }
    }
    Ok(out)
}

/// Colours the top and left edge of every patch plus the image's right
/// and bottom edges.
pub fn draw_grid(data: &mut [f32], mosaic: &PatchMosaic, color: [f32; 3]) {
    let (h, w) = (mosaic.height(), mosaic.width());
    let mut paint = |x: usize, y: usize| {
        let i = (y * w + x) * CHANNELS;
        data[i..i + CHANNELS].copy_from_slice(&color);
    };
    for p in mosaic.patches() {
        for d in 0..p.size {
            paint(p.x + d, p.y);
            paint(p.x, p.y + d);
        }
    }
    for d in 0..w {
        paint(d, h - 1);
    }
    for d in 0..h {
        paint(w - 1, d);
    }
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let img = quadtok::image::load_ppm(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let text = std::fs::read_to_string(&args.mosaic).with_context(|| format!("reading {}", args.mosaic.display()))?;
    let mosaic = PatchMosaic::from_json(&text).with_context(|| format!("parsing {}", args.mosaic.display()))?;
    let mut data = render_mosaic(&img, &mosaic, args.s_rep, args.upsample.into())?;
    if args.grid {
        draw_grid(&mut data, &mosaic, parse_color(&args.grid_color)?);
    }
    let out = Image::new(img.height(), img.width(), data)?;
    save_ppm(&out, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

/// One grey-to-yellow heatmap per candidate size, scores normalised by the
/// largest score of that size.
pub fn write_heatmaps(dir: &Path, stem: &str, h: usize, w: usize, scores: &PatchScores) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut sizes: Vec<usize> = scores.iter().map(|(p, _)| p.size).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    for size in sizes {
        let max = scores
            .iter()
            .filter(|(p, _)| p.size == size)
            .fold(0.0f64, |m, (_, v)| m.max(v));
        let mut data = vec![0.0f32; h * w * CHANNELS];
        for (p, v) in scores.iter().filter(|(p, _)| p.size == size) {
            let t = if max > 0.0 { (v / max) as f32 } else { 0.0 };
            let color = [t, t, t * t];
            for y in p.y..(p.y + p.size).min(h) {
                for x in p.x..(p.x + p.size).min(w) {
                    let i = (y * w + x) * CHANNELS;
                    data[i..i + CHANNELS].copy_from_slice(&color);
                }
            }
        }
        let path = dir.join(format!("{stem}.heat{size}.ppm"));
        save_ppm(&Image::new(h, w, data)?, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
