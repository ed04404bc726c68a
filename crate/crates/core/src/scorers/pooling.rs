use crate::error::{Error, Result};
use crate::quadtree::PatchRect;

/// Single-channel grid laid over an image; cell `(r, c)` covers
/// `image_h / rows` by `image_w / cols` pixels, possibly fractional.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "grid {rows}x{cols} with {} values",
                data.len()
            )));
        }
        Ok(Grid { rows, cols, data })
    }
}

// Overlap lengths of [lo, hi) with each cell of size `cell`, as (index, length).
fn overlaps(lo: f64, hi: f64, cell: f64, n: usize) -> impl Iterator<Item = (usize, f64)> {
    let first = ((lo / cell).floor() as usize).min(n - 1);
    let last = ((hi / cell).ceil() as usize).clamp(first + 1, n);
    (first..last).filter_map(move |i| {
        let a = (i as f64 * cell).max(lo);
        let b = ((i + 1) as f64 * cell).min(hi);
        (b > a).then_some((i, b - a))
    })
}

/// Area-weighted mean of `grid` over the patch footprint.
pub fn pool_grid(grid: &Grid, image_h: usize, image_w: usize, patch: &PatchRect) -> Result<f64> {
    if patch.x + patch.size > image_w || patch.y + patch.size > image_h || patch.size == 0 {
        return Err(Error::Dimension(format!(
            "patch {patch:?} outside {image_w}x{image_h} image"
        )));
    }
    let cell_h = image_h as f64 / grid.rows as f64;
    let cell_w = image_w as f64 / grid.cols as f64;
    let (x0, x1) = (patch.x as f64, (patch.x + patch.size) as f64);
    let (y0, y1) = (patch.y as f64, (patch.y + patch.size) as f64);
    let mut sum = 0.0f64;
    let mut weight = 0.0f64;
    for (r, wy) in overlaps(y0, y1, cell_h, grid.rows) {
        for (c, wx) in overlaps(x0, x1, cell_w, grid.cols) {
            let w = wy * wx;
            sum += w * grid.data[r * grid.cols + c] as f64;
            weight += w;
        }
    }
    Ok(sum / weight)
}
