//! Quadtree patch mosaics.
//!
//! A mosaic starts as a uniform grid of `s_max` patches and is refined by
//! repeatedly replacing the highest-scoring splittable patch with its four
//! quadrants until it holds the requested number of patches. Patches are
//! kept in z-order (Morton order over `s_min` cells), which keeps the four
//! children of a split contiguous at their parent's position.

mod build;
mod zorder;

pub use build::{
    build_mosaic, build_mosaic_batch, build_mosaic_from_scores, MosaicBuilder, SplitTrace,
};
pub use zorder::{morton2, morton2_decode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on grid coordinates (in `s_min` cells) a [`ZKey`] can encode.
pub const MAX_CELLS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRect {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl PatchRect {
    pub const fn new(x: usize, y: usize, size: usize) -> Self {
        PatchRect { x, y, size }
    }

    /// The four half-size quadrants in z-order: TL, TR, BL, BR.
    pub fn quadrants(&self) -> [PatchRect; 4] {
        let h = self.size / 2;
        [
            PatchRect::new(self.x, self.y, h),
            PatchRect::new(self.x + h, self.y, h),
            PatchRect::new(self.x, self.y + h, h),
            PatchRect::new(self.x + h, self.y + h, h),
        ]
    }

    pub fn area(&self) -> usize {
        self.size * self.size
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.size && y >= self.y && y < self.y + self.size
    }

    pub fn zkey(&self, unit: usize) -> ZKey {
        ZKey::new(self, unit)
    }
}

/// Z-order key of a patch: Morton code of its top-left `unit` cell, with a
/// low-byte suffix that sorts a parent just ahead of its first child.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZKey(pub u64);

impl ZKey {
    pub fn new(patch: &PatchRect, unit: usize) -> Self {
        debug_assert!(unit > 0 && patch.x % unit == 0 && patch.y % unit == 0);
        debug_assert!(patch.size >= unit && (patch.size / unit).is_power_of_two());
        let level = (patch.size / unit).trailing_zeros() as u64;
        let code = morton2((patch.x / unit) as u32, (patch.y / unit) as u32);
        ZKey((code << 8) | (255 - level))
    }

    pub fn morton(&self) -> u64 {
        self.0 >> 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadtreeConfig {
    pub s_min: usize,
    pub s_max: usize,
    /// Requested number of patches `L`.
    pub target_patches: usize,
    /// Reject `L` values the split loop cannot hit exactly. When false the
    /// loop stops at the first count `>= L`, or at the full split.
    pub strict: bool,
}

impl QuadtreeConfig {
    pub fn new(s_min: usize, s_max: usize, target_patches: usize) -> Self {
        QuadtreeConfig {
            s_min,
            s_max,
            target_patches,
            strict: true,
        }
    }

    pub fn lenient(mut self) -> Self {
        self.strict = false;
        self
    }

    pub fn with_target(mut self, target_patches: usize) -> Self {
        self.target_patches = target_patches;
        self
    }

    /// Checks the size ladder alone.
    pub fn validate_sizes(&self) -> Result<()> {
        if self.s_min == 0 {
            return Err(Error::Config("s_min must be positive".into()));
        }
        if self.s_max < self.s_min
            || self.s_max % self.s_min != 0
            || !(self.s_max / self.s_min).is_power_of_two()
        {
            return Err(Error::Config(format!(
                "s_max ({}) must be s_min ({}) times a power of two",
                self.s_max, self.s_min
            )));
        }
        Ok(())
    }

    /// Patch counts of the initial grid and of the fully split mosaic.
    pub fn count_range(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate_sizes()?;
        if height % self.s_max != 0 || width % self.s_max != 0 {
            return Err(Error::Dimension(format!(
                "s_max {} does not divide image {}x{}",
                self.s_max, height, width
            )));
        }
        if height / self.s_min >= MAX_CELLS || width / self.s_min >= MAX_CELLS {
            return Err(Error::Dimension("image too large for z-order keys".into()));
        }
        let initial = (height / self.s_max) * (width / self.s_max);
        let full = (height / self.s_min) * (width / self.s_min);
        Ok((initial, full))
    }

    /// Number of splits the loop will perform on an image of this size.
    pub fn splits_for(&self, height: usize, width: usize) -> Result<usize> {
        let (initial, full) = self.count_range(height, width)?;
        let l = self.target_patches;
        let max_splits = (full - initial) / 3;
        if self.strict {
            if l < initial || l > full || (l - initial) % 3 != 0 {
                return Err(Error::Config(format!(
                    "{l} patches is not reachable: valid counts are {initial} + 3k up to {full}"
                )));
            }
            Ok((l - initial) / 3)
        } else {
            Ok(l.saturating_sub(initial).div_ceil(3).min(max_splits))
        }
    }
}

/// Non-overlapping square patches exactly covering an image, in z-order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMosaic {
    height: usize,
    width: usize,
    patches: Vec<PatchRect>,
}

impl PatchMosaic {
    /// Uniform grid of `s_max` patches.
    pub fn initial_grid(height: usize, width: usize, s_max: usize) -> Result<Self> {
        if s_max == 0 || height == 0 || width == 0 || height % s_max != 0 || width % s_max != 0 {
            return Err(Error::Dimension(format!(
                "patch size {s_max} does not tile a {height}x{width} image"
            )));
        }
        let mut patches: Vec<PatchRect> = (0..height / s_max)
            .flat_map(|r| (0..width / s_max).map(move |c| PatchRect::new(c * s_max, r * s_max, s_max)))
            .collect();
        patches.sort_by_key(|p| p.zkey(s_max));
        Ok(PatchMosaic {
            height,
            width,
            patches,
        })
    }

    /// Wraps a patch list, checking alignment and exact cover and putting
    /// the patches into canonical order.
    pub fn from_patches(height: usize, width: usize, patches: Vec<PatchRect>) -> Result<Self> {
        let mut mosaic = PatchMosaic {
            height,
            width,
            patches,
        };
        mosaic.validate()?;
        mosaic.patches = mosaic.canonical_order();
        Ok(mosaic)
    }

    pub(crate) fn from_sorted_unchecked(height: usize, width: usize, patches: Vec<PatchRect>) -> Self {
        PatchMosaic {
            height,
            width,
            patches,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patches(&self) -> &[PatchRect] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    fn unit(&self) -> usize {
        self.patches.iter().map(|p| p.size).min().unwrap_or(1)
    }

    pub fn splittable(&self, s_min: usize) -> Vec<PatchRect> {
        self.patches
            .iter()
            .copied()
            .filter(|p| p.size >= 2 * s_min)
            .collect()
    }

    /// Patches sorted by z-order key. Stored mosaics are already in this
    /// order, so this is a stable re-sort.
    pub fn canonical_order(&self) -> Vec<PatchRect> {
        let unit = self.unit();
        let mut out = self.patches.clone();
        out.sort_by_key(|p| p.zkey(unit));
        out
    }

    /// Replaces `patch` by its quadrants at the same position in the order.
    pub fn split_patch(&self, patch: PatchRect, s_min: usize) -> Result<PatchMosaic> {
        let mut next = self.clone();
        next.split_in_place(patch, s_min)?;
        Ok(next)
    }

    pub fn split_in_place(&mut self, patch: PatchRect, s_min: usize) -> Result<()> {
        if patch.size < 2 * s_min || patch.size % 2 != 0 {
            return Err(Error::Contract(format!(
                "patch {patch:?} is too small to split with s_min {s_min}"
            )));
        }
        let idx = self
            .patches
            .iter()
            .position(|p| *p == patch)
            .ok_or_else(|| Error::Contract(format!("patch {patch:?} is not in the mosaic")))?;
        self.patches.splice(idx..=idx, patch.quadrants());
        Ok(())
    }

    /// Per-pixel ownership tally: every pixel must belong to exactly one patch.
    pub fn check_exact_cover(&self) -> Result<()> {
        let mut owners = vec![0u16; self.height * self.width];
        for p in &self.patches {
            if p.size == 0 || p.x + p.size > self.width || p.y + p.size > self.height {
                return Err(Error::Contract(format!("patch {p:?} leaves the image")));
            }
            for y in p.y..p.y + p.size {
                for o in &mut owners[y * self.width + p.x..y * self.width + p.x + p.size] {
                    *o = o.saturating_add(1);
                }
            }
        }
        if let Some(i) = owners.iter().position(|&o| o != 1) {
            let what = if owners[i] == 0 { "uncovered" } else { "covered twice" };
            return Err(Error::Contract(format!(
                "pixel ({}, {}) is {what}",
                i % self.width,
                i / self.width
            )));
        }
        Ok(())
    }

    /// Alignment and exact-cover checks.
    pub fn validate(&self) -> Result<()> {
        let unit = self.unit();
        for p in &self.patches {
            if p.size == 0 || p.x % p.size != 0 || p.y % p.size != 0 {
                return Err(Error::Contract(format!("patch {p:?} is not quadrant-aligned")));
            }
            if p.size % unit != 0 || !(p.size / unit).is_power_of_two() {
                return Err(Error::Contract(format!(
                    "patch size {} is not a power-of-two multiple of {unit}",
                    p.size
                )));
            }
        }
        self.check_exact_cover()
    }

    /// Patch area per edge size, keyed by size, as covered pixel counts.
    pub fn area_by_size(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut out = std::collections::BTreeMap::new();
        for p in &self.patches {
            *out.entry(p.size).or_insert(0) += p.area();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MosaicJson::from(self)).expect("mosaic serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MosaicJson = serde_json::from_str(s)?;
        let patches = raw
            .patches
            .into_iter()
            .map(|[x, y, size]| PatchRect::new(x, y, size))
            .collect();
        PatchMosaic::from_patches(raw.height, raw.width, patches)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MosaicJson {
    height: usize,
    width: usize,
    patches: Vec<[usize; 3]>,
}

impl From<&PatchMosaic> for MosaicJson {
    fn from(m: &PatchMosaic) -> Self {
        MosaicJson {
            height: m.height,
            width: m.width,
            patches: m.patches.iter().map(|p| [p.x, p.y, p.size]).collect(),
        }
    }
}

/// Every patch of the full quadtree that is large enough to split, in
/// z-order. These are the only patches a scorer is ever asked about.
pub fn candidate_patches(height: usize, width: usize, cfg: &QuadtreeConfig) -> Result<Vec<PatchRect>> {
    cfg.count_range(height, width)?;
    let mut out = Vec::new();
    let mut size = cfg.s_max;
    while size >= 2 * cfg.s_min {
        for r in 0..height / size {
            for c in 0..width / size {
                out.push(PatchRect::new(c * size, r * size, size));
            }
        }
        size /= 2;
    }
    out.sort_by_key(|p| p.zkey(cfg.s_min));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_grid_counts() {
        assert_eq!(PatchMosaic::initial_grid(256, 256, 64).unwrap().len(), 16);
        let one = PatchMosaic::initial_grid(64, 64, 64).unwrap();
        assert_eq!(one.patches(), &[PatchRect::new(0, 0, 64)]);
        let rect = PatchMosaic::initial_grid(128, 256, 64).unwrap();
        assert_eq!(rect.len(), 8);
        rect.check_exact_cover().unwrap();
        assert!(PatchMosaic::initial_grid(100, 256, 64).is_err());
    }

    #[test]
    fn canonical_order_of_two_by_two() {
        let m = PatchMosaic::initial_grid(128, 128, 64).unwrap();
        let order: Vec<(usize, usize)> = m.patches().iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(order, vec![(0, 0), (64, 0), (0, 64), (64, 64)]);
    }

    #[test]
    fn split_inserts_children_in_place() {
        let m = PatchMosaic::initial_grid(256, 256, 64).unwrap();
        let target = PatchRect::new(64, 0, 64);
        let q: Vec<_> = target.quadrants().iter().map(|p| (p.x, p.y, p.size)).collect();
        assert_eq!(q, vec![(64, 0, 32), (96, 0, 32), (64, 32, 32), (96, 32, 32)]);

        let s = m.split_patch(target, 16).unwrap();
        assert_eq!(s.len(), 19);
        s.check_exact_cover().unwrap();
        assert_eq!(&s.patches()[1..5], &target.quadrants());
        assert_eq!(s.canonical_order(), s.patches());

        let first = m.split_patch(m.patches()[0], 16).unwrap();
        assert_eq!(&first.patches()[0..4], &m.patches()[0].quadrants());
    }

    #[test]
    fn split_errors() {
        let m = PatchMosaic::initial_grid(64, 64, 32).unwrap();
        assert!(matches!(
            m.split_patch(PatchRect::new(0, 0, 64), 16),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            m.split_patch(PatchRect::new(0, 0, 32), 32),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn splittable_sets() {
        let m = PatchMosaic::initial_grid(256, 256, 64).unwrap();
        assert_eq!(m.splittable(16).len(), 16);
        let fine = PatchMosaic::initial_grid(256, 256, 16).unwrap();
        assert!(fine.splittable(16).is_empty());
    }

    #[test]
    fn eighty_candidates_for_default_config() {
        let cfg = QuadtreeConfig::new(16, 64, 64);
        let c = candidate_patches(256, 256, &cfg).unwrap();
        assert_eq!(c.len(), 80);
        assert_eq!(c.iter().filter(|p| p.size == 64).count(), 16);
    }

    #[test]
    fn reachability() {
        let cfg = QuadtreeConfig::new(16, 64, 79);
        assert_eq!(cfg.splits_for(256, 256).unwrap(), 21);
        assert!(cfg.with_target(80).splits_for(256, 256).is_err());
        assert!(cfg.with_target(259).splits_for(256, 256).is_err());
        assert!(cfg.with_target(10).splits_for(256, 256).is_err());
        assert_eq!(cfg.with_target(80).lenient().splits_for(256, 256).unwrap(), 22);
        assert_eq!(cfg.with_target(1000).lenient().splits_for(256, 256).unwrap(), 80);
        assert!(QuadtreeConfig::new(16, 48, 16).validate_sizes().is_err());
        assert!(QuadtreeConfig::new(12, 48, 16).validate_sizes().is_ok());
    }

    #[test]
    fn zkey_parent_precedes_children() {
        let parent = PatchRect::new(64, 64, 64);
        let kids = parent.quadrants();
        let pk = parent.zkey(16);
        assert!(kids.iter().all(|k| k.zkey(16) > pk));
        let next = PatchRect::new(128, 64, 64).zkey(16);
        assert!(kids.iter().all(|k| k.zkey(16) < next));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = PatchMosaic::initial_grid(128, 128, 64)
            .unwrap()
            .split_patch(PatchRect::new(64, 64, 64), 16)
            .unwrap();
        let s = m.to_json();
        assert!(s.starts_with(r#"{"height":128,"width":128,"patches":[[0,0,64],"#));
        let back = PatchMosaic::from_json(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), s);
        let overlapping = r#"{"height":64,"width":64,"patches":[[0,0,64],[0,0,32]]}"#;
        assert!(PatchMosaic::from_json(overlapping).is_err());
        let gap = r#"{"height":64,"width":64,"patches":[[0,0,32]]}"#;
        assert!(PatchMosaic::from_json(gap).is_err());
    }
}
