use rayon::prelude::*;

use super::{candidate_patches, morton2, morton2_decode, PatchMosaic, PatchRect, QuadtreeConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scorers::{PatchScorer, PatchScores};

/// Mosaic plus the patches that were split, in split order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTrace {
    pub mosaic: PatchMosaic,
    pub splits: Vec<PatchRect>,
}

const KEY_BITS: u32 = 56;
const KEY_MASK: u64 = (1 << KEY_BITS) - 1;

// Heap priority for a splittable patch at `level` (log2 of its edge in
// `s_min` cells). Orders by score, then level, then smaller Morton code.
// Scores are finite and nonnegative, so their bit patterns sort like the
// values.
fn priority(score: f64, level: u32, morton: u64) -> u128 {
    ((score.to_bits() as u128) << 64) | ((level as u128) << KEY_BITS) | (KEY_MASK - morton) as u128
}

fn unpack(p: u128) -> (u32, u64) {
    (((p >> KEY_BITS) & 0xff) as u32, KEY_MASK - (p as u64 & KEY_MASK))
}

const NO_RANK: u32 = u32::MAX;

// Per-level rank of each splittable patch in the global priority order
// (NO_RANK where no score was given), plus which of them have been split.
struct Level {
    cols: usize,
    rank: Vec<u32>,
    split: Vec<bool>,
}

// Set of queued ranks; the argmax patch is the lowest set bit.
struct RankQueue {
    words: Vec<u64>,
    summary: Vec<u64>,
    len: usize,
}

impl RankQueue {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        RankQueue {
            words: vec![0; words],
            summary: vec![0; words.div_ceil(64)],
            len: 0,
        }
    }

    fn insert(&mut self, rank: u32) {
        let (w, b) = (rank as usize / 64, rank % 64);
        if self.words[w] & (1 << b) == 0 {
            self.words[w] |= 1 << b;
            self.summary[w / 64] |= 1 << (w % 64);
            self.len += 1;
        }
    }

    fn pop_min(&mut self) -> Option<u32> {
        let s = self.summary.iter().position(|&s| s != 0)?;
        let w = s * 64 + self.summary[s].trailing_zeros() as usize;
        let b = self.words[w].trailing_zeros();
        self.words[w] &= !(1 << b);
        if self.words[w] == 0 {
            self.summary[s] &= !(1 << (w % 64));
        }
        self.len -= 1;
        Some((w * 64) as u32 + b)
    }
}

impl Level {
    fn index(&self, level: u32, cx: u32, cy: u32) -> usize {
        (cy >> level) as usize * self.cols + (cx >> level) as usize
    }
}

/// Incremental form of the greedy split loop, one split per [`step`](Self::step).
pub struct MosaicBuilder {
    height: usize,
    width: usize,
    unit: usize,
    top: u32,
    // Index `level - 1`.
    levels: Vec<Level>,
    roots: Vec<(u32, u32)>,
    // Splittable patches by descending priority.
    order: Vec<u128>,
    queue: RankQueue,
    splits: Vec<PatchRect>,
    target_splits: usize,
}

impl MosaicBuilder {
    pub fn new(height: usize, width: usize, cfg: &QuadtreeConfig, scores: &PatchScores) -> Result<Self> {
        let target_splits = cfg.splits_for(height, width)?;
        let grid = PatchMosaic::initial_grid(height, width, cfg.s_max)?;
        let top = (cfg.s_max / cfg.s_min).trailing_zeros();
        let mut levels: Vec<Level> = (1..=top)
            .map(|level| {
                let size = cfg.s_min << level;
                let len = (width / size) * (height / size);
                Level {
                    cols: width / size,
                    rank: vec![NO_RANK; len],
                    split: vec![false; len],
                }
            })
            .collect();
        let mut order = Vec::with_capacity(scores.len());
        for (p, v) in scores.iter() {
            if p.size < 2 * cfg.s_min || p.size > cfg.s_max || p.size % cfg.s_min != 0 {
                continue;
            }
            let ratio = p.size / cfg.s_min;
            if !ratio.is_power_of_two() || p.x % p.size != 0 || p.y % p.size != 0 {
                continue;
            }
            let level = ratio.trailing_zeros();
            let lv = &levels[level as usize - 1];
            let (gx, gy) = (p.x / p.size, p.y / p.size);
            if gx < lv.cols && gy * lv.cols + gx < lv.rank.len() {
                order.push(priority(v, level, morton2((p.x / cfg.s_min) as u32, (p.y / cfg.s_min) as u32)));
            }
        }
        order.sort_unstable_by(|a, b| b.cmp(a));
        for (r, &p) in order.iter().enumerate() {
            let (level, morton) = unpack(p);
            let (cx, cy) = morton2_decode(morton);
            let lv = &mut levels[level as usize - 1];
            let i = lv.index(level, cx, cy);
            lv.rank[i] = r as u32;
        }
        let mut builder = MosaicBuilder {
            height,
            width,
            unit: cfg.s_min,
            top,
            levels,
            roots: grid
                .patches()
                .iter()
                .map(|p| ((p.x / cfg.s_min) as u32, (p.y / cfg.s_min) as u32))
                .collect(),
            queue: RankQueue::new(order.len()),
            order,
            splits: Vec::with_capacity(target_splits),
            target_splits,
        };
        for i in 0..builder.roots.len() {
            let (cx, cy) = builder.roots[i];
            builder.offer(top, cx, cy)?;
        }
        Ok(builder)
    }

    fn rect(&self, level: u32, cx: u32, cy: u32) -> PatchRect {
        PatchRect::new(cx as usize * self.unit, cy as usize * self.unit, self.unit << level)
    }

    // Queues a newly created patch if it can still be split.
    fn offer(&mut self, level: u32, cx: u32, cy: u32) -> Result<()> {
        if level == 0 {
            return Ok(());
        }
        let lv = &self.levels[level as usize - 1];
        let rank = lv.rank[lv.index(level, cx, cy)];
        if rank == NO_RANK {
            return Err(Error::Contract(format!(
                "scorer produced no score for splittable patch {:?}",
                self.rect(level, cx, cy)
            )));
        }
        self.queue.insert(rank);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.roots.len() + 3 * self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn splits(&self) -> &[PatchRect] {
        &self.splits
    }

    pub fn is_done(&self) -> bool {
        self.splits.len() >= self.target_splits || self.queue.len == 0
    }

    /// Splits the current argmax patch. Returns `None` once the target count
    /// is reached or nothing is left to split.
    pub fn step(&mut self) -> Result<Option<PatchRect>> {
        if self.is_done() {
            return Ok(None);
        }
        let best = self.queue.pop_min().expect("queue checked non-empty");
        let (level, morton) = unpack(self.order[best as usize]);
        let (cx, cy) = morton2_decode(morton);
        let lv = &mut self.levels[level as usize - 1];
        let i = lv.index(level, cx, cy);
        lv.split[i] = true;
        let half = 1u32 << (level - 1);
        for (dx, dy) in [(0, 0), (half, 0), (0, half), (half, half)] {
            self.offer(level - 1, cx + dx, cy + dy)?;
        }
        let patch = self.rect(level, cx, cy);
        self.splits.push(patch);
        Ok(Some(patch))
    }

    fn is_split(&self, level: u32, cx: u32, cy: u32) -> bool {
        level > 0 && {
            let lv = &self.levels[level as usize - 1];
            lv.split[lv.index(level, cx, cy)]
        }
    }

    /// Current leaf set in canonical order.
    pub fn mosaic(&self) -> PatchMosaic {
        let mut patches = Vec::with_capacity(self.len());
        let mut stack: Vec<(u32, u32, u32)> = self.roots.iter().rev().map(|&(x, y)| (self.top, x, y)).collect();
        while let Some((level, cx, cy)) = stack.pop() {
            if self.is_split(level, cx, cy) {
                let half = 1u32 << (level - 1);
                for (dx, dy) in [(half, half), (0, half), (half, 0), (0, 0)] {
                    stack.push((level - 1, cx + dx, cy + dy));
                }
            } else {
                patches.push(self.rect(level, cx, cy));
            }
        }
        PatchMosaic::from_sorted_unchecked(self.height, self.width, patches)
    }

    pub fn finish(mut self) -> Result<SplitTrace> {
        while self.step()?.is_some() {}
        Ok(SplitTrace {
            mosaic: self.mosaic(),
            splits: self.splits,
        })
    }
}

/// Runs the split loop over precomputed scores.
pub fn build_mosaic_from_scores(
    height: usize,
    width: usize,
    cfg: &QuadtreeConfig,
    scores: &PatchScores,
) -> Result<PatchMosaic> {
    Ok(MosaicBuilder::new(height, width, cfg, scores)?.finish()?.mosaic)
}

/// Scores every candidate patch of `img` once, then runs the split loop.
pub fn build_mosaic(
    img: &Image,
    cfg: &QuadtreeConfig,
    scorer: &(impl PatchScorer + ?Sized),
) -> Result<PatchMosaic> {
    let candidates = candidate_patches(img.height(), img.width(), cfg)?;
    let scores = scorer.score(img, &candidates)?;
    build_mosaic_from_scores(img.height(), img.width(), cfg, &scores)
}

/// Per-image [`build_mosaic`] over a batch of equally sized images,
/// distributed over the current rayon pool. Output order follows input order.
pub fn build_mosaic_batch(
    imgs: &[Image],
    cfg: &QuadtreeConfig,
    scorer: &(impl PatchScorer + ?Sized),
) -> Result<Vec<PatchMosaic>> {
    if let Some(first) = imgs.first() {
        if let Some(bad) = imgs
            .iter()
            .find(|i| (i.height(), i.width()) != (first.height(), first.width()))
        {
            return Err(Error::Dimension(format!(
                "batch mixes {}x{} and {}x{} images",
                first.height(),
                first.width(),
                bad.height(),
                bad.width()
            )));
        }
    }
    imgs.par_iter().map(|img| build_mosaic(img, cfg, scorer)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::PatchScores;

    fn constant_scores(h: usize, w: usize, cfg: &QuadtreeConfig, v: f64) -> PatchScores {
        let c = candidate_patches(h, w, cfg).unwrap();
        PatchScores::new(c.into_iter().map(|p| (p, v))).unwrap()
    }

    #[test]
    fn tie_break_splits_coarse_patches_first() {
        let cfg = QuadtreeConfig::new(16, 64, 64);
        let scores = constant_scores(256, 256, &cfg, 0.0);
        let m = build_mosaic_from_scores(256, 256, &cfg, &scores).unwrap();
        assert_eq!(m.len(), 64);
        assert!(m.patches().iter().all(|p| p.size == 32));

        // Hand simulation of the tie-break: splits follow z-order of the grid.
        let trace = MosaicBuilder::new(256, 256, &cfg, &scores).unwrap().finish().unwrap();
        let grid = PatchMosaic::initial_grid(256, 256, 64).unwrap();
        assert_eq!(trace.splits, grid.patches());
    }

    #[test]
    fn full_split_ignores_scores() {
        let cfg = QuadtreeConfig::new(16, 64, 256);
        let scores = constant_scores(256, 256, &cfg, 1.0);
        let trace = MosaicBuilder::new(256, 256, &cfg, &scores).unwrap().finish().unwrap();
        assert_eq!(trace.splits.len(), 80);
        assert_eq!(trace.mosaic, PatchMosaic::initial_grid(256, 256, 16).unwrap());
    }

    #[test]
    fn picks_the_highest_score() {
        let cfg = QuadtreeConfig::new(16, 64, 22);
        let c = candidate_patches(256, 256, &cfg).unwrap();
        let hot = PatchRect::new(128, 64, 64);
        let hot_child = PatchRect::new(160, 96, 32);
        let scores = PatchScores::new(c.into_iter().map(|p| {
            let v = if p == hot { 5.0 } else if p == hot_child { 4.0 } else { 0.1 };
            (p, v)
        }))
        .unwrap();
        let trace = MosaicBuilder::new(256, 256, &cfg, &scores).unwrap().finish().unwrap();
        assert_eq!(&trace.splits[..2], &[hot, hot_child]);
        assert_eq!(trace.mosaic.len(), 22);
    }

    #[test]
    fn missing_score_is_an_error() {
        let cfg = QuadtreeConfig::new(16, 64, 19);
        let scores = PatchScores::new([(PatchRect::new(0, 0, 64), 1.0)]).unwrap();
        assert!(matches!(
            build_mosaic_from_scores(256, 256, &cfg, &scores),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn lenient_overshoots() {
        let cfg = QuadtreeConfig::new(16, 64, 20).lenient();
        let scores = constant_scores(256, 256, &cfg, 0.0);
        assert_eq!(build_mosaic_from_scores(256, 256, &cfg, &scores).unwrap().len(), 22);
        let strict = QuadtreeConfig::new(16, 64, 20);
        assert!(matches!(
            build_mosaic_from_scores(256, 256, &strict, &scores),
            Err(Error::Config(_))
        ));
    }
}
