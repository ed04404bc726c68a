//! Kendall's tau-b and Spearman's rho over patch score vectors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Dimension("correlation needs at least two observations".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("correlation input"));
    }
    Ok(())
}

/// Sum of t(t-1)/2 over runs of equal adjacent values.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

// Stable merge sort of `v` counting strict inversions.
fn sort_counting_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        sort_counting_inversions(l, bl) + sort_counting_inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Tie-corrected Kendall's tau-b in O(n log n) (Knight's algorithm).
///
/// `Ok(None)` when either input is constant, where tau-b is undefined.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_pair(a, b)?;
    let n = a.len() as u64;
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    // -0.0 and 0.0 count as a tie, as they do for the `<` comparisons below.
    let key = |v: f64| v + 0.0;
    let ties_a = tied_pairs(idx.iter().map(|&i| key(a[i])));
    let ties_joint = tied_pairs(idx.iter().map(|&i| (key(a[i]), key(b[i]))));
    let mut ys: Vec<f64> = idx.iter().map(|&i| key(b[i])).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = sort_counting_inversions(&mut ys, &mut buf);
    let ties_b = tied_pairs(ys.iter().copied());
    let pairs = n * (n - 1) / 2;
    let span_a = pairs - ties_a;
    let span_b = pairs - ties_b;
    if span_a == 0 || span_b == 0 {
        return Ok(None);
    }
    let s = pairs as i64 - ties_a as i64 - ties_b as i64 + ties_joint as i64 - 2 * discordant as i64;
    Ok(Some(s as f64 / ((span_a as f64) * (span_b as f64)).sqrt()))
}

/// Mid-ranks (1-based; ties share the average of their positions).
pub(crate) fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_pair(a, b)?;
    Ok(pearson(&mid_ranks(a), &mid_ranks(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coefficient {
    Kendall,
    Spearman,
}

impl Coefficient {
    pub fn compute(self, a: &[f64], b: &[f64]) -> Result<Option<f64>> {
        match self {
            Coefficient::Kendall => kendall_tau(a, b),
            Coefficient::Spearman => spearman(a, b),
        }
    }
}

fn check_sets(reference: &[Vec<f64>], other: &[Vec<f64>]) -> Result<()> {
    if reference.len() != other.len() {
        return Err(Error::Dimension(format!(
            "{} reference images but {} candidate images",
            reference.len(),
            other.len()
        )));
    }
    Ok(())
}

/// Fraction of images where `a` correlates strictly better with the
/// reference than `b`. Ties and undefined correlations count only in the
/// denominator.
pub fn fraction_closer(
    reference: &[Vec<f64>],
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    coefficient: Coefficient,
) -> Result<f64> {
    check_sets(reference, a)?;
    check_sets(reference, b)?;
    if reference.is_empty() {
        return Err(Error::Dimension("no images to compare".into()));
    }
    let mut wins = 0usize;
    for ((r, x), y) in reference.iter().zip(a).zip(b) {
        let ca = coefficient.compute(r, x)?;
        let cb = coefficient.compute(r, y)?;
        if let (Some(ca), Some(cb)) = (ca, cb) {
            if ca > cb {
                wins += 1;
            }
        }
    }
    Ok(wins as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerCorrelation {
    pub name: String,
    pub kendall: Vec<Option<f64>>,
    pub spearman: Vec<Option<f64>>,
    /// Mean over images where the coefficient is defined.
    pub mean_kendall: Option<f64>,
    pub mean_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub better: String,
    pub worse: String,
    /// Fraction of images where `better` is strictly closer to the reference.
    pub kendall_fraction: f64,
    pub spearman_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelationReport {
    pub images: usize,
    pub scorers: Vec<ScorerCorrelation>,
    pub comparisons: Vec<PairComparison>,
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Correlates every candidate scorer with the reference, image by image,
/// and compares every ordered pair of candidates.
pub fn rank_correlation_report(
    reference: &[Vec<f64>],
    candidates: &[(String, Vec<Vec<f64>>)],
) -> Result<RankCorrelationReport> {
    let mut scorers = Vec::with_capacity(candidates.len());
    for (name, sets) in candidates {
        check_sets(reference, sets)?;
        let kendall = reference
            .iter()
            .zip(sets)
            .map(|(r, s)| kendall_tau(r, s))
            .collect::<Result<Vec<_>>>()?;
        let spearman = reference
            .iter()
            .zip(sets)
            .map(|(r, s)| spearman(r, s))
            .collect::<Result<Vec<_>>>()?;
        scorers.push(ScorerCorrelation {
            name: name.clone(),
            mean_kendall: mean_defined(&kendall),
            mean_spearman: mean_defined(&spearman),
            kendall,
            spearman,
        });
    }
    let mut comparisons = Vec::new();
    for (i, (na, a)) in candidates.iter().enumerate() {
        for (j, (nb, b)) in candidates.iter().enumerate() {
            if i == j || reference.is_empty() {
                continue;
            }
            comparisons.push(PairComparison {
                better: na.clone(),
                worse: nb.clone(),
                kendall_fraction: fraction_closer(reference, a, b, Coefficient::Kendall)?,
                spearman_fraction: fraction_closer(reference, a, b, Coefficient::Spearman)?,
            });
        }
    }
    Ok(RankCorrelationReport {
        images: reference.len(),
        scorers,
        comparisons,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

impl RankCorrelationReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("images: {}\n", self.images);
        out.push_str(&format!("{:<24} {:>10} {:>10}\n", "scorer", "kendall", "spearman"));
        for s in &self.scorers {
            out.push_str(&format!(
                "{:<24} {:>10} {:>10}\n",
                s.name,
                fmt_opt(s.mean_kendall),
                fmt_opt(s.mean_spearman)
            ));
        }
        if !self.comparisons.is_empty() {
            out.push_str(&format!(
                "\n{:<24} {:<24} {:>10} {:>10}\n",
                "closer", "than", "kendall", "spearman"
            ));
            for c in &self.comparisons {
                out.push_str(&format!(
                    "{:<24} {:<24} {:>9.1}% {:>9.1}%\n",
                    c.better,
                    c.worse,
                    100.0 * c.kendall_fraction,
                    100.0 * c.spearman_fraction
                ));
            }
        }
        out
    }
}
