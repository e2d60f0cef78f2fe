//! Dice scoring, mean ± std aggregation and the Wilcoxon signed-rank test.

use std::fmt;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::LabelMap;

/// `2|P∩G| / (|P|+|G|)` for one class; `None` when the class is absent from
/// both maps.
pub fn dice_score(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<Option<f64>> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::InvalidShape(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.grid().data().iter().zip(gt.grid().data()) {
        let (a, b) = (a == class, b == class);
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    if p + g == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (p + g) as f64))
}

/// Dice of every organ class `1..L`, index 0 holding class 1.
pub fn organ_dice(pred: &LabelMap, gt: &LabelMap) -> Result<Vec<Option<f64>>> {
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} classes, ground truth {}",
            pred.num_classes(),
            gt.num_classes()
        )));
    }
    (1..gt.num_classes())
        .map(|c| dice_score(pred, gt, c as u8))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 when `n == 1`.
    pub std: f64,
    pub n: usize,
    /// False when there was a single score and the std is a placeholder.
    pub std_defined: bool,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

pub fn aggregate(scores: &[f64]) -> Result<Aggregate> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty score list".into()));
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(Aggregate {
            mean,
            std: 0.0,
            n,
            std_defined: false,
        });
    }
    let ss: f64 = scores.iter().map(|s| (s - mean).powi(2)).sum();
    Ok(Aggregate {
        mean,
        std: (ss / (n - 1) as f64).sqrt(),
        n,
        std_defined: true,
    })
}

/// Exact enumeration is used up to this many nonzero differences.
pub const WILCOXON_EXACT_MAX: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wilcoxon {
    /// `min(W+, W−)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
    /// Every difference was zero; `p` is 1.
    pub degenerate: bool,
}

/// Mid-ranks of `values` (1-based), ties sharing the average rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Paired two-sided Wilcoxon signed-rank test on `a − b`.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<Wilcoxon> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("Wilcoxon test needs at least one pair".into()));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidInput("Wilcoxon pairs must be finite".into()));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|&d| d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(Wilcoxon {
            w: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n,
            p: 1.0,
            exact: true,
            degenerate: true,
        });
    }
    let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = mid_ranks(&mags);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);
    let (p, exact) = if n <= WILCOXON_EXACT_MAX {
        (exact_p(&ranks, w), true)
    } else {
        (normal_p(&mags, &ranks, w), false)
    };
    Ok(Wilcoxon {
        w,
        w_plus,
        w_minus,
        n,
        p: p.min(1.0),
        exact,
        degenerate: false,
    })
}

/// Subset-sum counts over doubled mid-ranks give the exact null
/// distribution of W+.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w2 = (2.0 * w).round() as usize;
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| s <= w2 || s >= total - w2)
        .map(|(_, c)| c)
        .sum();
    extreme as f64 / (1u64 << ranks.len()) as f64
}

fn normal_p(mags: &[f64], ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = mags.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn labels(rows: &[&[u8]]) -> LabelMap {
        let h = rows.len();
        let w = rows[0].len();
        let grid = Grid::from_fn(h, w, |y, x| rows[y][x]);
        LabelMap::new(grid, 3).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = labels(&[&[1, 1, 1, 1, 0, 0]]);
        let b = labels(&[&[0, 0, 1, 1, 1, 1]]);
        assert_eq!(dice_score(&a, &a, 1).unwrap(), Some(1.0));
        assert_eq!(dice_score(&a, &b, 1).unwrap(), Some(0.5));
        let c = labels(&[&[0, 0, 0, 0, 1, 1]]);
        assert_eq!(dice_score(&a, &c, 1).unwrap(), Some(0.0));
        assert_eq!(dice_score(&a, &b, 2).unwrap(), None);
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.8, 0.9, 1.0]).unwrap();
        assert!((a.mean - 0.9).abs() < 1e-12 && (a.std - 0.1).abs() < 1e-12);
        assert_eq!(a.to_string(), "0.9000 ± 0.1000");
        let one = aggregate(&[0.7]).unwrap();
        assert_eq!((one.mean, one.std, one.std_defined), (0.7, 0.0, false));
        assert!(matches!(aggregate(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mid_ranks_share_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn wilcoxon_small_cases() {
        let five: Vec<_> = (1..=5).map(|i| (i as f64, 0.0)).collect();
        let r = wilcoxon_signed_rank(&five).unwrap();
        assert_eq!((r.w, r.p), (0.0, 0.0625));
        assert_eq!(wilcoxon_signed_rank(&[(0.3, 0.1)]).unwrap().p, 1.0);
        let zero = wilcoxon_signed_rank(&[(0.5, 0.5), (0.2, 0.2)]).unwrap();
        assert!(zero.degenerate && zero.p == 1.0);
    }

    #[test]
    fn normal_branch_is_in_range() {
        let pairs: Vec<_> = (0..40).map(|i| (i as f64 * 0.1, (i % 7) as f64 * 0.3)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert!(!r.exact && r.p > 0.0 && r.p <= 1.0);
    }
}
