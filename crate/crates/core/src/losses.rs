//! Segmentation, contour and distance objectives and their unweighted sum.
//!
//! Every loss has two routes: a direct evaluation on plain tensors and a
//! tape-recorded version used for training. Both are pixel-mean normalized.

use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::shape_targets::{ContourMap, DistanceMap};
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to probabilities before the logarithm.
pub const LOG_CLAMP: f64 = 1e-7;
/// Smoothing term on both sides of the soft dice ratio.
pub const DICE_EPS: f64 = 1e-7;

/// Per-pixel class probabilities, `L×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap(Tensor);

impl ProbabilityMap {
    pub fn new(probs: Tensor) -> Result<Self> {
        let (l, h, w) = probs.dims3()?;
        if l < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {l}")));
        }
        let hw = h * w;
        let d = probs.data();
        for px in 0..hw {
            let mut total = 0.0;
            for c in 0..l {
                let v = d[c * hw + px];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!("probability {v} outside [0, 1]")));
                }
                total += v;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "probabilities at pixel {px} sum to {total}"
                )));
            }
        }
        Ok(Self(probs))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.shape()[0]
    }
}

/// One-hot ground truth, `L×H×W`, exactly one 1 per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotTarget(Tensor);

impl OneHotTarget {
    pub fn new(values: Tensor) -> Result<Self> {
        let (l, h, w) = values.dims3()?;
        let hw = h * w;
        let d = values.data();
        for px in 0..hw {
            let mut ones = 0;
            for c in 0..l {
                match d[c * hw + px] {
                    0.0 => {}
                    1.0 => ones += 1,
                    v => return Err(Error::InvalidInput(format!("one-hot entry {v}"))),
                }
            }
            if ones != 1 {
                return Err(Error::InvalidInput(format!("pixel {px} has {ones} hot classes")));
            }
        }
        Ok(Self(values))
    }

    pub fn from_class_ids(ids: &[u8], classes: usize, height: usize, width: usize) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{} class ids for a {height}×{width} target",
                ids.len()
            )));
        }
        let hw = height * width;
        let mut data = vec![0.0; classes * hw];
        for (px, &c) in ids.iter().enumerate() {
            if c as usize >= classes {
                return Err(Error::InvalidInput(format!("class {c} outside [0, {classes})")));
            }
            data[c as usize * hw + px] = 1.0;
        }
        Ok(Self(Tensor::new(vec![classes, height, width], data)?))
    }

    pub fn from_labels(labels: &LabelMap) -> Self {
        Self::from_class_ids(labels.labels(), labels.num_classes(), labels.height(), labels.width())
            .expect("label maps are valid by construction")
    }

    /// Two classes: 0 = not contour, 1 = contour.
    pub fn from_contour(contour: &ContourMap) -> Self {
        let g = contour.grid();
        let ids: Vec<u8> = g.data().iter().map(|&c| c as u8).collect();
        Self::from_class_ids(&ids, 2, g.height(), g.width()).expect("binary ids")
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.shape()[0]
    }
}

fn check_pair(p: &ProbabilityMap, g: &OneHotTarget) -> Result<()> {
    if p.0.shape()[1..] != g.0.shape()[1..] {
        return Err(Error::InvalidShape(format!(
            "prediction {:?} vs target {:?}",
            p.0.shape(),
            g.0.shape()
        )));
    }
    if p.classes() != g.classes() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} classes, target {}",
            p.classes(),
            g.classes()
        )));
    }
    Ok(())
}

/// `-(1/N) Σ_x Σ_l g_l(x) log max(p_l(x), 1e-7)`.
pub fn cross_entropy(p: &ProbabilityMap, g: &OneHotTarget) -> Result<f64> {
    check_pair(p, g)?;
    let n = (g.0.numel() / g.classes()) as f64;
    let total: f64 = p
        .0
        .data()
        .iter()
        .zip(g.0.data())
        .map(|(&pv, &gv)| gv * pv.max(LOG_CLAMP).ln())
        .sum();
    Ok(-total / n)
}

/// Class-averaged `(2Σpg + ε) / (Σp² + Σg² + ε)`.
pub fn soft_dice(p: &ProbabilityMap, g: &OneHotTarget) -> Result<f64> {
    check_pair(p, g)?;
    let l = g.classes();
    let hw = g.0.numel() / l;
    let mut total = 0.0;
    for (pc, gc) in p.0.data().chunks_exact(hw).zip(g.0.data().chunks_exact(hw)) {
        let mut inter = 0.0;
        let mut p2 = 0.0;
        let mut g2 = 0.0;
        for (&pv, &gv) in pc.iter().zip(gc) {
            inter += pv * gv;
            p2 += pv * pv;
            g2 += gv * gv;
        }
        total += (2.0 * inter + DICE_EPS) / (p2 + g2 + DICE_EPS);
    }
    Ok(total / l as f64)
}

/// Cross-entropy minus soft dice; −1 at a perfect prediction.
pub fn seg_loss(p: &ProbabilityMap, g: &OneHotTarget) -> Result<f64> {
    Ok(cross_entropy(p, g)? - soft_dice(p, g)?)
}

/// [`seg_loss`] restricted to the two-class contour problem.
pub fn contour_loss(p: &ProbabilityMap, g: &OneHotTarget) -> Result<f64> {
    if p.classes() != 2 || g.classes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "contour loss is two-class, got {} / {}",
            p.classes(),
            g.classes()
        )));
    }
    seg_loss(p, g)
}

fn check_dist(pred: &Tensor, target: &DistanceMap) -> Result<()> {
    let t = target.grid();
    if pred.shape() != [1, t.height(), t.width()] {
        return Err(Error::InvalidShape(format!(
            "distance prediction {:?} vs target {}×{}",
            pred.shape(),
            t.height(),
            t.width()
        )));
    }
    Ok(())
}

/// Mean squared error between the predicted and target distance maps.
pub fn dist_loss(pred: &Tensor, target: &DistanceMap) -> Result<f64> {
    check_dist(pred, target)?;
    let n = pred.numel() as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.grid().data())
        .map(|(p, g)| (g - p) * (g - p))
        .sum();
    Ok(total / n)
}

/// Which loss terms are active. Segmentation is always required.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSwitches {
    pub seg: bool,
    pub contour: bool,
    pub dist: bool,
}

impl LossSwitches {
    pub const ALL: LossSwitches = LossSwitches {
        seg: true,
        contour: true,
        dist: true,
    };

    fn validate(self) -> Result<()> {
        if !self.seg {
            return Err(Error::InvalidArgument("segmentation loss cannot be disabled".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub seg: f64,
    pub contour: f64,
    pub dist: f64,
    pub total: f64,
}

/// Unit-weight sum of the enabled terms; disabled terms are reported as 0.
pub fn total_loss(seg: f64, contour: f64, dist: f64, switches: LossSwitches) -> Result<LossBreakdown> {
    switches.validate()?;
    let contour = if switches.contour { contour } else { 0.0 };
    let dist = if switches.dist { dist } else { 0.0 };
    Ok(LossBreakdown {
        seg,
        contour,
        dist,
        total: seg + contour + dist,
    })
}

// Tape-recorded versions.

fn check_probs_var(tape: &Tape, p: Var, g: &OneHotTarget) -> Result<()> {
    let shape = tape.value(p).shape();
    if shape.len() != 3 || shape[1..] != g.0.shape()[1..] {
        return Err(Error::InvalidShape(format!(
            "prediction {shape:?} vs target {:?}",
            g.0.shape()
        )));
    }
    if shape[0] != g.classes() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} classes, target {}",
            shape[0],
            g.classes()
        )));
    }
    Ok(())
}

pub fn cross_entropy_var(tape: &mut Tape, p: Var, g: &OneHotTarget) -> Result<Var> {
    check_probs_var(tape, p, g)?;
    let n = (g.0.numel() / g.classes()) as f64;
    let gv = tape.leaf(g.0.clone());
    let clamped = tape.clamp_min(p, LOG_CLAMP);
    let logs = tape.ln(clamped);
    let picked = tape.mul(logs, gv)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n))
}

pub fn soft_dice_var(tape: &mut Tape, p: Var, g: &OneHotTarget) -> Result<Var> {
    check_probs_var(tape, p, g)?;
    let l = g.classes();
    let hw = g.0.numel() / l;
    let g_sq: Vec<f64> = g
        .0
        .data()
        .chunks_exact(hw)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let gv = tape.leaf(g.0.clone());
    let g_sq = tape.leaf(Tensor::new(vec![l], g_sq)?);
    let pg = tape.mul(p, gv)?;
    let inter = tape.channel_sum(pg)?;
    let inter = tape.scale(inter, 2.0);
    let num = tape.add_scalar(inter, DICE_EPS);
    let p_sq = tape.square(p);
    let p_sq = tape.channel_sum(p_sq)?;
    let den = tape.add(p_sq, g_sq)?;
    let den = tape.add_scalar(den, DICE_EPS);
    let ratio = tape.div(num, den)?;
    Ok(tape.mean(ratio))
}

pub fn seg_loss_var(tape: &mut Tape, p: Var, g: &OneHotTarget) -> Result<Var> {
    let ce = cross_entropy_var(tape, p, g)?;
    let dice = soft_dice_var(tape, p, g)?;
    tape.sub(ce, dice)
}

pub fn contour_loss_var(tape: &mut Tape, p: Var, g: &OneHotTarget) -> Result<Var> {
    if g.classes() != 2 || tape.value(p).shape().first() != Some(&2) {
        return Err(Error::InvalidArgument("contour loss is two-class".into()));
    }
    seg_loss_var(tape, p, g)
}

pub fn dist_loss_var(tape: &mut Tape, pred: Var, target: &DistanceMap) -> Result<Var> {
    check_dist(tape.value(pred), target)?;
    let t = target.grid();
    let tv = tape.leaf(Tensor::new(vec![1, t.height(), t.width()], t.data().to_vec())?);
    let diff = tape.sub(tv, pred)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(ids: &[u8], l: usize, h: usize, w: usize) -> OneHotTarget {
        OneHotTarget::from_class_ids(ids, l, h, w).unwrap()
    }

    fn as_probs(g: &OneHotTarget) -> ProbabilityMap {
        ProbabilityMap::new(g.tensor().clone()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = onehot(&[0, 1, 2, 1, 0, 2], 3, 2, 3);
        let p = as_probs(&g);
        assert_eq!(cross_entropy(&p, &g).unwrap(), 0.0);
        assert_eq!(soft_dice(&p, &g).unwrap(), 1.0);
        assert_eq!(seg_loss(&p, &g).unwrap(), -1.0);
        let mut tape = Tape::new();
        let pv = tape.leaf(g.tensor().clone());
        let loss = seg_loss_var(&mut tape, pv, &g).unwrap();
        assert_eq!(tape.value(loss).data()[0], -1.0);
    }

    #[test]
    fn uniform_prediction_cross_entropy_is_log_l() {
        let g = onehot(&[0, 1, 2, 3], 4, 2, 2);
        let p = ProbabilityMap::new(Tensor::filled(&[4, 2, 2], 0.25)).unwrap();
        assert!((cross_entropy(&p, &g).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn clamp_keeps_cross_entropy_finite() {
        let g = onehot(&[1], 2, 1, 1);
        let p = ProbabilityMap::new(Tensor::new(vec![2, 1, 1], vec![1.0 - 1e-12, 1e-12]).unwrap())
            .unwrap();
        let ce = cross_entropy(&p, &g).unwrap();
        assert!((ce + LOG_CLAMP.ln()).abs() < 1e-12);
    }

    #[test]
    fn dice_of_half_overlapping_squares() {
        // Class 1 occupies columns 0..2 in g and 1..3 in p on a 2×4 grid: |P|=|G|=4, overlap 2.
        let g = onehot(&[1, 1, 0, 0, 1, 1, 0, 0], 2, 2, 4);
        let p = onehot(&[0, 1, 1, 0, 0, 1, 1, 0], 2, 2, 4);
        let p = as_probs(&p);
        let inter = 2.0;
        let expected_fg = (2.0 * inter + DICE_EPS) / (4.0 + 4.0 + DICE_EPS);
        assert!((expected_fg - 0.5).abs() < 1e-7);
        assert!((soft_dice(&p, &g).unwrap() - (expected_fg + expected_fg) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_binary_supports_have_near_zero_dice() {
        let g = onehot(&[1, 0], 2, 1, 2);
        let p = as_probs(&onehot(&[0, 1], 2, 1, 2));
        assert!(soft_dice(&p, &g).unwrap() < 1e-6);
    }

    #[test]
    fn empty_class_on_both_sides_counts_as_perfect() {
        let g = onehot(&[0, 0, 0, 0], 2, 2, 2);
        assert_eq!(soft_dice(&as_probs(&g), &g).unwrap(), 1.0);
    }

    #[test]
    fn class_count_and_shape_errors() {
        let g3 = onehot(&[0, 1, 2, 0], 3, 2, 2);
        let p2 = as_probs(&onehot(&[0, 1, 1, 0], 2, 2, 2));
        assert!(matches!(seg_loss(&p2, &g3), Err(Error::InvalidArgument(_))));
        assert!(matches!(contour_loss(&as_probs(&g3), &g3), Err(Error::InvalidArgument(_))));
        let g_wide = onehot(&[0, 1, 1, 0, 0, 0], 2, 2, 3);
        assert!(matches!(cross_entropy(&p2, &g_wide), Err(Error::InvalidShape(_))));
        let target = DistanceMap(crate::grid::Grid::filled(2, 2, 0.0));
        assert!(matches!(dist_loss(&Tensor::zeros(&[1, 2, 3]), &target), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn dist_loss_examples() {
        let target = DistanceMap(crate::grid::Grid::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap());
        let pred = Tensor::new(vec![1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(dist_loss(&pred, &target).unwrap(), 0.0);
        let shifted = pred.map(|v| v + 0.25);
        assert!((dist_loss(&shifted, &target).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn total_loss_switches() {
        let all = total_loss(0.5, 0.25, 0.125, LossSwitches::ALL).unwrap();
        assert_eq!(all.total, 0.875);
        let base = LossSwitches { seg: true, contour: false, dist: false };
        let b = total_loss(0.5, 0.25, 0.125, base).unwrap();
        assert_eq!((b.total, b.contour, b.dist), (0.5, 0.0, 0.0));
        let dist = LossSwitches { seg: true, contour: false, dist: true };
        let d = total_loss(0.5, 0.25, 0.125, dist).unwrap();
        assert_eq!((d.total, d.contour), (0.625, 0.0));
        let no_seg = LossSwitches { seg: false, contour: true, dist: true };
        assert!(matches!(total_loss(0.5, 0.25, 0.125, no_seg), Err(Error::InvalidArgument(_))));
    }
}
