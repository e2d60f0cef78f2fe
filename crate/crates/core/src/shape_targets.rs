//! Complementary-task targets derived from a label map: a composite of
//! per-organ normalized Euclidean distance transforms, and a binary organ
//! contour map.

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap, Mask};

/// Per-pixel regression target in `[0, 1]`, zero on background.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap(pub Grid<f64>);

/// Organ boundary pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContourMap(pub Grid<bool>);

impl DistanceMap {
    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }
}

impl ContourMap {
    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }
}

/// Squared distance transform of a 1D sampled function (lower envelope of
/// parabolas rooted at the finite samples). `f` must hold at least one
/// finite value.
fn squared_edt_1d(f: &[f64], out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                break;
            };
            let vf = v as f64;
            let s = ((fq + qf * qf) - (f[v] + vf * vf)) / (2.0 * (qf - vf));
            if s <= *bounds.last().unwrap_or(&f64::NEG_INFINITY) {
                sites.pop();
                bounds.pop();
            } else {
                bounds.push(s);
                sites.push(q);
                break;
            }
        }
    }
    // bounds[i] separates sites[i] and sites[i + 1].
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k < bounds.len() && bounds[k] < qf {
            k += 1;
        }
        let v = sites[k];
        let d = qf - v as f64;
        *o = d * d + f[v];
    }
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel centre. The grid is surrounded by a virtual ring of
/// background, so border-touching foreground stays finite.
pub fn edt(mask: &Mask) -> Result<Grid<f64>> {
    if mask.is_empty() {
        return Err(Error::InvalidInput("edt of an empty grid".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    let (ph, pw) = (h + 2, w + 2);
    let mut sq = vec![0.0; ph * pw];
    for y in 0..h {
        for x in 0..w {
            if *mask.get(y, x) {
                sq[(y + 1) * pw + x + 1] = f64::INFINITY;
            }
        }
    }

    let (mut sites, mut bounds) = (Vec::new(), Vec::new());
    let mut line = vec![0.0; ph.max(pw)];
    let mut out = vec![0.0; ph.max(pw)];
    for x in 1..=w {
        for y in 0..ph {
            line[y] = sq[y * pw + x];
        }
        squared_edt_1d(&line[..ph], &mut out[..ph], &mut sites, &mut bounds);
        for y in 0..ph {
            sq[y * pw + x] = out[y];
        }
    }
    for y in 1..=h {
        let row = &mut sq[y * pw..(y + 1) * pw];
        line[..pw].copy_from_slice(row);
        squared_edt_1d(&line[..pw], &mut out[..pw], &mut sites, &mut bounds);
        row.copy_from_slice(&out[..pw]);
    }

    Ok(Grid::from_fn(h, w, |y, x| {
        if *mask.get(y, x) {
            sq[(y + 1) * pw + x + 1].sqrt()
        } else {
            0.0
        }
    }))
}

fn check_organ(labels: &LabelMap, organ: u8) -> Result<()> {
    if organ == 0 || organ as usize >= labels.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "organ id {organ} outside [1, {})",
            labels.num_classes()
        )));
    }
    Ok(())
}

/// EDT of one organ's mask divided by its maximum over the organ; all zero
/// when the organ is absent.
pub fn organ_distance_map(labels: &LabelMap, organ: u8) -> Result<DistanceMap> {
    check_organ(labels, organ)?;
    let mut dist = edt(&labels.mask(organ))?;
    let max = dist.data().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in dist.data_mut() {
            *v /= max;
        }
    }
    Ok(DistanceMap(dist))
}

/// Pixelwise sum of every organ's normalized distance map.
pub fn composite_distance_map(labels: &LabelMap) -> Result<DistanceMap> {
    let mut total = Grid::filled(labels.height(), labels.width(), 0.0);
    for organ in 1..labels.num_classes() as u16 {
        let organ = organ as u8;
        if labels.count(organ) == 0 {
            continue;
        }
        let part = organ_distance_map(labels, organ)?;
        for (t, p) in total.data_mut().iter_mut().zip(part.0.data()) {
            *t += p;
        }
    }
    Ok(DistanceMap(total))
}

/// A pixel is contour when it is an organ pixel with at least one
/// 4-neighbour (or the outside ring) carrying a different label.
pub fn contour_map(labels: &LabelMap) -> ContourMap {
    let grid = labels.grid();
    ContourMap(Grid::from_fn(grid.height(), grid.width(), |y, x| {
        let own = *grid.get(y, x);
        if own == 0 {
            return false;
        }
        let (mut inside, outside) = grid.neighbours4(y, x);
        outside > 0 || inside.any(|(ny, nx)| *grid.get(ny, nx) != own)
    }))
}
