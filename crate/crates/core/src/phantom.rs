//! Synthetic multi-organ phantoms: filled, rotated ellipses on a noisy
//! background, plus a morphological label-noise model.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    #[default]
    Ellipse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganSpec {
    pub name: String,
    #[serde(default)]
    pub shape: ShapeFamily,
    /// Inclusive pixel-count range.
    pub min_pixels: usize,
    pub max_pixels: usize,
    /// Mean intensity is drawn uniformly from this range per phantom.
    pub intensity: [f64; 2],
    /// Minor/major axis ratio range.
    #[serde(default = "default_aspect")]
    pub aspect: [f64; 2],
}

fn default_aspect() -> [f64; 2] {
    [0.5, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub background_intensity: [f64; 2],
    pub noise_std: f64,
    pub placement_retries: usize,
    /// Organ class `k` is `organs[k - 1]`.
    pub organs: Vec<OrganSpec>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let organ = |name: &str, min_pixels, max_pixels, lo, hi| OrganSpec {
            name: name.into(),
            shape: ShapeFamily::Ellipse,
            min_pixels,
            max_pixels,
            intensity: [lo, hi],
            aspect: default_aspect(),
        };
        Self {
            height: 64,
            width: 64,
            background_intensity: [0.10, 0.20],
            noise_std: 0.08,
            placement_retries: 200,
            organs: vec![
                organ("large", 350, 700, 0.45, 0.60),
                organ("medium", 120, 250, 0.60, 0.75),
                organ("small", 40, 90, 0.45, 0.60),
                organ("tiny", 12, 30, 0.75, 0.95),
            ],
        }
    }
}

impl PhantomConfig {
    pub fn num_classes(&self) -> usize {
        self.organs.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.height == 0 || self.width == 0 {
            return bad(format!("phantom extents must be positive, got {}×{}", self.height, self.width));
        }
        if self.organs.is_empty() || self.organs.len() > 255 {
            return bad(format!("need 1..=255 organ specs, got {}", self.organs.len()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and ≥ 0, got {}", self.noise_std));
        }
        let unit = |r: [f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if !unit(self.background_intensity) {
            return bad(format!("background intensity {:?} not within [0, 1]", self.background_intensity));
        }
        for o in &self.organs {
            if o.min_pixels == 0 || o.min_pixels > o.max_pixels {
                return bad(format!(
                    "organ {}: size range [{}, {}] is invalid",
                    o.name, o.min_pixels, o.max_pixels
                ));
            }
            if !unit(o.intensity) {
                return bad(format!("organ {}: intensity {:?} not within [0, 1]", o.name, o.intensity));
            }
            if !(0.0 < o.aspect[0] && o.aspect[0] <= o.aspect[1] && o.aspect[1] <= 1.0) {
                return bad(format!("organ {}: aspect {:?} not within (0, 1]", o.name, o.aspect));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// `1×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    pub labels: LabelMap,
    /// Organ classes that could not be placed within the retry budget.
    pub omitted: Vec<u8>,
}

fn uniform(rng: &mut dyn RngCore, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Pixels whose centres fall inside the ellipse.
fn rasterize(cy: f64, cx: f64, a: f64, b: f64, theta: f64, h: usize, w: usize) -> Vec<(usize, usize)> {
    let (s, c) = theta.sin_cos();
    let r = a.max(b).ceil() as i64 + 1;
    let mut pixels = Vec::new();
    for y in (cy as i64 - r).max(0)..=(cy as i64 + r).min(h as i64 - 1) {
        for x in (cx as i64 - r).max(0)..=(cx as i64 + r).min(w as i64 - 1) {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let u = (dx * c + dy * s) / a;
            let v = (-dx * s + dy * c) / b;
            if u * u + v * v <= 1.0 {
                pixels.push((y as usize, x as usize));
            }
        }
    }
    pixels
}

/// Draw one phantom from `rng`.
pub fn generate_with(rng: &mut dyn RngCore, config: &PhantomConfig) -> Result<Phantom> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut grid = Grid::filled(h, w, 0u8);
    let mut omitted = Vec::new();

    for (k, spec) in config.organs.iter().enumerate() {
        let class = (k + 1) as u8;
        let mut placed = false;
        for _ in 0..config.placement_retries {
            let area = uniform(rng, [spec.min_pixels as f64, spec.max_pixels as f64 + 1.0]);
            let ratio = uniform(rng, spec.aspect);
            let a = (area / (std::f64::consts::PI * ratio)).sqrt();
            let b = ratio * a;
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let pixels = rasterize(cy, cx, a, b, theta, h, w);
            if !(spec.min_pixels..=spec.max_pixels).contains(&pixels.len()) {
                continue;
            }
            // Reject overlap with, or 4-adjacency to, already placed organs.
            let clash = pixels.iter().any(|&(y, x)| {
                let (mut nb, _) = grid.neighbours4(y, x);
                *grid.get(y, x) != 0 || nb.any(|(ny, nx)| *grid.get(ny, nx) != 0)
            });
            if clash {
                continue;
            }
            for (y, x) in pixels {
                grid.set(y, x, class);
            }
            placed = true;
            break;
        }
        if !placed {
            omitted.push(class);
        }
    }

    let mut means = vec![uniform(rng, config.background_intensity)];
    means.extend(config.organs.iter().map(|o| uniform(rng, o.intensity)));
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let image: Vec<f64> = grid
        .data()
        .iter()
        .map(|&l| {
            let n = if config.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            (means[l as usize] + n).clamp(0.0, 1.0)
        })
        .collect();

    Ok(Phantom {
        image: Tensor::new(vec![1, h, w], image)?,
        labels: LabelMap::new(grid, config.num_classes())?,
        omitted,
    })
}

/// Phantom fully determined by `seed`.
pub fn generate(seed: u64, config: &PhantomConfig) -> Result<Phantom> {
    generate_with(&mut ChaCha8Rng::seed_from_u64(seed), config)
}

fn erode_once(grid: &mut Grid<u8>, class: u8) {
    let remove: Vec<(usize, usize)> = (0..grid.height())
        .flat_map(|y| (0..grid.width()).map(move |x| (y, x)))
        .filter(|&(y, x)| {
            if *grid.get(y, x) != class {
                return false;
            }
            let (mut nb, outside) = grid.neighbours4(y, x);
            outside > 0 || nb.any(|(ny, nx)| *grid.get(ny, nx) != class)
        })
        .collect();
    for (y, x) in remove {
        grid.set(y, x, 0);
    }
}

fn dilate_once(grid: &mut Grid<u8>, original: &Grid<u8>, class: u8) {
    let grow: Vec<(usize, usize)> = (0..grid.height())
        .flat_map(|y| (0..grid.width()).map(move |x| (y, x)))
        .filter(|&(y, x)| {
            if *grid.get(y, x) != 0 || *original.get(y, x) != 0 {
                return false;
            }
            let (mut nb, _) = grid.neighbours4(y, x);
            nb.any(|(ny, nx)| *grid.get(ny, nx) == class)
        })
        .collect();
    for (y, x) in grow {
        grid.set(y, x, class);
    }
}

/// Per organ, dilate or erode (chosen at random) by a radius of
/// `severity × equivalent radius` with a 4-connected structuring element.
/// Organs only grow into pixels that were background in the input.
pub fn corrupt_labels_with(rng: &mut dyn RngCore, labels: &LabelMap, severity: f64) -> Result<LabelMap> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::InvalidArgument(format!("severity {severity} outside [0, 1]")));
    }
    let original = labels.grid();
    let mut grid = original.clone();
    for class in 1..labels.num_classes() {
        let class = class as u8;
        let dilate = rng.random_bool(0.5);
        let count = labels.count(class);
        if count == 0 || severity == 0.0 {
            continue;
        }
        let equivalent_radius = (count as f64 / std::f64::consts::PI).sqrt();
        let radius = (severity * equivalent_radius).round() as usize;
        for _ in 0..radius {
            if dilate {
                dilate_once(&mut grid, original, class);
            } else {
                erode_once(&mut grid, class);
            }
        }
    }
    LabelMap::new(grid, labels.num_classes())
}

pub fn corrupt_labels(labels: &LabelMap, severity: f64, seed: u64) -> Result<LabelMap> {
    corrupt_labels_with(&mut ChaCha8Rng::seed_from_u64(seed), labels, severity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_zero_is_identity() {
        let p = generate(3, &PhantomConfig::default()).unwrap();
        assert_eq!(corrupt_labels(&p.labels, 0.0, 9).unwrap(), p.labels);
    }

    #[test]
    fn eroding_a_point_removes_it() {
        let mut grid = Grid::filled(5, 5, 0u8);
        grid.set(2, 2, 1);
        let labels = LabelMap::new(grid, 2).unwrap();
        // Find a seed whose coin flip picks erosion for organ 1.
        let seed = (0..)
            .find(|&s| !ChaCha8Rng::seed_from_u64(s).random_bool(0.5))
            .unwrap();
        let out = corrupt_labels(&labels, 1.0, seed).unwrap();
        assert_eq!(out.count(1), 0);
    }

    #[test]
    fn invalid_configs() {
        let mut c = PhantomConfig::default();
        c.organs[0].min_pixels = 800;
        assert!(c.validate().is_err());
        let mut c = PhantomConfig::default();
        c.organs[1].intensity = [0.9, 1.2];
        assert!(c.validate().is_err());
        assert!(corrupt_labels(&LabelMap::background(2, 2, 2).unwrap(), 1.5, 0).is_err());
    }

    #[test]
    fn impossible_packing_omits_organs() {
        let mut c = PhantomConfig::default();
        c.height = 16;
        c.width = 16;
        c.placement_retries = 5;
        let p = generate(1, &c).unwrap();
        assert!(!p.omitted.is_empty());
        for &k in &p.omitted {
            assert_eq!(p.labels.count(k), 0);
        }
    }
}
