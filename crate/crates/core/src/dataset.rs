//! On-disk phantom datasets.
//!
//! ```text
//! <root>/manifest
//! <root>/samples/<idx>.img   f64, 1×H×W
//! <root>/samples/<idx>.lbl   u8,  H×W
//! <root>/targets/<idx>.dst   f64, H×W
//! <root>/targets/<idx>.ctr   u8,  H×W
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::format::{write_atomic, ArrayData, ArrayFile};
use crate::grid::{Grid, LabelMap};
use crate::phantom::{corrupt_labels_with, generate_with, PhantomConfig};
use crate::shape_targets::{composite_distance_map, contour_map, ContourMap, DistanceMap};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub phantom: PhantomConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Corruption severity applied to training labels only.
    pub train_label_noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomConfig::default(),
            train: 200,
            val: 50,
            test: 50,
            train_label_noise: 0.3,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if !(0.0..=1.0).contains(&self.train_label_noise) {
            return Err(Error::InvalidArgument(format!(
                "train_label_noise {} outside [0, 1]",
                self.train_label_noise
            )));
        }
        Ok(())
    }

    fn split_sizes(&self) -> [usize; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Global index; also the file stem.
    pub index: usize,
    pub image: Tensor,
    pub labels: LabelMap,
    pub distance: DistanceMap,
    pub contour: ContourMap,
}

impl Sample {
    /// Attach freshly computed targets to an image and its labels.
    pub fn new(index: usize, image: Tensor, labels: LabelMap) -> Result<Self> {
        let distance = composite_distance_map(&labels)?;
        let contour = contour_map(&labels);
        Ok(Self {
            index,
            image,
            labels,
            distance,
            contour,
        })
    }

    pub fn targets_consistent(&self) -> bool {
        let distance = composite_distance_map(&self.labels).ok();
        let bits = |d: &DistanceMap| d.grid().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        distance.is_some_and(|d| bits(&d) == bits(&self.distance)) && contour_map(&self.labels) == self.contour
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub label_noise: f64,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("dataset has no split {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.splits.iter().map(|s| s.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const NOISE_STREAM: u64 = 1 << 63;

/// Generate every split. Sample `i` draws from its own ChaCha stream, so the
/// result does not depend on generation order or thread count.
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let sizes = config.split_sizes();
    let total: usize = sizes.iter().sum();
    let samples: Vec<Sample> = (0..total)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let phantom = generate_with(&mut rng, &config.phantom)?;
            let labels = if index < config.train && config.train_label_noise > 0.0 {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
                noise_rng.set_stream(NOISE_STREAM | index as u64);
                corrupt_labels_with(&mut noise_rng, &phantom.labels, config.train_label_noise)?
            } else {
                phantom.labels
            };
            Sample::new(index, phantom.image, labels)
        })
        .collect::<Result<_>>()?;

    let mut iter = samples.into_iter();
    let splits = SPLIT_NAMES
        .iter()
        .zip(sizes)
        .map(|(&name, n)| Split {
            name: name.to_string(),
            label_noise: if name == "train" { config.train_label_noise } else { 0.0 },
            samples: iter.by_ref().take(n).collect(),
        })
        .collect();
    Ok(Dataset {
        seed,
        height: config.phantom.height,
        width: config.phantom.width,
        num_classes: config.phantom.num_classes(),
        splits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub splits: Vec<SplitEntry>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    pub count: usize,
    pub label_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub index: usize,
    pub split: String,
    pub image: String,
    pub labels: String,
    pub distance: String,
    pub contour: String,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let m: Manifest = toml::from_str(text).map_err(|e| FormatError::Content(e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(FormatError::VersionMismatch {
                found: m.format_version,
                expected: MANIFEST_VERSION,
            });
        }
        if m.num_classes < 2 || m.num_classes > 256 || m.height == 0 || m.width == 0 {
            return Err(FormatError::Content("invalid extents or class count".into()));
        }
        for split in &m.splits {
            let listed = m.samples.iter().filter(|s| s.split == split.name).count();
            if listed != split.count {
                return Err(FormatError::Content(format!(
                    "split {:?} declares {} samples but lists {listed}",
                    split.name, split.count
                )));
            }
        }
        if let Some(s) = m.samples.iter().find(|s| !m.splits.iter().any(|sp| sp.name == s.split)) {
            return Err(FormatError::Content(format!("sample {} has unknown split {:?}", s.index, s.split)));
        }
        for s in &m.samples {
            for path in [&s.image, &s.labels, &s.distance, &s.contour] {
                if !is_safe_relative(path) {
                    return Err(FormatError::Content(format!("unsafe sample path {path:?}")));
                }
            }
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Relative paths that stay inside the dataset root.
fn is_safe_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty()
        && p.components()
            .all(|c| matches!(c, std::path::Component::Normal(_)))
}

fn entry_for(index: usize, split: &str) -> SampleEntry {
    SampleEntry {
        index,
        split: split.to_string(),
        image: format!("samples/{index}.img"),
        labels: format!("samples/{index}.lbl"),
        distance: format!("targets/{index}.dst"),
        contour: format!("targets/{index}.ctr"),
    }
}

pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    for dir in ["samples", "targets"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(dataset.len());
    for split in &dataset.splits {
        for s in &split.samples {
            let entry = entry_for(s.index, &split.name);
            let (h, w) = (dataset.height, dataset.width);
            let files = [
                (&entry.image, ArrayFile::f64(vec![1, h, w], s.image.data().to_vec())),
                (&entry.labels, ArrayFile::u8(vec![h, w], s.labels.labels().to_vec())),
                (&entry.distance, ArrayFile::f64(vec![h, w], s.distance.grid().data().to_vec())),
                (&entry.contour, ArrayFile::u8(vec![h, w], s.contour.grid().data().iter().map(|&c| c as u8).collect())),
            ];
            for (rel, file) in files {
                write_atomic(&root.join(rel), &file.encode())?;
            }
            entries.push(entry);
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        seed: dataset.seed,
        height: dataset.height,
        width: dataset.width,
        num_classes: dataset.num_classes,
        splits: dataset
            .splits
            .iter()
            .map(|s| SplitEntry {
                name: s.name.clone(),
                count: s.samples.len(),
                label_noise: s.label_noise,
            })
            .collect(),
        samples: entries,
    };
    write_atomic(&root.join("manifest"), manifest.render().as_bytes())
}

fn read_array(root: &Path, rel: &str) -> Result<ArrayFile> {
    let path = root.join(rel);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(FormatError::MissingFile(PathBuf::from(rel)).into())
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    Ok(ArrayFile::decode(&bytes)?)
}

fn expect_f64(file: ArrayFile, shape: &[usize], what: &str) -> Result<Vec<f64>> {
    match file {
        ArrayFile { shape: s, data: ArrayData::F64(v) } if s == shape => Ok(v),
        other => Err(FormatError::Content(format!(
            "{what}: expected f64 {shape:?}, found {:?}",
            other.shape
        ))
        .into()),
    }
}

fn expect_u8(file: ArrayFile, shape: &[usize], what: &str) -> Result<Vec<u8>> {
    match file {
        ArrayFile { shape: s, data: ArrayData::U8(v) } if s == shape => Ok(v),
        other => Err(FormatError::Content(format!(
            "{what}: expected u8 {shape:?}, found {:?}",
            other.shape
        ))
        .into()),
    }
}

fn read_sample(root: &Path, m: &Manifest, e: &SampleEntry) -> Result<Sample> {
    let (h, w) = (m.height, m.width);
    let content = |msg: String| Error::from(FormatError::Content(msg));
    let image = expect_f64(read_array(root, &e.image)?, &[1, h, w], &e.image)?;
    let labels = expect_u8(read_array(root, &e.labels)?, &[h, w], &e.labels)?;
    let distance = expect_f64(read_array(root, &e.distance)?, &[h, w], &e.distance)?;
    let contour = expect_u8(read_array(root, &e.contour)?, &[h, w], &e.contour)?;
    if contour.iter().any(|&c| c > 1) {
        return Err(content(format!("{}: contour values must be 0 or 1", e.contour)));
    }
    let labels = LabelMap::new(Grid::new(h, w, labels)?, m.num_classes)
        .map_err(|err| content(format!("{}: {err}", e.labels)))?;
    Ok(Sample {
        index: e.index,
        image: Tensor::new(vec![1, h, w], image)?,
        labels,
        distance: DistanceMap(Grid::new(h, w, distance)?),
        contour: ContourMap(Grid::new(h, w, contour.into_iter().map(|c| c == 1).collect())?),
    })
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(FormatError::MissingFile(path).into())
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    Ok(Manifest::parse(&text)?)
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest = read_manifest(root)?;
    let splits = manifest
        .splits
        .iter()
        .map(|split| {
            let samples = manifest
                .samples
                .iter()
                .filter(|e| e.split == split.name)
                .map(|e| read_sample(root, &manifest, e))
                .collect::<Result<_>>()?;
            Ok(Split {
                name: split.name.clone(),
                label_noise: split.label_noise,
                samples,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        seed: manifest.seed,
        height: manifest.height,
        width: manifest.width,
        num_classes: manifest.num_classes,
        splits,
    })
}
