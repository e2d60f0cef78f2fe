use std::fs;

use shapeseg::dataset::{generate_dataset, read_dataset, write_dataset, DatasetConfig, Manifest};
use shapeseg::phantom::{corrupt_labels, generate, PhantomConfig};
use shapeseg::{Error, FormatError};

fn small_config(n: usize) -> DatasetConfig {
    DatasetConfig {
        train: n,
        val: 2,
        test: 3,
        ..DatasetConfig::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let c = PhantomConfig::default();
    let (a, b) = (generate(17, &c).unwrap(), generate(17, &c).unwrap());
    let bits = |t: &shapeseg::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.image), bits(&b.image));
    assert_eq!(a.labels, b.labels);
    assert_ne!(generate(18, &c).unwrap().labels, a.labels);
}

#[test]
fn noiseless_single_organ_has_two_intensities() {
    let mut c = PhantomConfig::default();
    c.noise_std = 0.0;
    c.organs.truncate(1);
    let p = generate(5, &c).unwrap();
    assert!(p.omitted.is_empty());
    let mut values: Vec<u64> = p.image.data().iter().map(|v| v.to_bits()).collect();
    values.sort_unstable();
    values.dedup();
    assert_eq!(values.len(), 2);
}

#[test]
fn organ_sizes_stay_in_range() {
    let c = PhantomConfig::default();
    let mut omitted = 0;
    for seed in 0..200 {
        let p = generate(seed, &c).unwrap();
        assert!(p.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for (k, spec) in c.organs.iter().enumerate() {
            let class = (k + 1) as u8;
            let n = p.labels.count(class);
            if p.omitted.contains(&class) {
                assert_eq!(n, 0);
                omitted += 1;
            } else {
                assert!((spec.min_pixels..=spec.max_pixels).contains(&n), "seed {seed} organ {class}: {n}");
            }
        }
    }
    assert!(omitted < 10, "{omitted} organs omitted at defaults");
}

fn foreground_sym_diff(a: &shapeseg::grid::LabelMap, b: &shapeseg::grid::LabelMap) -> usize {
    a.labels().iter().zip(b.labels()).filter(|(x, y)| (**x != 0) != (**y != 0)).count()
}

#[test]
fn corruption_grows_with_severity_and_never_swaps_organs() {
    let c = PhantomConfig::default();
    let severities = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let mut means = Vec::new();
    let maps: Vec<_> = (0..20).map(|s| generate(100 + s, &c).unwrap().labels).collect();
    for &sev in &severities {
        let mut total = 0;
        for (i, labels) in maps.iter().enumerate() {
            let noisy = corrupt_labels(labels, sev, i as u64).unwrap();
            for (&a, &b) in labels.labels().iter().zip(noisy.labels()) {
                assert!(a == b || a == 0 || b == 0, "organ {a} relabeled as {b}");
            }
            total += foreground_sym_diff(labels, &noisy);
        }
        means.push(total as f64 / maps.len() as f64);
    }
    assert_eq!(means[0], 0.0);
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "{means:?}");
    }
    assert!(means[5] > means[1]);
}

#[test]
fn round_trip_and_target_consistency() {
    let ds = generate_dataset(&small_config(5), 9).unwrap();
    assert_eq!(ds.len(), 10);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    for split in &back.splits {
        for s in &split.samples {
            assert!(s.targets_consistent());
            for (a, b) in s.image.data().iter().zip(ds.split(&split.name).unwrap().samples.iter().find(|x| x.index == s.index).unwrap().image.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
    // Training labels are corrupted, evaluation labels are clean.
    let clean = generate_dataset(&DatasetConfig { train_label_noise: 0.0, ..small_config(5) }, 9).unwrap();
    assert_ne!(ds.split("train").unwrap().samples, clean.split("train").unwrap().samples);
    assert_eq!(ds.split("test").unwrap().samples, clean.split("test").unwrap().samples);
}

#[test]
fn rewriting_is_byte_identical() {
    let ds = generate_dataset(&small_config(3), 4).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(&ds, a.path()).unwrap();
    write_dataset(&generate_dataset(&small_config(3), 4).unwrap(), b.path()).unwrap();
    for rel in ["manifest", "samples/0.img", "samples/7.lbl", "targets/3.dst", "targets/4.ctr"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn damaged_datasets_give_distinct_errors() {
    let ds = generate_dataset(&small_config(2), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();

    let img = dir.path().join("samples/1.img");
    let bytes = fs::read(&img).unwrap();
    fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(
        read_dataset(dir.path()),
        Err(Error::Format(FormatError::TruncatedPayload { .. }))
    ));
    fs::write(&img, &bytes).unwrap();

    let mut flipped = fs::read(dir.path().join("targets/0.dst")).unwrap();
    *flipped.last_mut().unwrap() ^= 0x40;
    fs::write(dir.path().join("targets/0.dst"), flipped).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Format(FormatError::Checksum))));

    fs::remove_file(dir.path().join("targets/0.dst")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Format(FormatError::MissingFile(_)))));

    let manifest = fs::read_to_string(dir.path().join("manifest")).unwrap();
    let bumped = manifest.replacen("format_version = 1", "format_version = 7", 1);
    assert!(matches!(Manifest::parse(&bumped), Err(FormatError::VersionMismatch { found: 7, .. })));
    let miscounted = manifest.replacen("count = 2", "count = 3", 1);
    assert!(matches!(Manifest::parse(&miscounted), Err(FormatError::Content(_))));
    let escaping = manifest.replacen("samples/0.img", "../0.img", 1);
    assert!(matches!(Manifest::parse(&escaping), Err(FormatError::Content(_))));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset(empty.path()), Err(Error::Format(FormatError::MissingFile(_)))));
}
