//! Replays the fuzz-target properties over the checked-in corpus and over
//! truncated and bit-flipped variants of every seed.

use std::fs;
use std::path::PathBuf;

use shapeseg::checkpoint::{decode_checkpoint, encode_checkpoint};
use shapeseg::config::RunConfig;
use shapeseg::dataset::Manifest;
use shapeseg::format::ArrayFile;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn variants(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut v = vec![bytes.to_vec()];
    let step = (bytes.len() / 40).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        v.push(bytes[..cut].to_vec());
        let mut flipped = bytes.to_vec();
        flipped[cut] ^= 0x5a;
        v.push(flipped);
    }
    v
}

fn array_property(data: &[u8]) -> bool {
    match ArrayFile::decode(data) {
        Ok(file) => {
            let bytes = file.encode();
            assert_eq!(ArrayFile::decode(&bytes).unwrap().encode(), bytes);
            true
        }
        Err(_) => false,
    }
}

fn manifest_property(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    match Manifest::parse(text) {
        Ok(m) => {
            let rendered = m.render();
            assert_eq!(Manifest::parse(&rendered).unwrap().render(), rendered);
            true
        }
        Err(_) => false,
    }
}

fn checkpoint_property(data: &[u8]) -> bool {
    match decode_checkpoint(data) {
        Ok(model) => {
            let bytes = encode_checkpoint(&model);
            assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), bytes);
            true
        }
        Err(_) => false,
    }
}

fn config_property(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    match RunConfig::parse(text) {
        Ok(c) => {
            let rendered = c.render();
            assert_eq!(RunConfig::parse(&rendered).unwrap().render(), rendered);
            true
        }
        Err(_) => false,
    }
}

fn replay(target: &str, property: fn(&[u8]) -> bool) {
    for (name, bytes) in seeds(target) {
        assert!(property(&bytes), "{target}/{name} should be accepted");
        for v in variants(&bytes) {
            property(&v);
        }
    }
}

#[test]
fn array_file_corpus() {
    replay("array_file", array_property);
}

#[test]
fn manifest_corpus() {
    replay("manifest", manifest_property);
}

#[test]
fn checkpoint_corpus() {
    replay("checkpoint", checkpoint_property);
    // any single flipped payload byte is caught by the checksum
    let (_, tiny) = &seeds("checkpoint")[0];
    let mut bad = tiny.clone();
    let last = bad.len() - 1;
    bad[last] ^= 1;
    assert!(!checkpoint_property(&bad));
}

#[test]
fn run_config_corpus() {
    replay("run_config", config_property);
}
