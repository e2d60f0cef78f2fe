use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"seed = 11

[dataset]
train = 3
val = 2
test = 2

[dataset.phantom]
height = 16
width = 16

[[dataset.phantom.organs]]
name = "big"
min_pixels = 30
max_pixels = 50
intensity = [0.5, 0.6]

[[dataset.phantom.organs]]
name = "small"
min_pixels = 6
max_pixels = 12
intensity = [0.8, 0.9]

[net]
depth = 1
base_channels = 2
num_classes = 3

[train]
max_epochs = 2
"#;

fn shapeseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapeseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("tiny.toml")
    }

    fn gen(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        let o = shapeseg(&["gen", "--config", s(&self.config()), "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let f = Fixture::new();
    let data = |name| {
        let all = files(&f.gen(name));
        assert!(all.iter().any(|(p, _)| p.ends_with("config.toml")));
        all.into_iter().filter(|(p, _)| !p.ends_with("config.toml")).collect::<Vec<_>>()
    };
    let a = data("a");
    assert!(!a.is_empty());
    assert_eq!(a, data("b"));
}

#[test]
fn seed_override_changes_the_data() {
    let f = Fixture::new();
    let a = f.gen("a");
    let b = f.path("b");
    let o = shapeseg(&["gen", "--config", s(&f.config()), "--seed", "12", "--out", s(&b)]);
    assert!(o.status.success());
    assert_ne!(files(&a), files(&b));
    let echoed = fs::read_to_string(b.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 12"), "{echoed}");
}

#[test]
fn train_then_eval_with_target_dump() {
    let f = Fixture::new();
    let data = f.gen("data");
    let run = f.path("run");
    let o = shapeseg(&[
        "train", "--config", s(&f.config()), "--dataset", s(&data), "--arm", "baseline", "--out", s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(run.join("epochs.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,split,seg,contour,dist,total"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!((cols[3], cols[4]), ("0", "0"), "{line}");
    }

    let ev = f.path("eval");
    let ckpt = run.join("checkpoint.ckpt");
    let o = shapeseg(&[
        "eval", "--config", s(&f.config()), "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&ev),
        "--dump-targets",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("test: "));
    assert!(fs::read_to_string(ev.join("dice.csv")).unwrap().starts_with("class,case,dice\n"));
    assert!(ev.join("aggregate.csv").is_file());
    let dumped = files(&ev.join("predictions"));
    assert_eq!(dumped.len(), 4);
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let f = Fixture::new();
    let missing = f.path("nowhere");
    let o = shapeseg(&["train", "--config", s(&f.config()), "--dataset", s(&missing), "--out", s(&f.path("o"))]);
    assert_eq!(o.status.code(), Some(3));

    let o = shapeseg(&["gen", "--config", s(&f.path("absent.toml")), "--out", s(&f.path("o"))]);
    assert_eq!(o.status.code(), Some(3));

    let bad = f.path("bad.toml");
    fs::write(&bad, "[train]\nlr0 = -1.0\n").unwrap();
    let o = shapeseg(&["gen", "--config", s(&bad), "--out", s(&f.path("o"))]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&bad, "[train]\nunknown = 1\n").unwrap();
    let o = shapeseg(&["gen", "--config", s(&bad), "--out", s(&f.path("o"))]);
    assert_eq!(o.status.code(), Some(2));

    let data = f.gen("data");
    let ckpt = f.path("junk.ckpt");
    fs::write(&ckpt, b"SHAPESEG-CHECKPOINT\nversion: 9\n\n").unwrap();
    let o = shapeseg(&[
        "eval", "--config", s(&f.config()), "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&f.path("e")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let o = shapeseg(&[
        "eval", "--config", s(&f.config()), "--checkpoint", s(&f.path("none.ckpt")), "--dataset", s(&data), "--out",
        s(&f.path("e")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
