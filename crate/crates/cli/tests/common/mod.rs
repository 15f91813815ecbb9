//! Shared helpers for CLI integration tests: a deterministic IDX fixture
//! generator standing in for the MNIST→EMNIST pair, and binary-invocation
//! plumbing.
//!
//! The fixture carries the structural properties the pipeline depends on:
//! ten classes of 28×28 grayscale images, a source domain and a shifted
//! target domain with aligned labels, and target files stored transposed
//! the way the real EMNIST distribution is.

// Each integration-test target compiles this module separately and uses a
// different subset of it.
#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const IMG_MAGIC: u32 = 2051;
pub const LBL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;

/// Tiny deterministic PRNG (splitmix64) so fixtures never change.
pub struct Mix(u64);

impl Mix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// One upright 28×28 image of `class` in the given domain.
///
/// Classes are overlapping blobs on a tight grid (2px apart, radius ~4px)
/// under heavy pixel noise, so they are confusable; the target domain
/// translates everything, dims the signal and doubles the noise. The
/// pretrained source model transfers imperfectly and fine-tuning has a real
/// seen-vs-unseen trade-off to navigate.
fn draw_image(class: usize, target_domain: bool, rng: &mut Mix) -> Vec<u8> {
    let mut img = vec![0u8; SIDE * SIDE];
    let (cy, cx) = (9 + (class % 5) * 2, 11 + (class / 5) * 3);
    let (cy, cx) = if target_domain { (cy + 3, cx + 2) } else { (cy, cx) };
    let peak = if target_domain { 130.0 } else { 190.0 };
    let noise_amp = if target_domain { 110.0 } else { 70.0 };
    // A second, fainter lobe disambiguates classes sharing a column.
    let (ly, lx) = (20 - (class % 3) * 4, 5 + (class % 4) * 5);
    let (ly, lx) = if target_domain { (ly + 3, lx + 2) } else { (ly, lx) };
    for r in 0..SIDE {
        for c in 0..SIDE {
            let dy = r as f64 - cy as f64;
            let dx = c as f64 - cx as f64;
            let blob = peak * (-(dy * dy + dx * dx) / 16.0).exp();
            let dy2 = r as f64 - ly as f64;
            let dx2 = c as f64 - lx as f64;
            let lobe = 0.6 * peak * (-(dy2 * dy2 + dx2 * dx2) / 10.0).exp();
            let noise = noise_amp * rng.unit();
            img[r * SIDE + c] = (blob + lobe + noise).min(255.0) as u8;
        }
    }
    img
}

pub fn write_idx_images(path: &Path, images: &[Vec<u8>]) {
    let mut f = std::fs::File::create(path).unwrap();
    f.write_all(&IMG_MAGIC.to_be_bytes()).unwrap();
    f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
    f.write_all(&(SIDE as u32).to_be_bytes()).unwrap();
    f.write_all(&(SIDE as u32).to_be_bytes()).unwrap();
    for img in images {
        f.write_all(img).unwrap();
    }
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut f = std::fs::File::create(path).unwrap();
    f.write_all(&LBL_MAGIC.to_be_bytes()).unwrap();
    f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
    f.write_all(labels).unwrap();
}

fn transpose(img: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            out[c * SIDE + r] = img[r * SIDE + c];
        }
    }
    out
}

/// Paths of one generated split.
pub struct Split {
    pub images: PathBuf,
    pub labels: PathBuf,
}

fn gen_split(
    dir: &Path,
    name: &str,
    per_class: usize,
    target_domain: bool,
    store_transposed: bool,
    seed: u64,
) -> Split {
    let mut rng = Mix::new(seed);
    let mut images = Vec::with_capacity(10 * per_class);
    let mut labels = Vec::with_capacity(10 * per_class);
    // Interleave classes so "first k per class" draws from the whole file.
    for i in 0..per_class {
        for class in 0..10usize {
            let upright = draw_image(class, target_domain, &mut rng);
            images.push(if store_transposed {
                transpose(&upright)
            } else {
                upright
            });
            labels.push(class as u8);
            let _ = i;
        }
    }
    let split = Split {
        images: dir.join(format!("{name}-images-idx3-ubyte")),
        labels: dir.join(format!("{name}-labels-idx1-ubyte")),
    };
    write_idx_images(&split.images, &images);
    write_idx_labels(&split.labels, &labels);
    split
}

/// The full four-split fixture: source train/test (upright) and target
/// train/test (transposed storage, shifted domain).
pub struct Fixture {
    pub source_train: Split,
    pub source_test: Split,
    pub target_train: Split,
    pub target_test: Split,
}

pub fn generate_fixture(dir: &Path) -> Fixture {
    Fixture {
        source_train: gen_split(dir, "src-train", 240, false, false, 101),
        source_test: gen_split(dir, "src-test", 60, false, false, 102),
        target_train: gen_split(dir, "tgt-train", 150, true, true, 103),
        target_test: gen_split(dir, "tgt-test", 60, true, true, 104),
    }
}

/// Invoke the compiled `ovepg` binary.
pub fn ovepg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovepg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

pub fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

pub fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

/// The single run directory created under `out_dir` whose name starts with
/// `prefix`.
pub fn find_run_dir(out_dir: &Path, prefix: &str) -> PathBuf {
    let mut matches: Vec<PathBuf> = std::fs::read_dir(out_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().starts_with(prefix))
                .unwrap_or(false)
        })
        .collect();
    assert!(
        !matches.is_empty(),
        "no run dir with prefix {prefix} under {}",
        out_dir.display()
    );
    matches.sort();
    matches.pop().unwrap()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| {
        panic!("reading {}: {e}", path.display());
    }))
    .unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

/// Parse a curves.csv into (x, probabilities) rows.
pub fn read_curves(path: &Path) -> Vec<(f64, Vec<f64>)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let mut it = line.split(',');
        let x: f64 = it.next().unwrap().parse().unwrap();
        let ps: Vec<f64> = it.map(|v| v.parse().unwrap()).collect();
        rows.push((x, ps));
    }
    rows
}
