//! Data ingestion: the 1D three-Gaussian synthetic task, IDX-format image
//! loaders, and per-class subsetting for the fine-tuning protocol.
//!
//! IDX files are parsed bit-exactly: 4-byte big-endian magic (2051 for
//! images, 2049 for labels), big-endian u32 dimension sizes, unsigned-byte
//! payload. Pixels scale to `[0,1]`; no mean/std normalization. EMNIST
//! distributes images transposed relative to MNIST, so the loader can apply
//! the per-image transpose that renders digits upright.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ove::OneHotLabels;
use crate::rng::{tags, RngState};
use crate::scalar::Scalar;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

/// An in-memory classification dataset.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    inputs: Array2<F>,
    labels: OneHotLabels,
    class_count: usize,
    provenance: String,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(
        inputs: Array2<F>,
        labels: OneHotLabels,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.nrows() != labels.samples() {
            return Err(Error::Input(format!(
                "{} input rows vs {} label rows",
                inputs.nrows(),
                labels.samples()
            )));
        }
        let class_count = labels.classes();
        Ok(Self {
            inputs,
            labels,
            class_count,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn inputs(&self) -> &Array2<F> {
        &self.inputs
    }

    pub fn labels(&self) -> &OneHotLabels {
        &self.labels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Row-select a batch, preserving the given order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Array2<F>, OneHotLabels)> {
        let mut x = Array2::zeros((indices.len(), self.width()));
        let classes = self.labels.class_indices();
        let mut batch_classes = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            if idx >= self.len() {
                return Err(Error::Index(format!("sample {idx} out of range 0..{}", self.len())));
            }
            x.row_mut(row).assign(&self.inputs.row(idx));
            batch_classes.push(classes[idx]);
        }
        Ok((x, OneHotLabels::from_classes(&batch_classes, self.class_count)?))
    }
}

/// The 1D synthetic three-class task: class 0 ~ N(1, 1²), class 1 ~
/// N(0, 2²), class 2 ~ N(−1, 1²), `n_per_class` samples each, grouped by
/// class.
pub fn gen_1d_synth<F: Scalar>(n_per_class: usize, seed: u64) -> Result<Dataset<F>> {
    if n_per_class < 1 {
        return Err(Error::Parameter("need at least one sample per class".into()));
    }
    const MEANS: [f64; 3] = [1.0, 0.0, -1.0];
    const STDS: [f64; 3] = [1.0, 2.0, 1.0];
    let n = 3 * n_per_class;
    let mut inputs = Array2::zeros((n, 1));
    let mut classes = Vec::with_capacity(n);
    let root = RngState::new(seed);
    for class in 0..3 {
        let mut rng = root.substream(&[tags::DATA, class as u64]).rng();
        for i in 0..n_per_class {
            let z: F = F::draw_standard_normal(&mut rng);
            inputs[(class * n_per_class + i, 0)] =
                F::real(MEANS[class]) + F::real(STDS[class]) * z;
            classes.push(class);
        }
    }
    Dataset::new(
        inputs,
        OneHotLabels::from_classes(&classes, 3)?,
        format!("synthetic-1d(n_per_class={n_per_class}, seed={seed})"),
    )
}

/// Image orientation inside an IDX file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageOrientation {
    /// MNIST layout: row-major upright images.
    Standard,
    /// EMNIST layout: images stored transposed; the loader transposes each
    /// image back so it renders upright.
    Transposed,
}

/// Loader options beyond the two paths.
#[derive(Debug, Clone, Copy)]
pub struct IdxOptions {
    pub orientation: ImageOrientation,
    /// When set, the class count is fixed and any label outside
    /// `0..expected_classes` is a load error; otherwise the class range is
    /// inferred as `max label + 1`.
    pub expected_classes: Option<usize>,
}

impl Default for IdxOptions {
    fn default() -> Self {
        Self {
            orientation: ImageOrientation::Standard,
            expected_classes: None,
        }
    }
}

fn read_be_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Truncated {
        path: path.display().to_string(),
        expected: 4,
        found: 0,
    })?;
    Ok(u32::from_be_bytes(buf))
}

fn read_payload(r: &mut impl Read, expected: usize, path: &Path) -> Result<Vec<u8>> {
    // Cap the pre-reservation so a forged header cannot demand the full
    // allocation before any byte is read.
    let mut payload = Vec::with_capacity(expected.min(1 << 26));
    r.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            expected,
            found: payload.len(),
        });
    }
    Ok(payload)
}

/// Load an IDX image/label pair with default options (standard orientation,
/// inferred class range).
pub fn load_idx<F: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<F>> {
    load_idx_with(images_path, labels_path, IdxOptions::default())
}

/// Load an IDX image/label pair: images flattened to `n × (rows·cols)`
/// reals in `[0,1]`, labels one-hot.
pub fn load_idx_with<F: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    options: IdxOptions,
) -> Result<Dataset<F>> {
    // Images: magic, count, rows, cols, then n·rows·cols bytes.
    let mut img_file = File::open(images_path)?;
    let magic = read_be_u32(&mut img_file, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let n_images = read_be_u32(&mut img_file, images_path)? as usize;
    let rows = read_be_u32(&mut img_file, images_path)? as usize;
    let cols = read_be_u32(&mut img_file, images_path)? as usize;
    let pixels = read_payload(&mut img_file, n_images * rows * cols, images_path)?;

    // Labels: magic, count, then n bytes.
    let mut lbl_file = File::open(labels_path)?;
    let magic = read_be_u32(&mut lbl_file, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_be_u32(&mut lbl_file, labels_path)? as usize;
    let label_bytes = read_payload(&mut lbl_file, n_labels, labels_path)?;

    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let d = rows * cols;
    let scale = F::one() / F::real(255.0);
    let mut inputs = Array2::zeros((n_images, d));
    for s in 0..n_images {
        let img = &pixels[s * d..(s + 1) * d];
        for r in 0..rows {
            for c in 0..cols {
                let src = match options.orientation {
                    ImageOrientation::Standard => img[r * cols + c],
                    ImageOrientation::Transposed => img[c * rows + r],
                };
                inputs[(s, r * cols + c)] = F::real(src as f64) * scale;
            }
        }
    }

    let classes: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let class_count = match options.expected_classes {
        Some(c) => {
            if let Some((item, &label)) = classes.iter().enumerate().find(|(_, &l)| l >= c) {
                return Err(Error::LabelOutOfRange {
                    item,
                    label,
                    classes: c,
                });
            }
            c
        }
        None => {
            let max = classes.iter().copied().max().unwrap_or(0);
            (max + 1).max(2)
        }
    };
    let labels = OneHotLabels::from_classes(&classes, class_count)?;
    Dataset::new(
        inputs,
        labels,
        format!("idx({}, {})", images_path.display(), labels_path.display()),
    )
}

/// Keep the first `k` occurrences of every class, in file order.
pub fn subset_per_class<F: Scalar>(data: &Dataset<F>, k: usize) -> Result<Dataset<F>> {
    if k < 1 {
        return Err(Error::Parameter("per-class subset needs k >= 1".into()));
    }
    let classes = data.labels().class_indices();
    let mut taken = vec![0usize; data.class_count()];
    let mut keep = Vec::with_capacity(k * data.class_count());
    for (idx, &class) in classes.iter().enumerate() {
        if taken[class] < k {
            taken[class] += 1;
            keep.push(idx);
        }
    }
    for (class, &count) in taken.iter().enumerate() {
        if count < k {
            return Err(Error::InsufficientClassSamples {
                class,
                have: count,
                need: k,
            });
        }
    }
    let (inputs, labels) = data.batch(&keep)?;
    Dataset::new(
        inputs,
        labels,
        format!("{} subset(k={k})", data.provenance()),
    )
}
