//! Dataset ingestion: MNIST IDX files and small synthetic 2-D problems.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled examples; `inputs` has shape `[N, ...item shape]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::Data(format!("{} inputs but {} labels", inputs.batch(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` examples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Self {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        Self { inputs: self.inputs.gather_rows(&rows), labels: rows.iter().map(|&r| self.labels[r]).collect(), classes: self.classes }
    }

    /// Frequency of the most common label.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.iter().copied().max().unwrap_or(0) as f64 / self.len().max(1) as f64
    }
}

/// Train/test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path, bytes })
    }

    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Idx { path: self.path.to_path_buf(), offset: offset as u64, msg: msg.into() }
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        self.bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| self.err(offset, "file ends inside the header"))
    }

    /// Validates magic and returns the dimension sizes.
    fn header(&self, magic: u32, ndims: usize) -> Result<Vec<usize>> {
        let found = self.u32_at(0)?;
        if found != magic {
            return Err(self.err(0, format!("magic 0x{found:08x}, expected 0x{magic:08x}")));
        }
        (0..ndims).map(|i| self.u32_at(4 + 4 * i).map(|d| d as usize)).collect()
    }

    fn payload(&self, start: usize, len: usize) -> Result<&[u8]> {
        if self.bytes.len() < start + len {
            return Err(self.err(self.bytes.len(), format!("payload truncated: {} of {len} bytes present", self.bytes.len() - start)));
        }
        if self.bytes.len() > start + len {
            return Err(self.err(start + len, "trailing bytes after payload"));
        }
        Ok(&self.bytes[start..])
    }
}

/// Parses an IDX image/label pair. Images become `[N, rows, cols, 1]` with
/// pixels scaled to `[0, 1]`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = IdxReader::open(images_path)?;
    let dims = img.header(IDX_IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = img.payload(16, n * rows * cols)?;
    let lab = IdxReader::open(labels_path)?;
    let ldims = lab.header(IDX_LABELS_MAGIC, 1)?;
    if ldims[0] != n {
        return Err(lab.err(4, format!("{} labels for {n} images", ldims[0])));
    }
    let raw = lab.payload(8, n)?;
    if let Some(i) = raw.iter().position(|&l| l > 9) {
        return Err(lab.err(8 + i, format!("label {} outside 0..=9", raw[i])));
    }
    let inputs = Tensor::from_vec(&[n, rows, cols, 1], pixels.iter().map(|&p| p as f32 / 255.0).collect())?;
    Dataset::new(inputs, raw.iter().map(|&l| l as usize).collect(), 10)
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box–Muller; one of the pair is discarded to keep the draw count fixed.
    let u1: f64 = rng.sample(rand::distributions::Open01);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Isotropic Gaussian blobs with centers evenly spaced on a circle of
/// radius 4, interleaved by class.
pub fn synthetic_blobs(per_class: usize, classes: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class == 0 {
        return Err(Error::Config("blobs need at least 2 classes and 1 example per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(per_class * classes * 2);
    let mut ys = Vec::with_capacity(per_class * classes);
    for _ in 0..per_class {
        for c in 0..classes {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            xs.push((4.0 * angle.cos() + noise_std * standard_normal(&mut rng)) as f32);
            xs.push((4.0 * angle.sin() + noise_std * standard_normal(&mut rng)) as f32);
            ys.push(c);
        }
    }
    Dataset::new(Tensor::from_vec(&[ys.len(), 2], xs)?, ys, classes)
}

/// Two interleaving half circles.
pub fn synthetic_moons(per_class: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::Config("moons need at least 1 example per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(per_class * 4);
    let mut ys = Vec::with_capacity(per_class * 2);
    for _ in 0..per_class {
        for c in 0..2 {
            let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (x, y) = if c == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
            xs.push((x + noise_std * standard_normal(&mut rng)) as f32);
            xs.push((y + noise_std * standard_normal(&mut rng)) as f32);
            ys.push(c);
        }
    }
    Dataset::new(Tensor::from_vec(&[ys.len(), 2], xs)?, ys, 2)
}

/// Where the training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory holding the four standard MNIST IDX files. Subsets take the
    /// first examples of each file.
    MnistIdx {
        dir: PathBuf,
        #[serde(default)]
        train_subset: Option<usize>,
        #[serde(default)]
        test_subset: Option<usize>,
    },
    SyntheticBlobs {
        per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_blob_classes")]
        classes: usize,
        noise_std: f64,
        seed: u64,
    },
    SyntheticMoons {
        per_class: usize,
        test_per_class: usize,
        noise_std: f64,
        seed: u64,
    },
}

fn default_blob_classes() -> usize {
    3
}

pub const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

impl DatasetSource {
    pub fn load(&self) -> Result<Split> {
        match self {
            DatasetSource::MnistIdx { dir, train_subset, test_subset } => {
                let p = |i: usize| dir.join(MNIST_FILES[i]);
                let train = load_mnist_idx(&p(0), &p(1))?;
                let test = load_mnist_idx(&p(2), &p(3))?;
                Ok(Split {
                    train: match train_subset {
                        Some(n) => train.head(*n),
                        None => train,
                    },
                    test: match test_subset {
                        Some(n) => test.head(*n),
                        None => test,
                    },
                })
            }
            // Test sets use a derived seed so they never repeat training points.
            DatasetSource::SyntheticBlobs { per_class, test_per_class, classes, noise_std, seed } => Ok(Split {
                train: synthetic_blobs(*per_class, *classes, *noise_std, *seed)?,
                test: synthetic_blobs(*test_per_class, *classes, *noise_std, seed.wrapping_add(0x9e37_79b9))?,
            }),
            DatasetSource::SyntheticMoons { per_class, test_per_class, noise_std, seed } => Ok(Split {
                train: synthetic_moons(*per_class, *noise_std, *seed)?,
                test: synthetic_moons(*test_per_class, *noise_std, seed.wrapping_add(0x9e37_79b9))?,
            }),
        }
    }

    /// Example shape and class count, without reading any data.
    pub fn item_shape_and_classes(&self) -> (Vec<usize>, usize) {
        match self {
            DatasetSource::MnistIdx { .. } => (vec![28, 28, 1], 10),
            DatasetSource::SyntheticBlobs { classes, .. } => (vec![2], *classes),
            DatasetSource::SyntheticMoons { .. } => (vec![2], 2),
        }
    }

    /// Paths this source reads, for error messages.
    pub fn paths(&self) -> Vec<PathBuf> {
        match self {
            DatasetSource::MnistIdx { dir, .. } => MNIST_FILES.iter().map(|f| dir.join(f)).collect(),
            _ => Vec::new(),
        }
    }
}
