//! Datasets: MNIST IDX files, Gaussian blobs, and resampling helpers.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::SuperClassMap;
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major `N × d` features with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    k: usize,
    super_map: Option<SuperClassMap>,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                what: "feature buffer length (N·d)",
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::DimensionMismatch {
                what: "label (must be < k)",
                expected: k,
                actual: bad,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            dim,
            labels,
            k,
            super_map: None,
        })
    }

    pub fn with_super_map(mut self, map: SuperClassMap) -> Result<Self> {
        if map.k() != self.k {
            return Err(Error::DimensionMismatch {
                what: "super-class map size vs class count",
                expected: self.k,
                actual: map.k(),
            });
        }
        self.super_map = Some(map);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn super_map(&self) -> Option<&SuperClassMap> {
        self.super_map.as_ref()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            dim: self.dim,
            labels,
            k: self.k,
            super_map: self.super_map.clone(),
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: offset + 4,
            actual: bytes.len(),
        })
}

/// Raw IDX image tensor: `count` images of `rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::WrongMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::WrongMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for dim in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Decodes an image/label pair into a 10-class dataset with pixels scaled
/// by 1/255.
pub fn mnist_from_idx_bytes(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledDataset> {
    let images = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let features = images.pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels = labels.into_iter().map(usize::from).collect();
    LabeledDataset::new(features, images.rows * images.cols, labels, 10)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    mnist_from_idx_bytes(&fs::read(images_path)?, &fs::read(labels_path)?)
}

/// Quantizes features back to bytes (`round(255·x)`) and encodes both files.
pub fn dataset_to_idx_bytes(
    data: &LabeledDataset,
    rows: usize,
    cols: usize,
) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "image rows·cols vs feature dimension",
            expected: data.dim(),
            actual: rows * cols,
        });
    }
    if data.k() > 256 {
        return Err(Error::InvalidConfig("IDX labels hold at most 256 classes".into()));
    }
    let pixels = data
        .features()
        .iter()
        .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let images = IdxImages {
        count: data.len(),
        rows,
        cols,
        pixels,
    };
    let labels: Vec<u8> = data.labels().iter().map(|&l| l as u8).collect();
    Ok((encode_idx_images(&images), encode_idx_labels(&labels)))
}

/// Standard MNIST file names inside `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Class centers grouped around super-class centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobHierarchy {
    pub super_classes: usize,
    /// Standard deviation of class centers around their super-class center.
    pub class_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub k: usize,
    pub d: usize,
    pub n_per_class: usize,
    /// Standard deviation of (super-)class centers around the origin.
    pub center_spread: f64,
    pub within_class_sigma: f64,
    pub hierarchy: Option<BlobHierarchy>,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.n_per_class == 0 {
            return Err(Error::InvalidConfig(
                "blobs need k, d and n_per_class >= 1".into(),
            ));
        }
        if !(self.center_spread > 0.0) || !(self.within_class_sigma > 0.0) {
            return Err(Error::InvalidConfig("blob spreads must be > 0".into()));
        }
        if let Some(h) = self.hierarchy {
            if h.super_classes == 0 || !self.k.is_multiple_of(h.super_classes) {
                return Err(Error::InvalidConfig(format!(
                    "{} classes cannot be split into {} equal super-classes",
                    self.k, h.super_classes
                )));
            }
            if !(h.class_spread > 0.0) {
                return Err(Error::InvalidConfig("class_spread must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Isotropic Gaussian classes, `n_per_class` points each, grouped by class.
///
/// With a hierarchy, class `c` belongs to super-class `c / (k / m)` and its
/// center is drawn around that super-class's center, so siblings overlap more
/// than strangers. The resulting dataset carries the matching super-class map.
pub fn make_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let (k, d) = (spec.k, spec.d);

    let centers: Vec<f64> = match spec.hierarchy {
        None => {
            let normal = Normal::new(0.0, spec.center_spread).expect("validated spread");
            (0..k * d).map(|_| normal.sample(&mut rng)).collect()
        }
        Some(h) => {
            let top = Normal::new(0.0, spec.center_spread).expect("validated spread");
            let sub = Normal::new(0.0, h.class_spread).expect("validated spread");
            let supers: Vec<f64> = (0..h.super_classes * d).map(|_| top.sample(&mut rng)).collect();
            let g = k / h.super_classes;
            (0..k)
                .flat_map(|c| (0..d).map(move |j| (c / g) * d + j))
                .map(|idx| supers[idx] + sub.sample(&mut rng))
                .collect()
        }
    };

    let noise = Normal::new(0.0, spec.within_class_sigma).expect("validated sigma");
    let mut features = Vec::with_capacity(k * spec.n_per_class * d);
    let mut labels = Vec::with_capacity(k * spec.n_per_class);
    for c in 0..k {
        let center = &centers[c * d..(c + 1) * d];
        for _ in 0..spec.n_per_class {
            features.extend(center.iter().map(|&m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let data = LabeledDataset::new(features, d, labels, k)?;
    match spec.hierarchy {
        Some(h) => data.with_super_map(SuperClassMap::contiguous(k, h.super_classes)?),
        None => Ok(data),
    }
}

/// Splits each class into its first `n_first` rows (in dataset order) and the
/// remainder.
pub fn take_per_class(data: &LabeledDataset, n_first: usize) -> (LabeledDataset, LabeledDataset) {
    let mut seen = vec![0usize; data.k()];
    let (mut first, mut rest) = (Vec::new(), Vec::new());
    for (i, &l) in data.labels().iter().enumerate() {
        if seen[l] < n_first {
            first.push(i);
        } else {
            rest.push(i);
        }
        seen[l] += 1;
    }
    (data.subset(&first), data.subset(&rest))
}

/// Keeps a seeded random `n_keep` examples of `class`.
///
/// With `duplicate_back` the kept examples are repeated cyclically until the
/// class has its original count again (no-op when `n_keep` is 0). Other
/// classes keep their rows and relative order; the class's rows are appended
/// after them.
pub fn downsample_class(
    data: &LabeledDataset,
    class: usize,
    n_keep: usize,
    duplicate_back: bool,
    seed: u64,
) -> Result<LabeledDataset> {
    if class >= data.k() {
        return Err(Error::DimensionMismatch {
            what: "class index (must be < k)",
            expected: data.k(),
            actual: class,
        });
    }
    let mut members: Vec<usize> = Vec::new();
    let mut others: Vec<usize> = Vec::new();
    for (i, &l) in data.labels().iter().enumerate() {
        if l == class {
            members.push(i);
        } else {
            others.push(i);
        }
    }
    if n_keep > members.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot keep {n_keep} examples of class {class}: only {} available",
            members.len()
        )));
    }
    let original = members.len();
    let mut rng = seed::rng(seed);
    members.shuffle(&mut rng);
    members.truncate(n_keep);
    members.sort_unstable();

    let mut indices = others;
    if duplicate_back && n_keep > 0 {
        indices.extend(members.iter().copied().cycle().take(original));
    } else {
        indices.extend(members);
    }
    Ok(data.subset(&indices))
}

/// Seeded disjoint partition into `fractions.len()` parts.
///
/// Part sizes follow rounded cumulative fractions so they always sum to `N`;
/// each part lists its rows in original order.
pub fn split(data: &LabeledDataset, fractions: &[f64], seed: u64) -> Result<Vec<LabeledDataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));

    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    let mut cumulative = 0.0;
    for (idx, &f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if idx + 1 == fractions.len() {
            n
        } else {
            ((cumulative * n as f64).round() as usize).min(n)
        };
        let mut part = order[start..end].to_vec();
        part.sort_unstable();
        parts.push(data.subset(&part));
        start = end;
    }
    Ok(parts)
}
