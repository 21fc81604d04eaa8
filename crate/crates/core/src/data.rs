//! IDX loading, train/validation splits and minibatch iteration.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for 3-d unsigned
//! byte image tensors, `0x00000801` for 1-d label vectors), one `u32` per
//! dimension, then the raw payload. Files starting with the gzip magic are
//! decompressed transparently.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const N_CLASSES: usize = 10;

/// Images (one flattened row per sample, values in `[0, 1]`) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<u8>,
    pub one_hot: Matrix,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<u8>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} images vs {} labels", images.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= N_CLASSES) {
            return Err(Error::Argument(format!(
                "label {bad} outside 0..{N_CLASSES}"
            )));
        }
        let one_hot = one_hot(&labels, N_CLASSES);
        Ok(Self {
            images,
            labels,
            one_hot,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            one_hot: self.one_hot.select_rows(indices),
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

pub fn one_hot(labels: &[u8], n_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), n_classes);
    for (r, &l) in labels.iter().enumerate() {
        m.set(r, l as usize, 1.0);
    }
    m
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            what: what.to_string(),
            offset: offset as u64,
            detail: "header ends early".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::Format {
            what: what.to_string(),
            offset: 0,
            detail: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < start + len {
        return Err(Error::Format {
            what: what.to_string(),
            offset: bytes.len() as u64,
            detail: format!("payload truncated, expected {} bytes", start + len),
        });
    }
    Ok(&bytes[start..start + len])
}

/// Parses an IDX image tensor into `count x (rows * cols)` pixels scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<Matrix> {
    check_magic(bytes, IMAGE_MAGIC, what)?;
    let n = read_u32(bytes, 4, what)? as usize;
    let rows = read_u32(bytes, 8, what)? as usize;
    let cols = read_u32(bytes, 12, what)? as usize;
    let dim = rows * cols;
    let data = payload(bytes, 16, n * dim, what)?;
    Matrix::new(n, dim, data.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Parses an IDX label vector.
pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, what)?;
    let n = read_u32(bytes, 4, what)? as usize;
    let data = payload(bytes, 8, n, what)?;
    if let Some(pos) = data.iter().position(|&l| l as usize >= N_CLASSES) {
        return Err(Error::Format {
            what: what.to_string(),
            offset: (8 + pos) as u64,
            detail: format!("label {} outside 0..{N_CLASSES}", data[pos]),
        });
    }
    Ok(data.to_vec())
}

/// Loads a matching pair of IDX image and label files.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&read_bytes(ip)?, &ip.display().to_string())?;
    let labels = parse_idx_labels(&read_bytes(lp)?, &lp.display().to_string())?;
    if images.rows() != labels.len() {
        return Err(Error::Format {
            what: lp.display().to_string(),
            offset: 4,
            detail: format!(
                "{} labels for {} images in {}",
                labels.len(),
                images.rows(),
                ip.display()
            ),
        });
    }
    Dataset::new(images, labels)
}

/// Resolves `<dir>/<stem>` or `<dir>/<stem>.gz`.
pub fn find_idx(dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let plain = dir.as_ref().join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.as_ref().join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::io(
        plain,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no such IDX file (plain or .gz)",
        ),
    ))
}

/// Loads the standard `train-*` and `t10k-*` file pairs from one directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let d = dir.as_ref();
    let train = load_idx(
        find_idx(d, "train-images-idx3-ubyte")?,
        find_idx(d, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        find_idx(d, "t10k-images-idx3-ubyte")?,
        find_idx(d, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub validation_count: usize,
    pub seed: u64,
}

/// Moves `validation_count` samples, drawn without replacement, into a validation set.
/// Both parts keep the original sample order.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, valid) = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&train), ds.subset(&valid)))
}

/// Index form of [`split`]: `(train, valid)`, each ascending.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if spec.validation_count >= n && spec.validation_count > 0 {
        return Err(Error::Argument(format!(
            "validation count {} must be below the dataset size {n}",
            spec.validation_count
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::new(spec.seed).shuffle(&mut perm);
    let mut valid = perm[..spec.validation_count].to_vec();
    let mut train = perm[spec.validation_count..].to_vec();
    valid.sort_unstable();
    train.sort_unstable();
    Ok((train, valid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub t: Matrix,
    /// Positions of the rows in the source dataset.
    pub indices: Vec<usize>,
}

/// One epoch of minibatches, materialized lazily.
pub struct Minibatches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Minibatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(Batch {
            x: self.ds.images.select_rows(&indices),
            t: self.ds.one_hot.select_rows(&indices),
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Minibatches<'_> {}

/// Batches covering every sample once; shuffled by `shuffle_seed` or in file order.
pub fn minibatches(
    ds: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Minibatches<'_>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if let Some(seed) = shuffle_seed {
        Rng::new(seed).shuffle(&mut order);
    }
    Ok(Minibatches {
        ds,
        order,
        batch_size,
        pos: 0,
    })
}
