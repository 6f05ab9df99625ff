use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::idx::{read_idx, IdxTensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Environment variable naming the directory that holds the four MNIST IDX files.
pub const MNIST_DIR_ENV: &str = "MNIST_DIR";

/// Which part of a dataset a [`BinaryDataset`] was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Synthetic,
}

/// ±1 samples with class labels.
///
/// Samples are stored row-major as `i8`, one row of length `n_visible` per
/// sample. The class index partitions `0..len()` by label.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    samples: Vec<i8>,
    labels: Vec<u8>,
    n_visible: usize,
    class_index: Vec<Vec<usize>>,
    split: Split,
}

impl BinaryDataset {
    pub fn new(samples: Vec<i8>, labels: Vec<u8>, n_visible: usize, split: Split) -> Result<Self> {
        if n_visible == 0 {
            return Err(Error::InvalidDataset("n_visible must be positive".into()));
        }
        if samples.len() != labels.len() * n_visible {
            return Err(Error::InvalidDataset(format!(
                "{} values do not form {} samples of length {n_visible}",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidDataset(format!("entry {pos} is {} (expected ±1)", samples[pos])));
        }
        let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut class_index = vec![Vec::new(); n_classes];
        for (a, &l) in labels.iter().enumerate() {
            class_index[l as usize].push(a);
        }
        Ok(Self { samples, labels, n_visible, class_index, split })
    }

    /// Builds a dataset from per-sample spin vectors.
    pub fn from_rows(rows: &[Vec<i8>], labels: Vec<u8>, split: Split) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDataset("rows have differing lengths".into()));
        }
        Self::new(rows.concat(), labels, n, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    /// One more than the largest label present.
    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sample(&self, a: usize) -> &[i8] {
        &self.samples[a * self.n_visible..(a + 1) * self.n_visible]
    }

    pub fn label(&self, a: usize) -> u8 {
        self.labels[a]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn samples(&self) -> &[i8] {
        &self.samples
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        self.class_index.get(class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[i8], u8)> + '_ {
        self.samples.chunks_exact(self.n_visible).zip(self.labels.iter().copied())
    }

    /// New dataset made of the given sample indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut samples = Vec::with_capacity(indices.len() * self.n_visible);
        let mut labels = Vec::with_capacity(indices.len());
        for &a in indices {
            samples.extend_from_slice(self.sample(a));
            labels.push(self.labels[a]);
        }
        Self::new(samples, labels, self.n_visible, self.split).expect("subset of a valid dataset")
    }

    /// The first `n` samples (or all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_subset(&self, class: usize) -> Self {
        self.subset(self.class_indices(class))
    }

    /// Samples `rows` as a dense matrix (one sample per row).
    pub fn to_matrix<T: Real>(&self, rows: std::ops::Range<usize>) -> DMatrix<T> {
        let n = self.n_visible;
        DMatrix::from_fn(rows.len(), n, |r, i| T::from_spin(self.samples[(rows.start + r) * n + i]))
    }
}

/// Maps raw pixel intensities to spins: `+1` when the value is non-zero, `-1` otherwise.
pub fn binarize(raw: &IdxTensor) -> Vec<i8> {
    raw.data.iter().map(|&v| if v > 0 { 1 } else { -1 }).collect()
}

/// MNIST directory from the environment, falling back to `data/mnist` under
/// the workspace root when that directory exists.
pub fn mnist_dir() -> Option<PathBuf> {
    if let Ok(dir) = std::env::var(MNIST_DIR_ENV) {
        return Some(PathBuf::from(dir));
    }
    let fallback = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    fallback.is_dir().then_some(fallback)
}

/// Loads and binarizes one MNIST split from the standard uncompressed file names.
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<BinaryDataset> {
    let dir = dir.as_ref();
    let (images, labels) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        Split::Synthetic => return Err(Error::InvalidConfig("MNIST has no synthetic split".into())),
    };
    let images = read_idx(dir.join(images))?;
    let labels = read_idx(dir.join(labels))?;
    if images.rank() != 3 || labels.rank() != 1 {
        return Err(Error::InvalidDataset("expected rank-3 images and rank-1 labels".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::InvalidDataset(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| l > 9) {
        return Err(Error::InvalidDataset(format!("label {bad} outside 0..=9")));
    }
    BinaryDataset::new(binarize(&images), labels.data, images.item_size(), split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_threshold_is_strictly_positive() {
        let t = IdxTensor { dims: vec![1, 2, 2], data: vec![0, 255, 1, 0] };
        assert_eq!(binarize(&t), vec![-1, 1, 1, -1]);
    }

    #[test]
    fn class_index_partitions_samples() {
        let d = BinaryDataset::new(vec![1, -1, -1, 1, 1, 1], vec![2, 0, 2], 2, Split::Synthetic).unwrap();
        assert_eq!(d.n_classes(), 3);
        assert_eq!(d.class_indices(2), &[0, 2]);
        assert_eq!(d.class_indices(1), &[] as &[usize]);
        assert_eq!(d.class_subset(2).sample(1), &[1, 1]);
        let m = d.to_matrix::<f64>(1..3);
        assert_eq!(m[(0, 0)], -1.0);
        assert_eq!(m[(1, 1)], 1.0);
    }

    #[test]
    fn rejects_malformed_datasets() {
        assert!(BinaryDataset::new(vec![1, 0], vec![0], 2, Split::Synthetic).is_err());
        assert!(BinaryDataset::new(vec![1, 1, 1], vec![0], 2, Split::Synthetic).is_err());
        assert!(BinaryDataset::from_rows(&[vec![1], vec![1, 1]], vec![0, 0], Split::Synthetic).is_err());
    }
}
