//! Hopfield pattern matrices built from labelled data.

mod ward;

use nalgebra::DMatrix;

pub use ward::{ward_clusters, ward_linkage, Merge};

use crate::data_io::BinaryDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// `N × p` matrix of ±1 patterns (one pattern per column) and the class each
/// column represents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternMatrix {
    n: usize,
    columns: Vec<Vec<i8>>,
    class_of_column: Vec<u8>,
}

impl PatternMatrix {
    pub fn new(columns: Vec<Vec<i8>>, class_of_column: Vec<u8>) -> Result<Self> {
        let n = columns.first().map(Vec::len).unwrap_or(0);
        if columns.len() != class_of_column.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns but {} class labels",
                columns.len(),
                class_of_column.len()
            )));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("pattern columns differ in length".into()));
        }
        if columns.iter().flatten().any(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidDataset("pattern entries must be ±1".into()));
        }
        Ok(Self { n, columns, class_of_column })
    }

    /// Signs of the columns of a real matrix (`sgn(0) = +1`).
    pub fn from_signs<T: Real>(m: &DMatrix<T>, class_of_column: Vec<u8>) -> Result<Self> {
        let columns = m.column_iter().map(|c| c.iter().map(|&v| crate::scalar::sgn_plus(v)).collect()).collect();
        Self::new(columns, class_of_column)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, mu: usize) -> &[i8] {
        &self.columns[mu]
    }

    pub fn class_of_column(&self) -> &[u8] {
        &self.class_of_column
    }

    /// Columns belonging to `class`, in order.
    pub fn columns_of_class(&self, class: u8) -> Vec<usize> {
        (0..self.p()).filter(|&mu| self.class_of_column[mu] == class).collect()
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            n: self.n,
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            class_of_column: cols.iter().map(|&c| self.class_of_column[c]).collect(),
        }
    }

    pub fn as_matrix<T: Real>(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.n, self.p(), |i, mu| T::from_spin(self.columns[mu][i]))
    }

    /// Fails with `RankDeficient` when the smallest singular value is below
    /// `1e-8` times the largest.
    pub fn check_rank(&self) -> Result<()> {
        if self.p() > self.n {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        linalg::check_full_column_rank(&self.as_matrix::<f64>(), linalg::PATTERN_RANK_TOL)
    }
}

fn sign_of_sum(sum: i64) -> i8 {
    if sum >= 0 {
        1
    } else {
        -1
    }
}

fn mean_sign(data: &BinaryDataset, members: &[usize]) -> Vec<i8> {
    let mut sums = vec![0i64; data.n_visible()];
    for &a in members {
        for (acc, &v) in sums.iter_mut().zip(data.sample(a)) {
            *acc += v as i64;
        }
    }
    sums.into_iter().map(sign_of_sum).collect()
}

/// One pattern per class: the sign of the class mean, ties resolved to `+1`.
pub fn class_mean_patterns(data: &BinaryDataset) -> Result<PatternMatrix> {
    let mut columns = Vec::with_capacity(data.n_classes());
    for class in 0..data.n_classes() {
        let members = data.class_indices(class);
        if members.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        columns.push(mean_sign(data, members));
    }
    let classes = (0..data.n_classes() as u8).collect();
    PatternMatrix::new(columns, classes)
}

/// `k` sub-patterns per class from Ward-linkage agglomerative clustering of
/// the class samples, each the sign of its cluster mean.
///
/// Within a class, sub-patterns are ordered by decreasing cluster size, ties
/// broken by the smallest sample index in the cluster. The result is not
/// rank-checked; call [`PatternMatrix::check_rank`] before building a
/// projection network from it.
pub fn subpattern_clusters(data: &BinaryDataset, k: usize) -> Result<PatternMatrix> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let mut columns = Vec::with_capacity(k * data.n_classes());
    let mut classes = Vec::with_capacity(k * data.n_classes());
    for class in 0..data.n_classes() {
        let members = data.class_indices(class);
        if members.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        if members.len() < k {
            return Err(Error::TooFewSamples { class, have: members.len(), need: k });
        }
        let rows: Vec<&[i8]> = members.iter().map(|&a| data.sample(a)).collect();
        let labels = ward_clusters(&rows, k);
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (local, &label) in labels.iter().enumerate() {
            clusters[label].push(members[local]);
        }
        clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        for cluster in clusters {
            columns.push(mean_sign(data, &cluster));
            classes.push(class as u8);
        }
        log::debug!("class {class}: {} samples clustered into {k}", members.len());
    }
    PatternMatrix::new(columns, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Split;

    fn ds(rows: &[Vec<i8>], labels: &[u8]) -> BinaryDataset {
        BinaryDataset::from_rows(rows, labels.to_vec(), Split::Synthetic).unwrap()
    }

    #[test]
    fn single_sample_class_mean_is_the_sample() {
        let d = ds(&[vec![1, -1, 1], vec![-1, -1, 1]], &[0, 1]);
        let p = class_mean_patterns(&d).unwrap();
        assert_eq!(p.column(0), &[1, -1, 1]);
        assert_eq!(p.column(1), &[-1, -1, 1]);
    }

    #[test]
    fn mean_tie_resolves_to_plus_one() {
        let d = ds(&[vec![1, 1], vec![1, -1]], &[0, 0]);
        let p = class_mean_patterns(&d).unwrap();
        assert_eq!(p.column(0), &[1, 1]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let d = ds(&[vec![1, 1], vec![1, -1]], &[0, 2]);
        assert!(matches!(class_mean_patterns(&d), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn k_one_equals_class_means() {
        let rows: Vec<Vec<i8>> = (0..12)
            .map(|a: i32| (0..6).map(|i| if (a * 7 + i * 3) % 5 < 2 { -1 } else { 1 }).collect())
            .collect();
        let labels: Vec<u8> = (0..12).map(|a| (a % 3) as u8).collect();
        let d = ds(&rows, &labels);
        assert_eq!(subpattern_clusters(&d, 1).unwrap(), class_mean_patterns(&d).unwrap());
    }

    #[test]
    fn class_of_exactly_k_samples_gives_the_samples() {
        let rows = vec![vec![1, 1, 1, 1], vec![-1, -1, 1, 1], vec![1, -1, -1, -1]];
        let d = ds(&rows, &[0, 0, 0]);
        let p = subpattern_clusters(&d, 3).unwrap();
        // equal cluster sizes: ordered by sample index
        assert_eq!(p.column(0), &rows[0][..]);
        assert_eq!(p.column(1), &rows[1][..]);
        assert_eq!(p.column(2), &rows[2][..]);
        assert!(matches!(subpattern_clusters(&d, 4), Err(Error::TooFewSamples { have: 3, need: 4, .. })));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let p = PatternMatrix::new(vec![vec![1, 1, -1], vec![1, 1, -1]], vec![0, 1]).unwrap();
        assert!(matches!(p.check_rank(), Err(Error::RankDeficient { .. })));
        let p = PatternMatrix::new(vec![vec![1, 1, -1], vec![1, -1, -1]], vec![0, 1]).unwrap();
        p.check_rank().unwrap();
    }
}
