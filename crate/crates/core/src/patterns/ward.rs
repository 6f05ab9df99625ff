//! Ward-linkage agglomerative clustering of ±1 vectors.
//!
//! Uses the nearest-neighbour-chain algorithm over a condensed matrix of
//! squared Euclidean distances, updated with the Lance–Williams recurrence.
//! For ±1 vectors the initial squared distance is four times the Hamming
//! distance, computed on bit-packed rows.

/// One agglomeration step. `a` and `b` are representative point indices of
/// the two merged clusters; `cost` is the increase in total within-cluster
/// sum of squares caused by the merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub cost: f64,
    pub size: usize,
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + j - i - 1
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.index(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.d[k] = v;
    }
}

fn pack(row: &[i8]) -> Vec<u64> {
    let mut words = vec![0u64; row.len().div_ceil(64)];
    for (i, &v) in row.iter().enumerate() {
        if v > 0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

fn squared_distances(rows: &[&[i8]]) -> Condensed {
    let n = rows.len();
    let packed: Vec<Vec<u64>> = rows.iter().map(|r| pack(r)).collect();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let hamming: u32 = packed[i].iter().zip(&packed[j]).map(|(x, y)| (x ^ y).count_ones()).sum();
            d.push(4.0 * hamming as f64);
        }
    }
    Condensed { n, d }
}

/// Full Ward dendrogram, merges sorted by non-decreasing cost.
pub fn ward_linkage(rows: &[&[i8]]) -> Vec<Merge> {
    let n = rows.len();
    if n < 2 {
        return Vec::new();
    }
    let mut dist = squared_distances(rows);
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges = Vec::with_capacity(n - 1);

    for _ in 0..n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&x| x).expect("at least two active clusters"));
        }
        let (a, b) = loop {
            let a = *chain.last().expect("chain is non-empty");
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            // ties prefer the previous chain element, then the lowest index
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| dist.get(a, p));
            for j in (0..n).filter(|&j| active[j] && j != a) {
                let dj = dist.get(a, j);
                if dj < best_d {
                    best_d = dj;
                    best = Some(j);
                }
            }
            let b = best.expect("another active cluster exists");
            if Some(b) == prev {
                chain.truncate(chain.len() - 2);
                break (a, b);
            }
            chain.push(b);
        };

        let dab = dist.get(a, b);
        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let sk = size[k] as f64;
            let updated = ((sa + sk) * dist.get(k, a) + (sb + sk) * dist.get(k, b) - sk * dab) / (sa + sb + sk);
            dist.set(k, keep, updated);
        }
        active[drop] = false;
        size[keep] += size[drop];
        merges.push(Merge { a: keep, b: drop, cost: 0.5 * dab, size: size[keep] });
    }

    // NN-chain emits merges out of order; Ward is monotone so a stable sort
    // restores a valid agglomeration sequence.
    merges.sort_by(|x, y| x.cost.total_cmp(&y.cost));
    merges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cluster label in `0..k` for each row, labels numbered by first appearance.
///
/// # Panics
/// If `k` is zero or exceeds the number of rows.
pub fn ward_clusters(rows: &[&[i8]], k: usize) -> Vec<usize> {
    let n = rows.len();
    assert!(k >= 1 && k <= n, "cannot form {k} clusters from {n} points");
    let merges = ward_linkage(rows);
    let mut parent: Vec<usize> = (0..n).collect();
    for m in &merges[..n - k] {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Increase in within-cluster sum of squares from merging two clusters.
    fn merge_cost(rows: &[&[i8]], x: &[usize], y: &[usize]) -> f64 {
        let centroid = |c: &[usize]| -> Vec<f64> {
            let mut m = vec![0.0; rows[0].len()];
            for &i in c {
                for (acc, &v) in m.iter_mut().zip(rows[i]) {
                    *acc += v as f64;
                }
            }
            m.iter().map(|v| v / c.len() as f64).collect()
        };
        let sse = |c: &[usize]| -> f64 {
            let m = centroid(c);
            c.iter().map(|&i| rows[i].iter().zip(&m).map(|(&v, mu)| (v as f64 - mu).powi(2)).sum::<f64>()).sum()
        };
        let joined: Vec<usize> = x.iter().chain(y).copied().collect();
        sse(&joined) - sse(x) - sse(y)
    }

    /// Replays the merges and checks each against an exhaustive search over
    /// all pairs of current clusters.
    fn assert_greedy_optimal(rows: &[&[i8]]) {
        let merges = ward_linkage(rows);
        let n = rows.len();
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut owner: Vec<usize> = (0..n).collect();
        for m in merges {
            let live: Vec<usize> = (0..n).filter(|&c| !clusters[c].is_empty()).collect();
            let mut best = f64::INFINITY;
            for (ii, &x) in live.iter().enumerate() {
                for &y in &live[ii + 1..] {
                    best = best.min(merge_cost(rows, &clusters[x], &clusters[y]));
                }
            }
            let (cx, cy) = (owner[m.a], owner[m.b]);
            assert_ne!(cx, cy);
            let actual = merge_cost(rows, &clusters[cx], &clusters[cy]);
            assert!((actual - m.cost).abs() < 1e-9, "recorded cost {} vs actual {actual}", m.cost);
            assert!(actual <= best + 1e-9, "merge cost {actual} exceeds optimum {best}");
            let moved = std::mem::take(&mut clusters[cy]);
            for &i in &moved {
                owner[i] = cx;
            }
            clusters[cx].extend(moved);
        }
    }

    #[test]
    fn merges_match_exhaustive_search_on_small_sets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = 3 + trial % 6;
            let dim = 5 + trial % 7;
            let data: Vec<Vec<i8>> =
                (0..n).map(|_| (0..dim).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).collect();
            let rows: Vec<&[i8]> = data.iter().map(Vec::as_slice).collect();
            assert_greedy_optimal(&rows);
        }
    }

    #[test]
    fn recovers_planted_groups() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dim = 40;
        let centers: Vec<Vec<i8>> =
            (0..2).map(|_| (0..dim).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).collect();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for g in 0..8 {
            let c = g % 2;
            let row: Vec<i8> = centers[c].iter().map(|&v| if rng.random::<f64>() < 0.05 { -v } else { v }).collect();
            data.push(row);
            truth.push(c);
        }
        let rows: Vec<&[i8]> = data.iter().map(Vec::as_slice).collect();
        let labels = ward_clusters(&rows, 2);
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                assert_eq!(labels[i] == labels[j], truth[i] == truth[j]);
            }
        }
        assert_greedy_optimal(&rows);
    }

    #[test]
    fn trivial_cuts() {
        let data = [vec![1i8, 1], vec![1, -1], vec![-1, -1]];
        let rows: Vec<&[i8]> = data.iter().map(Vec::as_slice).collect();
        assert_eq!(ward_clusters(&rows, 3), vec![0, 1, 2]);
        assert_eq!(ward_clusters(&rows, 1), vec![0, 0, 0]);
        assert_eq!(ward_linkage(&rows[..1]), vec![]);
    }
}
