//! Coefficient and affinity matrices, and normalized-cut spectral clustering.
//!
//! Cluster ids are zero-based throughout the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("cluster count {k} invalid for {n} points")]
    BadClusterCount { k: usize, n: usize },
    #[error("cluster {0} ended up empty")]
    EmptyCluster(usize),
    #[error("expected {expected} rows, got {got}")]
    RowCount { expected: usize, got: usize },
}

/// Sparse row storage: each row is a list of `(column, value)` sorted by
/// column with no repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRows {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        match row.binary_search_by_key(&j, |&(c, _)| c) {
            Ok(pos) => row[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    fn from_unsorted(n: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        Self { n, rows }
    }
}

/// Row `i` holds point `i`'s coefficients scattered to its neighbour indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix(pub SparseRows);

impl CoefficientMatrix {
    /// `rows[i]` pairs neighbour indices with coefficients for point `i`.
    pub fn from_solutions<'a, I>(n: usize, rows: I) -> Result<Self, SpectralError>
    where
        I: IntoIterator<Item = (&'a [usize], &'a DVector<f64>)>,
    {
        let mut out = Vec::with_capacity(n);
        for (i, (members, beta)) in rows.into_iter().enumerate() {
            let row: Vec<(usize, f64)> = members
                .iter()
                .zip(beta.iter())
                .filter(|&(&j, &b)| b != 0.0 && j != i)
                .map(|(&j, &b)| (j, b))
                .collect();
            out.push(row);
        }
        if out.len() != n {
            return Err(SpectralError::RowCount { expected: n, got: out.len() });
        }
        Ok(Self(SparseRows::from_unsorted(n, out)))
    }
}

/// `A = (|B| + |B|ᵀ) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix(pub SparseRows);

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.0.rows.iter().map(|r| r.iter().map(|&(_, v)| v).sum()).collect()
    }

    /// Connected components, labelled in order of first appearance.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let n = self.n();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for &(j, v) in self.0.row(i) {
                    if v > 0.0 && label[j] == usize::MAX {
                        label[j] = count;
                        stack.push(j);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }
}

pub fn build_affinity(coefficients: &CoefficientMatrix) -> AffinityMatrix {
    let b = &coefficients.0;
    let n = b.n();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for &(j, v) in b.row(i) {
            if i == j {
                continue;
            }
            let half = 0.5 * v.abs();
            rows[i].push((j, half));
            rows[j].push((i, half));
        }
    }
    AffinityMatrix(SparseRows::from_unsorted(n, rows))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Self {
        debug_assert!(labels.iter().all(|&l| l < k));
        Self { labels, k }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    /// First empty cluster, if any.
    pub fn empty_cluster(&self) -> Option<usize> {
        self.sizes().iter().position(|&s| s == 0)
    }

    /// True when both assignments induce the same partition.
    pub fn same_partition(&self, other: &Self) -> bool {
        if self.labels.len() != other.labels.len() {
            return false;
        }
        let mut fwd = std::collections::HashMap::new();
        let mut back = std::collections::HashMap::new();
        self.labels.iter().zip(&other.labels).all(|(&a, &b)| {
            *fwd.entry(a).or_insert(b) == b && *back.entry(b).or_insert(a) == a
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub assignment: ClusterAssignment,
    pub components: usize,
    /// More connected components than clusters; labels then follow components.
    pub disconnected_excess: bool,
    /// Eigenvalues of the normalized Laplacian, ascending.
    pub laplacian_eigenvalues: Vec<f64>,
    pub kmeans_inertia: f64,
}

/// Symmetric normalized Laplacian `I − D^{-1/2} A D^{-1/2}`. Zero-degree
/// vertices get a unit self-loop first.
pub fn normalized_laplacian(affinity: &AffinityMatrix) -> DMatrix<f64> {
    let n = affinity.n();
    let mut a = affinity.0.to_dense();
    for i in 0..n {
        if a.row(i).sum() <= 0.0 {
            a[(i, i)] = 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).sum().sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let m = a[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - m
        } else {
            -m
        }
    })
}

/// Rows of the embedding: the `k` eigenvectors with the smallest Laplacian
/// eigenvalues, each row scaled to unit length.
fn embedding(laplacian: DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = laplacian.nrows();
    let eig = SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut u = eig.eigenvectors.select_columns(&order[..k]);
    for mut row in u.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (u, values)
}

pub fn spectral_cluster(
    affinity: &AffinityMatrix,
    k: usize,
    opts: &SpectralOptions,
) -> Result<SpectralResult, SpectralError> {
    let n = affinity.n();
    if k < 2 || k > n {
        return Err(SpectralError::BadClusterCount { k, n });
    }
    let (components, component_of) = affinity.components();
    let (u, eigenvalues) = embedding(normalized_laplacian(affinity), k);
    let km = kmeans(&u, k, opts);
    let mut labels = km.labels;
    let disconnected_excess = components > k;
    if disconnected_excess {
        log::warn!("affinity graph has {components} components for {k} clusters");
        // Keep each component whole: it takes the majority k-means label.
        let mut votes = vec![vec![0usize; k]; components];
        for i in 0..n {
            votes[component_of[i]][labels[i]] += 1;
        }
        let winner: Vec<usize> = votes
            .iter()
            .map(|v| (0..k).max_by_key(|&c| (v[c], std::cmp::Reverse(c))).unwrap_or(0))
            .collect();
        for i in 0..n {
            labels[i] = winner[component_of[i]];
        }
    }
    let assignment = ClusterAssignment::new(labels, k);
    if let Some(empty) = assignment.empty_cluster() {
        return Err(SpectralError::EmptyCluster(empty));
    }
    Ok(SpectralResult {
        assignment,
        components,
        disconnected_excess,
        laplacian_eigenvalues: eigenvalues,
        kmeans_inertia: km.inertia,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

/// K-means on the rows of `x` with K-means++ seeding. Restarts run in
/// parallel, each with its own stream of the seeded generator; the result
/// with the lowest inertia wins (earliest restart on ties).
pub fn kmeans(x: &DMatrix<f64>, k: usize, opts: &SpectralOptions) -> KMeansResult {
    let restarts = opts.restarts.max(1);
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64);
            kmeans_once(x, k, opts.max_iter, &mut rng)
        })
        .collect();
    runs.into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("at least one restart")
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|d| (x[(i, d)] - c[(j, d)]).powi(2)).sum()
}

fn plus_plus_seed(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut centroids = DMatrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    centroids.set_row(0, &x.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(c, &x.row(pick));
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centroids, c));
        }
    }
    centroids
}

fn kmeans_once(x: &DMatrix<f64>, k: usize, max_iter: usize, rng: &mut impl Rng) -> KMeansResult {
    let n = x.nrows();
    let mut centroids = plus_plus_seed(x, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(x, i, &centroids, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("k >= 1");
            dists[i] = d;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        // An empty cluster takes the point farthest from its centroid.
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..n)
                    .filter(|&i| sizes[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]));
                if let Some(i) = far {
                    sizes[labels[i]] -= 1;
                    labels[i] = c;
                    sizes[c] = 1;
                    dists[i] = 0.0;
                    changed = true;
                }
            }
        }
        inertia = dists.iter().sum();
        history.push(inertia);
        let mut sums = DMatrix::zeros(k, x.ncols());
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += x.row(i);
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids.set_row(c, &(sums.row(c) / sizes[c] as f64));
            }
        }
        if !changed {
            break;
        }
    }
    let final_inertia: f64 = (0..n).map(|i| sq_dist(x, i, &centroids, labels[i])).sum();
    history.push(final_inertia);
    inertia = inertia.min(final_inertia);
    KMeansResult {
        labels,
        centroids,
        inertia,
        history,
    }
}
