//! Synthetic union-of-subspaces data, dataset loaders, PCA projection,
//! clustering accuracy and the experiment harness.

mod experiment;
mod loaders;

pub use experiment::{
    median, replicate, run_experiment, std_dev, table_configs, ActiveSpec, DataSpec, ExperimentConfig,
    ExperimentError, ExperimentResult, SeedResult, Selection, Table, DIMS_POINTS_PER_CLUSTER, SYNTHETIC_LAW,
};
pub use loaders::{load_csv, load_idx, read_idx, IdxError, LabelColumn, LoadError};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;

/// Points as columns (`P × N`) with one class label per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledData {
    pub points: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl LabelledData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: self.points.select_columns(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Relabels classes to `0..C` in increasing order of the original ids.
    pub fn dense_labels(&self) -> Vec<usize> {
        let classes = self.classes();
        self.labels
            .iter()
            .map(|l| classes.binary_search(l).expect("present"))
            .collect()
    }
}

/// `P × q` matrix with orthonormal columns drawn uniformly (QR of a
/// Gaussian matrix).
pub fn random_frame(rng: &mut impl Rng, p: usize, q: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Distribution of the in-subspace coordinates of generated points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoefficientLaw {
    /// Independent uniform on `[−1, 1]`.
    #[default]
    Uniform,
    /// Independent standard normal.
    Gaussian,
}

fn sample_on(basis: &DMatrix<f64>, n: usize, sigma: f64, law: CoefficientLaw, rng: &mut impl Rng) -> DMatrix<f64> {
    let (p, q) = basis.shape();
    let coef = match law {
        CoefficientLaw::Uniform => {
            let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            DMatrix::from_fn(q, n, |_, _| u.sample(rng))
        }
        CoefficientLaw::Gaussian => DMatrix::from_fn(q, n, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };
    let mut points = basis * coef;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("sigma >= 0");
        points += DMatrix::from_fn(p, n, |_, _| noise.sample(rng));
    }
    points
}

/// The two bases used by [`generate_two_subspaces`]: the second spans the
/// first `dims.1` columns of a random rotation `Q`; the first is spanned by
/// `cos θ qᵢ + sin θ q_{dims.1 + i}`, so every principal angle between them
/// equals `θ`.
pub fn two_subspace_bases(
    theta_deg: f64,
    dims: (usize, usize),
    ambient: usize,
    rng: &mut impl Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (qa, qb) = dims;
    assert!(qa >= 1 && qb >= 1 && qa + qb <= ambient, "subspaces must fit in the ambient space");
    let rot = random_frame(rng, ambient, ambient);
    let theta = theta_deg.to_radians();
    let second = rot.columns(0, qb).into_owned();
    let mut first = DMatrix::zeros(ambient, qa);
    for i in 0..qa {
        let col = rot.column(i) * theta.cos() + rot.column(qb + i) * theta.sin();
        first.set_column(i, &col);
    }
    (first, second)
}

/// Parameters shared by the synthetic generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub n_per_cluster: usize,
    pub sigma: f64,
    pub law: CoefficientLaw,
    pub seed: u64,
}

/// Two subspaces of dimensions `dims` at angle `theta_deg`, `n` points each
/// plus `N(0, σ²)` ambient noise. Class 0 lives on the first subspace.
pub fn generate_two_subspaces(
    theta_deg: f64,
    dims: (usize, usize),
    ambient: usize,
    sampling: Sampling,
) -> (LabelledData, [DMatrix<f64>; 2]) {
    let Sampling { n_per_cluster: n, sigma, law, seed } = sampling;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = two_subspace_bases(theta_deg, dims, ambient, &mut rng);
    let pa = sample_on(&a, n, sigma, law, &mut rng);
    let pb = sample_on(&b, n, sigma, law, &mut rng);
    let mut points = DMatrix::zeros(ambient, 2 * n);
    points.columns_mut(0, n).copy_from(&pa);
    points.columns_mut(n, n).copy_from(&pb);
    let labels = (0..2 * n).map(|i| i / n).collect();
    (LabelledData { points, labels }, [a, b])
}

/// `k` random `q`-dimensional subspaces of `R^p`.
pub fn generate_k_subspaces(k: usize, q: usize, p: usize, sampling: Sampling) -> (LabelledData, Vec<DMatrix<f64>>) {
    assert!(q >= 1 && q < p, "need 1 <= q < p");
    let Sampling { n_per_cluster: n, sigma, law, seed } = sampling;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<DMatrix<f64>> = (0..k).map(|_| random_frame(&mut rng, p, q)).collect();
    let mut points = DMatrix::zeros(p, k * n);
    for (c, basis) in bases.iter().enumerate() {
        points.columns_mut(c * n, n).copy_from(&sample_on(basis, n, sigma, law, &mut rng));
    }
    let labels = (0..k * n).map(|i| i / n).collect();
    (LabelledData { points, labels }, bases)
}

/// Picks `classes` of the available classes at random (all if `None`),
/// then `per_class` points from each.
pub fn sample_classes(data: &LabelledData, classes: Option<usize>, per_class: usize, seed: u64) -> LabelledData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = data.classes();
    let chosen: Vec<usize> = match classes {
        Some(c) if c < all.len() => {
            let mut idx: Vec<usize> = sample(&mut rng, all.len(), c).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        }
        _ => all,
    };
    let mut indices = Vec::new();
    for class in chosen {
        let pool: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        let take = per_class.min(pool.len());
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), take).into_iter().map(|j| pool[j]).collect();
        picked.sort_unstable();
        indices.extend(picked);
    }
    data.select(&indices)
}

/// Centres the points and projects them onto their top `target_dim`
/// principal components. Returns the `target_dim × N` scores and the
/// eigenvalues of the scatter matrix, descending.
pub fn pca_project(points: &DMatrix<f64>, target_dim: usize) -> (DMatrix<f64>, Vec<f64>) {
    let (p, n) = points.shape();
    assert!(target_dim >= 1 && target_dim <= p, "target dimension out of range");
    let mean = points.column_mean();
    let mut centred = points.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let (vectors, values) = if n < p {
        // Work on the N × N Gram matrix and map back.
        let eig = SymmetricEigen::new(centred.tr_mul(&centred));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut v = DMatrix::zeros(p, target_dim);
        for (c, &i) in order.iter().take(target_dim).enumerate() {
            let lambda = eig.eigenvalues[i];
            if lambda > 1e-12 * eig.eigenvalues.amax() {
                v.set_column(c, &(&centred * eig.eigenvectors.column(i) / lambda.sqrt()));
            }
        }
        let mut values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        values.resize(p, 0.0);
        (v, values)
    } else {
        let eig = SymmetricEigen::new(&centred * centred.transpose());
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let v = eig.eigenvectors.select_columns(&order[..target_dim]);
        (v, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect())
    };
    (vectors.tr_mul(&centred), values)
}

/// Fraction of points correctly assigned under the best one-to-one matching
/// of predicted clusters to true classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "one prediction per point");
    if pred.is_empty() {
        return 1.0;
    }
    let relabel = |v: &[usize]| {
        let mut ids = v.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let dense: Vec<usize> = v.iter().map(|x| ids.binary_search(x).expect("present")).collect();
        (dense, ids.len())
    };
    let (p, np) = relabel(pred);
    let (t, nt) = relabel(truth);
    let size = np.max(nt);
    let mut confusion = DMatrix::zeros(size, size);
    for (&a, &b) in p.iter().zip(&t) {
        confusion[(a, b)] += 1.0;
    }
    let matching = max_weight_assignment(&confusion);
    let correct: f64 = matching.iter().enumerate().map(|(r, &c)| confusion[(r, c)]).sum();
    correct / pred.len() as f64
}
