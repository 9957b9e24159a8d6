//! Linear subspace bases, reconstruction error, and K-subspace clustering
//! with and without known labels.
//!
//! Point matrices are `P × N` (one point per column).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, DVectorView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{max_weight_assignment, min_cost_assignment};
use crate::spectral::ClusterAssignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("cluster {cluster} has {size} points, too few for a {q}-dimensional basis")]
    DegenerateCluster { cluster: usize, size: usize, q: usize },
    #[error("{classes} distinct labels cannot map onto {clusters} clusters")]
    InfeasibleLabels { classes: usize, clusters: usize },
    #[error("labelled point {0} is out of range")]
    LabelOutOfRange(usize),
    #[error("initial labels must have one entry per point in 0..{0}")]
    BadInitialLabels(usize),
    #[error("subspace dimension {q} must lie in 1..={dim}")]
    BadDimension { q: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    pub cluster: usize,
    /// `P × q`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Offset subtracted before projecting; `None` for linear subspaces.
    pub center: Option<DVector<f64>>,
}

impl SubspaceBasis {
    pub fn q(&self) -> usize {
        self.basis.ncols()
    }

    /// `‖y − VVᵀy‖²` with `y = x − center`.
    pub fn residual(&self, x: DVectorView<'_, f64>) -> f64 {
        let y: DVector<f64> = match &self.center {
            Some(c) => x - c,
            None => x.into_owned(),
        };
        let coef = self.basis.tr_mul(&y);
        (y - &self.basis * coef).norm_squared()
    }
}

/// Top-`q` principal directions of the points in the columns of `x`.
/// Uncentered unless `center` is set.
pub fn fit_basis(x: &DMatrix<f64>, q: usize, cluster: usize, center: bool) -> Result<SubspaceBasis, SubspaceError> {
    let (p, n) = x.shape();
    if q == 0 || q > p {
        return Err(SubspaceError::BadDimension { q, dim: p });
    }
    if n < q {
        return Err(SubspaceError::DegenerateCluster { cluster, size: n, q });
    }
    let (y, c) = if center {
        let mean = x.column_mean();
        let mut y = x.clone();
        for mut col in y.column_iter_mut() {
            col -= &mean;
        }
        (y, Some(mean))
    } else {
        (x.clone(), None)
    };
    let basis = leading_left_singular_vectors(y, q);
    Ok(SubspaceBasis { cluster, basis, center: c })
}

fn leading_left_singular_vectors(y: DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let p = y.nrows();
    let svd = y.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut basis = DMatrix::zeros(p, q);
    for (c, &i) in order.iter().take(q).enumerate() {
        basis.set_column(c, &u.column(i));
    }
    basis
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub per_point: Vec<f64>,
    pub total: f64,
}

pub fn reconstruction_error(x: &DMatrix<f64>, bases: &[SubspaceBasis], labels: &[usize]) -> ReconstructionReport {
    let per_point: Vec<f64> = (0..x.ncols())
        .into_par_iter()
        .map(|i| bases[labels[i]].residual(x.column(i)))
        .collect();
    let total = per_point.iter().sum();
    ReconstructionReport { per_point, total }
}

/// `N × K` matrix of residuals of every point against every basis.
pub fn error_matrix(x: &DMatrix<f64>, bases: &[SubspaceBasis]) -> DMatrix<f64> {
    let n = x.ncols();
    let k = bases.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| bases.iter().map(|b| b.residual(x.column(i))).collect())
        .collect();
    DMatrix::from_fn(n, k, |i, c| rows[i][c])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KscOptions {
    pub q: usize,
    pub max_iter: usize,
    pub center: bool,
    /// Subspace dimension of individual known classes; other clusters use `q`.
    #[serde(default)]
    pub class_dims: BTreeMap<usize, usize>,
}

impl Default for KscOptions {
    fn default() -> Self {
        Self {
            q: 3,
            max_iter: 100,
            center: false,
            class_dims: BTreeMap::new(),
        }
    }
}

/// Assignment, bases and per-point errors of a clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub assignment: ClusterAssignment,
    pub bases: Vec<SubspaceBasis>,
    pub errors: Vec<f64>,
}

impl ClusterState {
    /// Fits bases for a given assignment.
    pub fn fit(x: &DMatrix<f64>, assignment: ClusterAssignment, opts: &KscOptions) -> Result<Self, SubspaceError> {
        let dims = vec![opts.q; assignment.k];
        let bases = fit_bases(x, &assignment.labels, &dims, opts)?;
        let errors = reconstruction_error(x, &bases, &assignment.labels).per_point;
        Ok(Self { assignment, bases, errors })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KscResult {
    pub state: ClusterState,
    /// Objective after every iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of points moved to refill undersized clusters.
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsccResult {
    pub ksc: KscResult,
    /// Known class label → cluster.
    pub mapping: BTreeMap<usize, usize>,
}

fn fit_bases(
    x: &DMatrix<f64>,
    labels: &[usize],
    dims: &[usize],
    opts: &KscOptions,
) -> Result<Vec<SubspaceBasis>, SubspaceError> {
    (0..dims.len())
        .into_par_iter()
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            fit_basis(&x.select_columns(&members), dims[c], c, opts.center)
        })
        .collect()
}

/// Per-cluster dimensions: each class with a configured dimension hands it
/// to the cluster holding most of its labelled points under `init`.
fn cluster_dims(init: &[usize], k: usize, known: &BTreeMap<usize, usize>, opts: &KscOptions) -> Vec<usize> {
    let mut dims = vec![opts.q; k];
    let classes: Vec<usize> = opts
        .class_dims
        .keys()
        .copied()
        .filter(|c| known.values().any(|v| v == c))
        .take(k)
        .collect();
    if classes.is_empty() {
        return dims;
    }
    let mut counts = DMatrix::zeros(classes.len(), k);
    for (&i, class) in known {
        if let Some(d) = classes.iter().position(|c| c == class) {
            counts[(d, init[i])] += 1.0;
        }
    }
    for (d, c) in max_weight_assignment(&counts).into_iter().enumerate() {
        dims[c] = opts.class_dims[&classes[d]];
    }
    dims
}

/// Moves points into clusters with fewer than `q` members. Donors are
/// unlocked points in clusters that can spare them, largest own-cluster
/// residual first.
fn repair_undersized(
    x: &DMatrix<f64>,
    labels: &mut [usize],
    dims: &[usize],
    locked: &[bool],
    opts: &KscOptions,
) -> Result<usize, SubspaceError> {
    let k = dims.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    if (0..k).all(|c| sizes[c] >= dims[c]) {
        return Ok(0);
    }
    // Residuals against the bases of clusters that are large enough.
    let bases: Vec<Option<SubspaceBasis>> = (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == c).collect();
            (sizes[c] >= dims[c])
                .then(|| fit_basis(&x.select_columns(&members), dims[c], c, opts.center).ok())
                .flatten()
        })
        .collect();
    let residual: Vec<f64> = (0..labels.len())
        .map(|i| bases[labels[i]].as_ref().map_or(0.0, |b| b.residual(x.column(i))))
        .collect();
    let mut donors: Vec<usize> = (0..labels.len()).filter(|&i| !locked[i]).collect();
    donors.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
    let mut moved = 0;
    for c in 0..k {
        while sizes[c] < dims[c] {
            let pick = donors
                .iter()
                .position(|&i| labels[i] != c && sizes[labels[i]] > dims[labels[i]]);
            let Some(pos) = pick else {
                return Err(SubspaceError::DegenerateCluster { cluster: c, size: sizes[c], q: dims[c] });
            };
            let i = donors.remove(pos);
            sizes[labels[i]] -= 1;
            labels[i] = c;
            sizes[c] += 1;
            moved += 1;
        }
    }
    log::info!("refilled undersized clusters with {moved} points");
    Ok(moved)
}

/// Alternating K-subspace clustering from `init`.
pub fn ksc(x: &DMatrix<f64>, k: usize, init: &[usize], opts: &KscOptions) -> Result<KscResult, SubspaceError> {
    kscc(x, k, init, &BTreeMap::new(), opts).map(|r| {
        let mut ksc = r.ksc;
        // Report the unhalved reconstruction error.
        for v in &mut ksc.objective_history {
            *v *= 2.0;
        }
        ksc
    })
}

/// K-subspace clustering with known labels: each iteration fits the bases,
/// maps classes to clusters by optimal assignment of the labelled
/// reconstruction cost, sends labelled points to their class's cluster and
/// the rest to the nearest subspace. The recorded objective is half the sum
/// of the unlabelled minimum residuals and the mapped labelled residuals.
pub fn kscc(
    x: &DMatrix<f64>,
    k: usize,
    init: &[usize],
    known: &BTreeMap<usize, usize>,
    opts: &KscOptions,
) -> Result<KsccResult, SubspaceError> {
    let n = x.ncols();
    if init.len() != n || init.iter().any(|&l| l >= k) {
        return Err(SubspaceError::BadInitialLabels(k));
    }
    if let Some((&i, _)) = known.iter().find(|(&i, _)| i >= n) {
        return Err(SubspaceError::LabelOutOfRange(i));
    }
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = known.values().copied().collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.len() > k {
        return Err(SubspaceError::InfeasibleLabels { classes: classes.len(), clusters: k });
    }
    let class_index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(d, &c)| (c, d)).collect();
    let mut locked = vec![false; n];
    for &i in known.keys() {
        locked[i] = true;
    }
    let dims = cluster_dims(init, k, known, opts);

    let mut labels = init.to_vec();
    let mut history = Vec::new();
    let mut repairs = 0;
    let mut mapping = vec![0usize; classes.len()];
    let mut converged = false;
    let mut iterations = 0;
    let mut state = None;
    for _ in 0..opts.max_iter.max(1) {
        iterations += 1;
        repairs += repair_undersized(x, &mut labels, &dims, &locked, opts)?;
        let bases = fit_bases(x, &labels, &dims, opts)?;
        let errors = error_matrix(x, &bases);

        let mut cost = DMatrix::zeros(k, k);
        for (&i, class) in known {
            let d = class_index[class];
            for c in 0..k {
                cost[(d, c)] += errors[(i, c)];
            }
        }
        let full = min_cost_assignment(&cost);
        mapping.copy_from_slice(&full[..classes.len()]);

        let mut next = vec![0usize; n];
        let mut total = 0.0;
        for i in 0..n {
            let c = match known.get(&i) {
                Some(class) => mapping[class_index[class]],
                None => (0..k)
                    .min_by(|&a, &b| errors[(i, a)].total_cmp(&errors[(i, b)]).then(a.cmp(&b)))
                    .expect("k >= 1"),
            };
            next[i] = c;
            total += errors[(i, c)];
        }
        history.push(0.5 * total);
        let per_point: Vec<f64> = (0..n).map(|i| errors[(i, next[i])]).collect();
        let unchanged = next == labels;
        labels = next;
        state = Some((bases, per_point));
        if unchanged {
            converged = true;
            break;
        }
    }
    let (bases, per_point) = state.expect("at least one iteration");
    // Bases were fitted to the previous labels; refit when they moved.
    let (bases, errors) = if converged {
        (bases, per_point)
    } else {
        let bases = fit_bases(x, &labels, &dims, opts)?;
        let errors = reconstruction_error(x, &bases, &labels).per_point;
        (bases, errors)
    };
    let assignment = ClusterAssignment::new(labels, k);
    Ok(KsccResult {
        ksc: KscResult {
            state: ClusterState { assignment, bases, errors },
            objective_history: history,
            iterations,
            converged,
            repairs,
        },
        mapping: classes.iter().zip(&mapping).map(|(&c, &m)| (c, m)).collect(),
    })
}

/// Pairs of known labels that the assignment breaks: same class in
/// different clusters, or different classes in one cluster.
pub fn constraint_violations(labels: &[usize], known: &BTreeMap<usize, usize>) -> usize {
    let entries: Vec<(usize, usize)> = known.iter().map(|(&i, &c)| (i, c)).collect();
    let mut count = 0;
    for a in 0..entries.len() {
        for b in (a + 1)..entries.len() {
            let (i, ci) = entries[a];
            let (j, cj) = entries[b];
            if (ci == cj) != (labels[i] == labels[j]) {
                count += 1;
            }
        }
    }
    count
}
