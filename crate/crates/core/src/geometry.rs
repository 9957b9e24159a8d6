//! Unit-sphere normalization, tangent-hyperplane stretching and the
//! inverse-cosine dissimilarity.
//!
//! Points are stored column-wise: a cloud of `N` points in `P` ambient
//! dimensions is a `P × N` matrix. After normalization every point lies on
//! the unit sphere. For an anchor `x̄ᵢ`, each neighbour `x̄ⱼ` is rescaled by
//! `tⱼ = 1 / (x̄ⱼᵀx̄ᵢ)` so that it lies on the hyperplane tangent to the sphere
//! at the anchor. The scale factor is negative for neighbours on the far
//! hemisphere, which maps antipodal points of the same line onto the same
//! side of the anchor.

use nalgebra::{DMatrix, DVector, DVectorView};
use thiserror::Error;

/// Rows (or columns) with an L2 norm below this are rejected.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-14;

/// Cosines with magnitude below this count as orthogonal.
pub const ORTHOGONAL_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {0} has zero norm")]
    ZeroNormPoint(usize),
    #[error("point is orthogonal to the anchor (|cos| = {0:e})")]
    OrthogonalPoint(f64),
    #[error("every other point is orthogonal to anchor {0}")]
    EmptyNeighborhood(usize),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("neighbourhood size {k} out of range for {n} points")]
    BadNeighborhoodSize { k: usize, n: usize },
}

/// Raw points together with their norms and unit-sphere projections.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: DMatrix<f64>,
    norms: Vec<f64>,
    normalized: DMatrix<f64>,
}

impl PointCloud {
    /// Builds a cloud from a `P × N` matrix whose columns are points.
    pub fn from_columns(data: DMatrix<f64>) -> Result<Self, GeometryError> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(GeometryError::EmptyCloud);
        }
        let mut normalized = data.clone();
        let mut norms = Vec::with_capacity(data.ncols());
        for (i, mut col) in normalized.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm >= ZERO_NORM_THRESHOLD) {
                return Err(GeometryError::ZeroNormPoint(i));
            }
            col /= norm;
            norms.push(norm);
        }
        Ok(Self {
            data,
            norms,
            normalized,
        })
    }

    /// Builds a cloud from an `N × P` matrix whose rows are points.
    pub fn from_rows(rows: &DMatrix<f64>) -> Result<Self, GeometryError> {
        Self::from_columns(rows.transpose())
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// `P × N` raw data, one point per column.
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// `P × N` unit-norm points, one per column.
    pub fn normalized(&self) -> &DMatrix<f64> {
        &self.normalized
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn point(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    pub fn unit(&self, i: usize) -> DVectorView<'_, f64> {
        self.normalized.column(i)
    }

    /// Restricts the cloud to the given point indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select_columns(indices),
            norms: indices.iter().map(|&i| self.norms[i]).collect(),
            normalized: self.normalized.select_columns(indices),
        }
    }
}

/// Normalizes an `N × P` matrix of points (one per row) onto the unit sphere.
pub fn normalize(points: &DMatrix<f64>) -> Result<PointCloud, GeometryError> {
    PointCloud::from_rows(points)
}

/// Inverse absolute cosine between two unit vectors; `f64::INFINITY` when
/// they are orthogonal.
pub fn dissimilarity(xi: DVectorView<'_, f64>, xj: DVectorView<'_, f64>) -> f64 {
    let cos = xi.dot(&xj).abs();
    if cos < ORTHOGONAL_THRESHOLD {
        f64::INFINITY
    } else {
        1.0 / cos
    }
}

/// Rescales `xj` onto the hyperplane tangent to the unit sphere at `anchor`.
///
/// Returns the stretched vector and the (possibly negative) scale factor.
pub fn stretch(
    anchor: DVectorView<'_, f64>,
    xj: DVectorView<'_, f64>,
) -> Result<(DVector<f64>, f64), GeometryError> {
    let cos = xj.dot(&anchor);
    if cos.abs() < ORTHOGONAL_THRESHOLD {
        return Err(GeometryError::OrthogonalPoint(cos.abs()));
    }
    let t = 1.0 / cos;
    Ok((xj * t, t))
}

/// The local problem data for one anchor point.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub anchor: usize,
    /// Neighbour indices, nearest first.
    pub members: Vec<usize>,
    /// `P × |I|` matrix of stretched neighbours.
    pub stretched: DMatrix<f64>,
    /// Scale factor applied to each neighbour.
    pub scales: Vec<f64>,
    /// Dissimilarity of each neighbour to the anchor.
    pub weights: DVector<f64>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Replaces the weights and reorders members so weights stay
    /// nondecreasing. Ties keep their previous relative order.
    pub fn reweighted(&self, weights: &[f64]) -> Self {
        assert_eq!(weights.len(), self.len(), "one weight per member");
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]));
        Self {
            anchor: self.anchor,
            members: order.iter().map(|&j| self.members[j]).collect(),
            stretched: self.stretched.select_columns(&order),
            scales: order.iter().map(|&j| self.scales[j]).collect(),
            weights: DVector::from_iterator(order.len(), order.iter().map(|&j| weights[j])),
        }
    }
}

/// Collects the `k` points with the smallest finite dissimilarity to
/// `anchor`, ties broken by lower index, and stretches them onto the
/// anchor's tangent hyperplane.
pub fn build_neighborhood(
    cloud: &PointCloud,
    anchor: usize,
    k: usize,
) -> Result<Neighborhood, GeometryError> {
    let n = cloud.len();
    if k == 0 || k >= n.max(1) {
        return Err(GeometryError::BadNeighborhoodSize { k, n });
    }
    let a = cloud.unit(anchor);
    let mut candidates: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != anchor)
        .map(|j| (dissimilarity(a, cloud.unit(j)), j))
        .filter(|(d, _)| d.is_finite())
        .collect();
    if candidates.is_empty() {
        return Err(GeometryError::EmptyNeighborhood(anchor));
    }
    let by_weight = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_weight);
        candidates.truncate(k);
    }
    candidates.sort_by(by_weight);

    let p = cloud.dim();
    let mut stretched = DMatrix::zeros(p, candidates.len());
    let mut scales = Vec::with_capacity(candidates.len());
    for (col, &(_, j)) in candidates.iter().enumerate() {
        let (x_hat, t) = stretch(a, cloud.unit(j))?;
        stretched.set_column(col, &x_hat);
        scales.push(t);
    }
    Ok(Neighborhood {
        anchor,
        members: candidates.iter().map(|&(_, j)| j).collect(),
        stretched,
        scales,
        weights: DVector::from_iterator(candidates.len(), candidates.iter().map(|&(d, _)| d)),
    })
}

/// Builds every point's neighbourhood.
pub fn build_all_neighborhoods(
    cloud: &PointCloud,
    k: usize,
) -> Result<Vec<Neighborhood>, GeometryError> {
    use rayon::prelude::*;
    (0..cloud.len())
        .into_par_iter()
        .map(|i| build_neighborhood(cloud, i, k))
        .collect()
}
