//! Diagnostics for the nearest-neighbour (trivial) solution `e₁`.

use nalgebra::DVectorView;

use super::QpError;
use crate::geometry::Neighborhood;

const TIE_TOL: f64 = 1e-12;

/// Smallest `ρ` above which `e₁` solves the problem:
///
/// ```text
/// max{0, max_j [(x̂₁ − x̂ⱼ)ᵀ(x̂₁ − x̄) + ξw₁²] / (wⱼ − w₁)}
/// ```
///
/// Members tied with the nearest weight are skipped. Neighbourhoods must be
/// sorted by weight (as built by `build_neighborhood`).
pub fn rho_lower_bound(
    nbhd: &Neighborhood,
    anchor: DVectorView<'_, f64>,
    xi: f64,
) -> Result<f64, QpError> {
    let m = nbhd.len();
    if m < 2 {
        return Err(QpError::TooFewMembers { needed: 2, got: m });
    }
    let w = &nbhd.weights;
    let x1 = nbhd.stretched.column(0);
    let offset = x1 - anchor;
    if offset.norm() <= TIE_TOL || w[1] - w[0] <= TIE_TOL * w[0] {
        return Err(QpError::DegenerateNearest);
    }
    let mut bound: f64 = 0.0;
    for j in 1..m {
        let gap = w[j] - w[0];
        if gap <= TIE_TOL * w[0] {
            continue;
        }
        let numer = (x1 - nbhd.stretched.column(j)).dot(&offset) + xi * w[0] * w[0];
        bound = bound.max(numer / gap);
    }
    Ok(bound)
}

/// True when the hyperplane through the nearest neighbour, normal to
/// `x̄ − x̄₍₁₎`, separates every other neighbour from the anchor:
/// `(x̄₍ⱼ₎ − x̄₍₁₎)ᵀ(x̄ − x̄₍₁₎) ≤ 0` for all `j ≥ 2`.
///
/// Neighbour directions are sign-aligned with the anchor (the side they are
/// stretched onto).
pub fn trivial_solution_condition(
    nbhd: &Neighborhood,
    anchor: DVectorView<'_, f64>,
) -> Result<bool, QpError> {
    let m = nbhd.len();
    if m < 2 {
        return Err(QpError::TooFewMembers { needed: 2, got: m });
    }
    let direction = |j: usize| nbhd.stretched.column(j) / nbhd.scales[j].abs();
    let s1 = direction(0);
    let normal = anchor - &s1;
    Ok((1..m).all(|j| (direction(j) - &s1).dot(&normal) <= 0.0))
}
