//! Independent reference implementations and random instance generators
//! shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wssr::geometry::{build_neighborhood, Neighborhood, PointCloud};
use wssr::simplex_qp::WssrProblem;

/// Minimizes `½βᵀHβ + gᵀβ` over the simplex by enumerating every support
/// set and solving the equality-constrained KKT system on it. Keeps the
/// best feasible candidate whose off-support multipliers are nonnegative;
/// falls back to the best feasible candidate if none certifies.
pub fn active_set_oracle(problem: &WssrProblem) -> (DVector<f64>, f64) {
    let m = problem.dim();
    assert!(m <= 12, "enumeration oracle is for small problems");
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|&j| mask & (1 << j) != 0).collect();
        let s = support.len();
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = problem.hessian[(i, j)];
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = -problem.linear[i];
        }
        rhs[s] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if sol.iter().take(s).any(|&b| b < -1e-12) {
            continue;
        }
        let mut beta = DVector::zeros(m);
        for (a, &i) in support.iter().enumerate() {
            beta[i] = sol[a].max(0.0);
        }
        let f = problem.objective(&beta);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((beta, f));
        }
    }
    best.expect("some support is always feasible")
}

/// Projection oracle: minimizes ‖β − v‖² over a regular grid on the
/// simplex, then refines around the best grid point with shrinking steps.
pub fn grid_projection_oracle(v: &[f64], resolution: usize) -> Vec<f64> {
    let m = v.len();
    let dist = |b: &[f64]| b.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut best = vec![0.0; m];
    let mut best_d = f64::INFINITY;
    let mut counts = vec![0usize; m];
    enumerate_compositions(resolution, m, 0, &mut counts, &mut |c| {
        let b: Vec<f64> = c.iter().map(|&k| k as f64 / resolution as f64).collect();
        let d = dist(&b);
        if d < best_d {
            best_d = d;
            best = b;
        }
    });
    // Pairwise mass transfers with shrinking step sizes. The change in
    // squared distance is evaluated in closed form to avoid cancellation,
    // and a move must beat the rounding error of `best - v` to count.
    let scale = v.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let mut step = 1.0 / resolution as f64;
    while step > 1e-14 * scale {
        let mut improved = true;
        while improved {
            improved = false;
            for i in 0..m {
                for j in 0..m {
                    if i == j || best[j] < step {
                        continue;
                    }
                    let change = 2.0 * step * ((best[i] - v[i]) - (best[j] - v[j])) + 2.0 * step * step;
                    if change < -8.0 * f64::EPSILON * scale * step {
                        best[i] += step;
                        best[j] -= step;
                        improved = true;
                    }
                }
            }
        }
        step /= 2.0;
    }
    best
}

fn enumerate_compositions(
    total: usize,
    parts: usize,
    index: usize,
    counts: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if index == parts - 1 {
        counts[index] = total;
        visit(counts);
        return;
    }
    for k in 0..=total {
        counts[index] = k;
        enumerate_compositions(total - k, parts, index + 1, counts, visit);
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A random neighbourhood: `size + 1` Gaussian points in `dim` dimensions,
/// the first of which is the anchor.
pub fn random_neighborhood(rng: &mut impl Rng, dim: usize, size: usize) -> (PointCloud, Neighborhood) {
    loop {
        let cloud = PointCloud::from_columns(gaussian_matrix(rng, dim, size + 1)).unwrap();
        if let Ok(nb) = build_neighborhood(&cloud, 0, size) {
            if nb.len() == size {
                return (cloud, nb);
            }
        }
    }
}

/// Random problem ingredients: anchor on the sphere plus a neighbourhood
/// whose members concentrate around it, which exercises interior optima.
pub fn random_local_neighborhood(
    rng: &mut impl Rng,
    dim: usize,
    size: usize,
    spread: f64,
) -> (PointCloud, Neighborhood) {
    loop {
        let anchor = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let mut data = DMatrix::zeros(dim, size + 1);
        data.set_column(0, &anchor);
        for j in 1..=size {
            let sign = if rng.random_bool(0.3) { -1.0 } else { 1.0 };
            let noise = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal) * spread);
            data.set_column(j, &((&anchor + noise) * sign));
        }
        let cloud = PointCloud::from_columns(data).unwrap();
        if let Ok(nb) = build_neighborhood(&cloud, 0, size) {
            if nb.len() == size {
                return (cloud, nb);
            }
        }
    }
}
