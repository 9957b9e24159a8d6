//! The per-point simplex-constrained quadratic program.
//!
//! For an anchor `x̄` with stretched neighbours `X̂` and dissimilarities `w`,
//! the coefficient vector minimizes
//!
//! ```text
//! ½‖x̄ − X̂β‖² + ρ wᵀβ + ½ξ‖diag(w) β‖²   s.t.  β ≥ 0, 1ᵀβ = 1
//! ```
//!
//! which expands to `½βᵀHβ + gᵀβ + ½‖x̄‖²` with `H = X̂ᵀX̂ + ξ diag(w)²` and
//! `g = ρw − X̂ᵀx̄`. The L1 term is linear because `w > 0` on the simplex.

mod bounds;
mod kkt;
mod projection;
mod solver;

pub use bounds::{rho_lower_bound, trivial_solution_condition};
pub use kkt::{certify_kkt, KktCertificate};
pub use projection::project_simplex;
pub use solver::{largest_eigenvalue, solve, SimplexSolution, SolverOptions, StepRule};

use nalgebra::{DMatrix, DVector, DVectorView};
use thiserror::Error;

use crate::geometry::Neighborhood;

/// Default ridge penalty.
pub const DEFAULT_XI: f64 = 1e-4;
/// Default sparsity penalty.
pub const DEFAULT_RHO: f64 = 0.01;

#[derive(Debug, Error, Clone)]
pub enum QpError {
    #[error("solver stopped after {iterations} iterations (last step {last_delta:e})")]
    NotConverged {
        iterations: usize,
        last_delta: f64,
        best: Box<SimplexSolution>,
    },
    #[error("nearest neighbour is tied or coincides with the anchor")]
    DegenerateNearest,
    #[error("operation needs at least {needed} neighbours, got {got}")]
    TooFewMembers { needed: usize, got: usize },
    #[error("invalid penalty: rho = {rho}, xi = {xi}")]
    InvalidPenalty { rho: f64, xi: f64 },
}

/// One point's quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub struct WssrProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub rho: f64,
    pub xi: f64,
    /// Constant `½‖x̄‖²` so that `objective` equals the unexpanded loss.
    pub offset: f64,
}

impl WssrProblem {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        0.5 * beta.dot(&(&self.hessian * beta)) + self.linear.dot(beta) + self.offset
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.hessian * beta + &self.linear
    }
}

/// Builds the quadratic program for one neighbourhood.
pub fn assemble(
    nbhd: &Neighborhood,
    anchor: DVectorView<'_, f64>,
    rho: f64,
    xi: f64,
) -> Result<WssrProblem, QpError> {
    if !(rho >= 0.0) || !(xi > 0.0) || !rho.is_finite() || !xi.is_finite() {
        return Err(QpError::InvalidPenalty { rho, xi });
    }
    if nbhd.is_empty() {
        return Err(QpError::TooFewMembers { needed: 1, got: 0 });
    }
    let x = &nbhd.stretched;
    let mut hessian = x.tr_mul(x);
    for (j, w) in nbhd.weights.iter().enumerate() {
        hessian[(j, j)] += xi * w * w;
    }
    // Exact symmetry regardless of summation order.
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let linear = &nbhd.weights * rho - x.tr_mul(&anchor);
    Ok(WssrProblem {
        hessian,
        linear,
        rho,
        xi,
        offset: 0.5 * anchor.norm_squared(),
    })
}
