use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::WssrProblem;

/// Optimality certificate for a simplex-constrained solution.
///
/// Stationarity reads `Hβ + g + λ1 − μ = 0` with `μ ≥ 0` and `μⱼβⱼ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub stationarity_residual: f64,
    pub complementarity_residual: f64,
    pub primal_residual: f64,
    pub tolerance: f64,
}

impl KktCertificate {
    pub fn passing(&self) -> bool {
        let min_mu = self.mu.iter().copied().fold(f64::INFINITY, f64::min);
        self.stationarity_residual <= self.tolerance
            && self.complementarity_residual <= self.tolerance
            && self.primal_residual <= self.tolerance
            && min_mu >= -self.tolerance
    }

    /// Largest of the three residuals.
    pub fn max_residual(&self) -> f64 {
        self.stationarity_residual
            .max(self.complementarity_residual)
            .max(self.primal_residual)
    }
}

/// Recovers multipliers for `beta` and measures how far it is from optimal.
///
/// Coordinates above `tol` form the support; `λ` is the mean of `−(Hβ+g)ⱼ`
/// over it.
pub fn certify_kkt(problem: &WssrProblem, beta: &DVector<f64>, tol: f64) -> KktCertificate {
    let grad = problem.gradient(beta);
    let mut support: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] > tol).collect();
    if support.is_empty() {
        support.push(beta.imax());
    }
    let lambda = -support.iter().map(|&j| grad[j]).sum::<f64>() / support.len() as f64;
    let mu: Vec<f64> = grad.iter().map(|g| g + lambda).collect();
    let stationarity_residual = support.iter().map(|&j| mu[j].abs()).fold(0.0, f64::max);
    let complementarity_residual = mu
        .iter()
        .zip(beta.iter())
        .map(|(m, b)| (m * b).abs())
        .fold(0.0, f64::max);
    let primal_residual = (beta.sum() - 1.0).abs().max(-beta.min()).max(0.0);
    KktCertificate {
        lambda,
        mu,
        stationarity_residual,
        complementarity_residual,
        primal_residual,
        tolerance: tol,
    }
}
