//! Neighbourhoods, per-point solves, affinity and spectral clustering.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{build_all_neighborhoods, GeometryError, Neighborhood, PointCloud};
use crate::simplex_qp::{assemble, solve, QpError, SimplexSolution, SolverOptions, DEFAULT_RHO, DEFAULT_XI};
use crate::spectral::{
    build_affinity, spectral_cluster, AffinityMatrix, CoefficientMatrix, SpectralError, SpectralOptions,
    SpectralResult,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("point {point}: {source}")]
    Solve { point: usize, source: QpError },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WssrConfig {
    pub clusters: usize,
    pub knn: usize,
    pub rho: f64,
    pub xi: f64,
    pub solver: SolverOptions,
    pub spectral: SpectralOptions,
    /// Keep the best iterate of a solve that hit `max_iter` instead of failing.
    pub accept_nonconverged: bool,
}

impl Default for WssrConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            knn: 10,
            rho: DEFAULT_RHO,
            xi: DEFAULT_XI,
            solver: SolverOptions::default(),
            spectral: SpectralOptions::default(),
            accept_nonconverged: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub solves: usize,
    pub non_converged: usize,
    pub failing_certificates: usize,
    pub max_kkt_residual: f64,
    pub total_iterations: usize,
}

impl SolveDiagnostics {
    fn record(&mut self, sol: &SimplexSolution, converged: bool) {
        self.solves += 1;
        self.total_iterations += sol.iterations;
        if !converged {
            self.non_converged += 1;
        }
        if !sol.kkt.passing() {
            self.failing_certificates += 1;
        }
        self.max_kkt_residual = self.max_kkt_residual.max(sol.kkt.max_residual());
    }
}

#[derive(Debug, Clone)]
pub struct WssrOutput {
    pub neighborhoods: Vec<Neighborhood>,
    pub solutions: Vec<SimplexSolution>,
    pub coefficients: CoefficientMatrix,
    pub affinity: AffinityMatrix,
    pub spectral: SpectralResult,
    pub diagnostics: SolveDiagnostics,
}

/// Neighbourhoods with the size capped at `N − 1`.
pub fn neighborhoods(cloud: &PointCloud, knn: usize) -> Result<Vec<Neighborhood>, GeometryError> {
    build_all_neighborhoods(cloud, knn.min(cloud.len().saturating_sub(1)).max(1))
}

/// Solves every neighbourhood's program in parallel.
pub fn solve_all(
    cloud: &PointCloud,
    neighborhoods: &[Neighborhood],
    config: &WssrConfig,
) -> Result<(Vec<SimplexSolution>, SolveDiagnostics), PipelineError> {
    let results: Vec<Result<(SimplexSolution, bool), PipelineError>> = neighborhoods
        .par_iter()
        .map(|nb| {
            let anchor = cloud.unit(nb.anchor);
            let wrap = |source| PipelineError::Solve { point: nb.anchor, source };
            let problem = assemble(nb, anchor, config.rho, config.xi).map_err(wrap)?;
            match solve(&problem, None, &config.solver) {
                Ok(sol) => Ok((sol, true)),
                Err(QpError::NotConverged { best, .. }) if config.accept_nonconverged => Ok((*best, false)),
                Err(e) => Err(wrap(e)),
            }
        })
        .collect();
    let mut diagnostics = SolveDiagnostics::default();
    let mut solutions = Vec::with_capacity(results.len());
    for r in results {
        let (sol, converged) = r?;
        diagnostics.record(&sol, converged);
        solutions.push(sol);
    }
    if diagnostics.non_converged > 0 {
        log::warn!("{} of {} solves hit the iteration cap", diagnostics.non_converged, diagnostics.solves);
    }
    Ok((solutions, diagnostics))
}

pub fn coefficient_matrix(
    n: usize,
    neighborhoods: &[Neighborhood],
    solutions: &[SimplexSolution],
) -> Result<CoefficientMatrix, SpectralError> {
    let betas: Vec<&DVector<f64>> = solutions.iter().map(|s| &s.beta).collect();
    CoefficientMatrix::from_solutions(
        n,
        neighborhoods.iter().zip(betas).map(|(nb, b)| (nb.members.as_slice(), b)),
    )
}

/// Runs the pipeline on precomputed neighbourhoods (possibly reweighted).
pub fn run_on_neighborhoods(
    cloud: &PointCloud,
    neighborhoods: Vec<Neighborhood>,
    config: &WssrConfig,
) -> Result<WssrOutput, PipelineError> {
    let (solutions, diagnostics) = solve_all(cloud, &neighborhoods, config)?;
    let coefficients = coefficient_matrix(cloud.len(), &neighborhoods, &solutions)?;
    let affinity = build_affinity(&coefficients);
    let spectral = spectral_cluster(&affinity, config.clusters, &config.spectral)?;
    Ok(WssrOutput {
        neighborhoods,
        solutions,
        coefficients,
        affinity,
        spectral,
        diagnostics,
    })
}

pub fn run_wssr(cloud: &PointCloud, config: &WssrConfig) -> Result<WssrOutput, PipelineError> {
    let nbhds = neighborhoods(cloud, config.knn)?;
    run_on_neighborhoods(cloud, nbhds, config)
}
