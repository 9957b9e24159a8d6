//! Query selection, label-driven dissimilarity updates and the constrained
//! clustering round built on top of the pipeline.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVectorView, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_bench::accuracy;
use crate::geometry::{Neighborhood, PointCloud};
use crate::pipeline::{run_on_neighborhoods, run_wssr, PipelineError, SolveDiagnostics, WssrConfig};
use crate::spectral::ClusterAssignment;
use crate::subspace::{constraint_violations, kscc, ClusterState, KscOptions, SubspaceBasis, SubspaceError};

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("budget {budget} exceeds the {unlabelled} unlabelled points")]
    BudgetExceedsUnlabelled { budget: usize, unlabelled: usize },
    #[error("point {0} is already labelled")]
    AlreadyLabelled(usize),
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Alpha {
    /// Proportion of labelled points.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintStore {
    /// Point index → class label.
    pub known: BTreeMap<usize, usize>,
    pub queried_order: Vec<usize>,
    pub alpha: Alpha,
    pub budget_per_round: usize,
}

impl ConstraintStore {
    pub fn new(alpha: Alpha, budget_per_round: usize) -> Result<Self, ActiveError> {
        if let Alpha::Fixed(a) = alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(ActiveError::BadAlpha(a));
            }
        }
        Ok(Self {
            known: BTreeMap::new(),
            queried_order: Vec::new(),
            alpha,
            budget_per_round,
        })
    }

    pub fn add_label(&mut self, point: usize, label: usize) -> Result<(), ActiveError> {
        if self.known.contains_key(&point) {
            return Err(ActiveError::AlreadyLabelled(point));
        }
        self.known.insert(point, label);
        self.queried_order.push(point);
        Ok(())
    }

    pub fn alpha_value(&self, n: usize) -> f64 {
        match self.alpha {
            Alpha::Auto if n > 0 => self.known.len() as f64 / n as f64,
            Alpha::Auto => 0.0,
            Alpha::Fixed(a) => a,
        }
    }

    pub fn unlabelled(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| !self.known.contains_key(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryMode {
    /// Recompute the optimal subspace with the point removed or added.
    Exact,
    /// Second-order eigenvalue perturbation of the cluster scatter.
    Approx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryUtility {
    pub point: usize,
    /// Drop in the reconstruction error of the point's cluster on removal.
    pub u1: f64,
    /// Rise in the reconstruction error of the second cluster on insertion.
    pub u2: f64,
    pub score: f64,
    pub cluster: usize,
    pub second: usize,
}

fn top_sum(mut values: Vec<f64>, q: usize) -> f64 {
    values.sort_by(|a, b| b.total_cmp(a));
    values.iter().take(q).map(|v| v.max(0.0)).sum()
}

/// Energy captured by the best `q`-dimensional linear subspace for the
/// columns of `x`.
fn captured(x: &DMatrix<f64>, q: usize) -> f64 {
    let (p, n) = x.shape();
    if n == 0 {
        return 0.0;
    }
    let m = if n < p { x.tr_mul(x) } else { x * x.transpose() };
    top_sum(m.symmetric_eigenvalues().iter().copied().collect(), q)
}

/// Eigen-structure of one cluster's scatter `Σ xxᵀ`, restricted to its range.
struct ScatterEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl ScatterEigen {
    fn new(x: &DMatrix<f64>) -> Self {
        let (p, n) = x.shape();
        let (values, vectors) = if n < p {
            let eig = SymmetricEigen::new(x.tr_mul(x));
            let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
            let mut keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-12 * scale).collect();
            keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let mut vectors = DMatrix::zeros(p, keep.len());
            for (c, &i) in keep.iter().enumerate() {
                vectors.set_column(c, &(x * eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt()));
            }
            (keep.iter().map(|&i| eig.eigenvalues[i]).collect(), vectors)
        } else {
            let eig = SymmetricEigen::new(x * x.transpose());
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            (
                order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect(),
                eig.eigenvectors.select_columns(&order),
            )
        };
        Self { values, vectors }
    }

    /// Approximate change of the top-`q` eigenvalue sum when `sign·xxᵀ` is
    /// added: first-order term plus the second-order coupling between the
    /// leading and trailing eigenvectors (including the null space).
    fn delta_top(&self, x: DVectorView<'_, f64>, q: usize, sign: f64) -> f64 {
        let a = self.vectors.tr_mul(&x);
        let a2: Vec<f64> = a.iter().map(|v| v * v).collect();
        let null = (x.norm_squared() - a2.iter().sum::<f64>()).max(0.0);
        let lead = q.min(self.values.len());
        let scale = self.values.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let floor = 1e-12 * scale;
        let mut delta = sign * a2[..lead].iter().sum::<f64>();
        for i in 0..lead {
            let li = self.values[i];
            for j in lead..self.values.len() {
                delta += a2[i] * a2[j] / (li - self.values[j]).max(floor);
            }
            delta += a2[i] * null / li.max(floor);
        }
        if lead < q {
            // Spare leading directions absorb the component outside the range.
            delta += sign.max(0.0) * null;
        }
        delta
    }
}

/// Ranks unlabelled points by `U₁ − U₂` and returns the best `budget`,
/// highest score first, ties by lower index. The second cluster of a point
/// is the one with the smallest residual other than its own. Each cluster
/// uses the dimension of its current basis.
pub fn select_queries(
    x: &DMatrix<f64>,
    state: &ClusterState,
    store: &ConstraintStore,
    budget: usize,
    mode: QueryMode,
) -> Result<Vec<QueryUtility>, ActiveError> {
    let n = x.ncols();
    let unlabelled = store.unlabelled(n);
    if budget > unlabelled.len() {
        return Err(ActiveError::BudgetExceedsUnlabelled {
            budget,
            unlabelled: unlabelled.len(),
        });
    }
    let k = state.assignment.k;
    let labels = &state.assignment.labels;
    let members: Vec<Vec<usize>> = (0..k).map(|c| state.assignment.members(c)).collect();
    let cluster_x: Vec<DMatrix<f64>> = members.iter().map(|m| x.select_columns(m)).collect();
    let q: Vec<usize> = state.bases.iter().map(SubspaceBasis::q).collect();
    let second_of = |i: usize| {
        (0..k)
            .filter(|&c| c != labels[i])
            .map(|c| (c, state.bases[c].residual(x.column(i))))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(c, _)| c)
            .unwrap_or(labels[i])
    };

    let mut utilities: Vec<QueryUtility> = match mode {
        QueryMode::Exact => {
            let base: Vec<f64> = cluster_x.iter().zip(&q).map(|(m, &qc)| captured(m, qc)).collect();
            unlabelled
                .par_iter()
                .map(|&i| {
                    let c = labels[i];
                    let s = second_of(i);
                    let xi = x.column(i);
                    let energy = xi.norm_squared();
                    let without: Vec<usize> = members[c].iter().copied().filter(|&j| j != i).collect();
                    let removed = captured(&x.select_columns(&without), q[c]);
                    let u1 = energy - (base[c] - removed);
                    let cols = cluster_x[s].ncols();
                    let mut with = cluster_x[s].clone().insert_column(cols, 0.0);
                    with.set_column(cols, &xi);
                    let added = captured(&with, q[s]);
                    let u2 = energy - (added - base[s]);
                    QueryUtility {
                        point: i,
                        u1,
                        u2,
                        score: u1 - u2,
                        cluster: c,
                        second: s,
                    }
                })
                .collect()
        }
        QueryMode::Approx => {
            let eig: Vec<ScatterEigen> = cluster_x.iter().map(ScatterEigen::new).collect();
            unlabelled
                .par_iter()
                .map(|&i| {
                    let c = labels[i];
                    let s = second_of(i);
                    let xi = x.column(i);
                    let energy = xi.norm_squared();
                    let u1 = energy + eig[c].delta_top(xi, q[c], -1.0);
                    let u2 = energy - eig[s].delta_top(xi, q[s], 1.0);
                    QueryUtility {
                        point: i,
                        u1,
                        u2,
                        score: u1 - u2,
                        cluster: c,
                        second: s,
                    }
                })
                .collect()
        }
    };
    utilities.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.point.cmp(&b.point)));
    utilities.truncate(budget);
    Ok(utilities)
}

/// Label-adjusted dissimilarities for one neighbourhood, in member order.
pub fn update_dissimilarities(
    base: &Neighborhood,
    known: &BTreeMap<usize, usize>,
    previous: &[usize],
    alpha: f64,
) -> Vec<f64> {
    let i = base.anchor;
    base.members
        .iter()
        .zip(base.weights.iter())
        .map(|(&j, &d)| match (known.get(&i), known.get(&j)) {
            (Some(li), Some(lj)) if li == lj => d / std::f64::consts::E,
            (Some(_), Some(_)) => d * std::f64::consts::E + alpha,
            _ => d + if previous[i] != previous[j] { alpha } else { 0.0 },
        })
        .collect()
}

pub trait LabelOracle {
    fn label(&mut self, point: usize) -> Result<usize, ActiveError>;
}

pub struct GroundTruthOracle<'a>(pub &'a [usize]);

impl LabelOracle for GroundTruthOracle<'_> {
    fn label(&mut self, point: usize) -> Result<usize, ActiveError> {
        self.0
            .get(point)
            .copied()
            .ok_or_else(|| ActiveError::Oracle(format!("no label for point {point}")))
    }
}

/// Asks for each label on a text stream.
pub struct PromptOracle<R, W> {
    pub input: R,
    pub output: W,
}

impl<R: BufRead, W: Write> LabelOracle for PromptOracle<R, W> {
    fn label(&mut self, point: usize) -> Result<usize, ActiveError> {
        let io = |e: std::io::Error| ActiveError::Oracle(e.to_string());
        loop {
            write!(self.output, "label for point {point}: ").map_err(io)?;
            self.output.flush().map_err(io)?;
            let mut line = String::new();
            if self.input.read_line(&mut line).map_err(io)? == 0 {
                return Err(ActiveError::Oracle("input closed".into()));
            }
            match line.trim().parse() {
                Ok(l) => return Ok(l),
                Err(_) => writeln!(self.output, "not a label: {:?}", line.trim()).map_err(io)?,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WssrPlusConfig {
    pub wssr: WssrConfig,
    pub ksc: KscOptions,
    pub mode: QueryMode,
}

impl Default for WssrPlusConfig {
    fn default() -> Self {
        Self {
            wssr: WssrConfig::default(),
            ksc: KscOptions::default(),
            mode: QueryMode::Approx,
        }
    }
}

/// Where a round's new labels come from.
pub enum RoundInput<'a> {
    /// Query the `budget` most informative points.
    Active {
        oracle: &'a mut dyn LabelOracle,
        budget: usize,
    },
    /// Labels supplied up front.
    Labels(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub queried: Vec<usize>,
    pub labelled: usize,
    pub alpha: f64,
    pub spectral_accuracy: Option<f64>,
    pub accuracy: Option<f64>,
    pub kscc_objective: Vec<f64>,
    pub kscc_iterations: usize,
    pub violations: usize,
    pub solves: SolveDiagnostics,
    pub disconnected_excess: bool,
}

/// The constrained clustering driver: keeps the data, the unweighted
/// neighbourhoods and the configuration.
pub struct WssrPlus<'a> {
    pub cloud: &'a PointCloud,
    pub base: Vec<Neighborhood>,
    pub config: WssrPlusConfig,
    pub truth: Option<&'a [usize]>,
    rounds: usize,
}

impl<'a> WssrPlus<'a> {
    pub fn new(cloud: &'a PointCloud, config: WssrPlusConfig, truth: Option<&'a [usize]>) -> Result<Self, ActiveError> {
        let base = crate::pipeline::neighborhoods(cloud, config.wssr.knn).map_err(PipelineError::from)?;
        Ok(Self {
            cloud,
            base,
            config,
            truth,
            rounds: 0,
        })
    }

    /// Plain WSSR clustering with bases fitted to it.
    pub fn initial_state(&self) -> Result<(ClusterState, SolveDiagnostics), ActiveError> {
        let out = run_wssr(self.cloud, &self.config.wssr)?;
        let state = ClusterState::fit(self.cloud.data(), out.spectral.assignment, &self.config.ksc)?;
        Ok((state, out.diagnostics))
    }

    /// One round: new labels, reweighted neighbourhoods, re-solve, spectral
    /// clustering, then KSCC from the spectral labels. The store changes
    /// only if the whole round succeeds.
    pub fn round(
        &mut self,
        store: &mut ConstraintStore,
        previous: &ClusterState,
        input: RoundInput<'_>,
    ) -> Result<(ClusterState, RoundDiagnostics), ActiveError> {
        let x = self.cloud.data();
        let n = self.cloud.len();
        let mut next_store = store.clone();
        let mut queried = Vec::new();
        match input {
            RoundInput::Active { oracle, budget } => {
                let picks = select_queries(x, previous, &next_store, budget, self.config.mode)?;
                for u in picks {
                    let label = oracle.label(u.point)?;
                    next_store.add_label(u.point, label)?;
                    queried.push(u.point);
                }
            }
            RoundInput::Labels(pairs) => {
                for (i, l) in pairs {
                    next_store.add_label(i, l)?;
                    queried.push(i);
                }
            }
        }
        let alpha = next_store.alpha_value(n);
        let prev_labels = &previous.assignment.labels;
        let reweighted: Vec<Neighborhood> = self
            .base
            .par_iter()
            .map(|nb| nb.reweighted(&update_dissimilarities(nb, &next_store.known, prev_labels, alpha)))
            .collect();
        let out = run_on_neighborhoods(self.cloud, reweighted, &self.config.wssr)?;
        let spectral_labels = out.spectral.assignment.labels.clone();
        let (state, objective, iterations) = if next_store.known.is_empty() {
            // Nothing to enforce.
            let state = ClusterState::fit(x, out.spectral.assignment.clone(), &self.config.ksc)?;
            (state, Vec::new(), 0)
        } else {
            let r = kscc(x, self.config.wssr.clusters, &spectral_labels, &next_store.known, &self.config.ksc)?;
            (r.ksc.state, r.ksc.objective_history, r.ksc.iterations)
        };
        self.rounds += 1;
        let diagnostics = RoundDiagnostics {
            round: self.rounds,
            queried,
            labelled: next_store.known.len(),
            alpha,
            spectral_accuracy: self.truth.map(|t| accuracy(&spectral_labels, t)),
            accuracy: self.truth.map(|t| accuracy(&state.assignment.labels, t)),
            kscc_objective: objective,
            kscc_iterations: iterations,
            violations: constraint_violations(&state.assignment.labels, &next_store.known),
            solves: out.diagnostics,
            disconnected_excess: out.spectral.disconnected_excess,
        };
        *store = next_store;
        Ok((state, diagnostics))
    }
}

/// Unweighted assignment helper for callers that only hold labels.
pub fn state_from_labels(
    x: &DMatrix<f64>,
    labels: Vec<usize>,
    k: usize,
    opts: &KscOptions,
) -> Result<ClusterState, SubspaceError> {
    ClusterState::fit(x, ClusterAssignment::new(labels, k), opts)
}
