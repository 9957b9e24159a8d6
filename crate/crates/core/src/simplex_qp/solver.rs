use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kkt::{certify_kkt, KktCertificate};
use super::projection::project_simplex;
use super::{QpError, WssrProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// `1 / λ_max(H)`, with `λ_max` from power iteration.
    InverseLipschitz,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub step: StepRule,
    /// Stop once the projected-gradient residual `‖β − Π(β − η∇f)‖∞` falls to this.
    pub tol: f64,
    pub max_iter: usize,
    /// Tolerance attached to the returned certificate.
    pub kkt_tol: f64,
    /// Periodically solve the equality-constrained system on the current
    /// support and finish early if that point certifies as optimal.
    pub polish_every: Option<usize>,
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            step: StepRule::InverseLipschitz,
            tol: 1e-8,
            max_iter: 10_000,
            kkt_tol: 1e-6,
            polish_every: Some(25),
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexSolution {
    pub beta: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktCertificate,
    /// Objective after every iterate, starting with the initial point.
    /// Empty unless requested.
    pub history: Vec<f64>,
    /// Whether the equality-constrained refinement produced `beta`.
    pub polished: bool,
}

impl SimplexSolution {
    /// Indices with a nonzero coefficient.
    pub fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j] > 0.0).collect()
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration, stopping at relative change `rel_tol`. Never below the largest
/// diagonal entry.
pub fn largest_eigenvalue(h: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let n = h.nrows();
    let diag_max = h.diagonal().max();
    if n == 1 {
        return h[(0, 0)];
    }
    // Deterministic start with no symmetric structure.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64);
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let hv = h * &v;
        let next = v.dot(&hv);
        let norm = hv.norm();
        if norm == 0.0 {
            break;
        }
        v = hv / norm;
        if (next - estimate).abs() <= rel_tol * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate.max(diag_max)
}

/// Monotone accelerated proximal gradient with simplex projection, finished
/// by a primal active-set pass on the identified support.
///
/// Starts from `init` or the nearest-neighbour vertex `e₁`. Convergence is
/// measured by the projected-gradient residual `‖β − Π(β − η∇f(β))‖∞`. A run
/// that hits `max_iter` without a certified finish returns `NotConverged`
/// carrying its best iterate.
pub fn solve(
    problem: &WssrProblem,
    init: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<SimplexSolution, QpError> {
    let m = problem.dim();
    if m == 0 {
        return Err(QpError::TooFewMembers { needed: 1, got: 0 });
    }
    let finish = |beta: DVector<f64>, iterations: usize, history: Vec<f64>, polished: bool| {
        let kkt = certify_kkt(problem, &beta, opts.kkt_tol);
        SimplexSolution {
            objective: problem.objective(&beta),
            beta,
            iterations,
            kkt,
            history,
            polished,
        }
    };
    if m == 1 {
        let beta = DVector::from_element(1, 1.0);
        let history = if opts.record_history {
            vec![problem.objective(&beta)]
        } else {
            Vec::new()
        };
        return Ok(finish(beta, 0, history, false));
    }

    let step = match opts.step {
        StepRule::InverseLipschitz => 1.0 / largest_eigenvalue(&problem.hessian, 1e-6, 1000),
        StepRule::Fixed(eta) => eta,
    };
    let mut x = match init {
        Some(b) => project_simplex(b),
        None => {
            let mut e1 = DVector::zeros(m);
            e1[0] = 1.0;
            e1
        }
    };
    let mut f = problem.objective(&x);
    let mut history = Vec::new();
    if opts.record_history {
        history.push(f);
    }
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut last_delta = f64::INFINITY;

    let try_finish = |x: &DVector<f64>, f: f64, history: &mut Vec<f64>| {
        let candidate = active_set_finish(problem, x, opts.kkt_tol * 1e-2)?;
        let pf = problem.objective(&candidate);
        if pf > f + 1e-14 * f.abs().max(1.0) {
            return None;
        }
        if opts.record_history {
            history.push(pf);
        }
        Some(candidate)
    };

    for it in 1..=opts.max_iter {
        let z = project_simplex(&(&y - problem.gradient(&y) * step));
        let fz = problem.objective(&z);
        let prev = x.clone();
        if fz <= f {
            x = z.clone();
            f = fz;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x + (&z - &x) * (t / t_next) + (&x - &prev) * ((t - 1.0) / t_next);
        t = t_next;
        if opts.record_history {
            history.push(f);
        }

        let residual = project_simplex(&(&x - problem.gradient(&x) * step));
        last_delta = (&residual - &x).amax();
        let converged = last_delta <= opts.tol;
        let checkpoint = opts.polish_every.is_some_and(|every| it % every == 0);
        if converged || checkpoint || it == opts.max_iter {
            if let Some(polished) = try_finish(&x, f, &mut history) {
                return Ok(finish(polished, it, history, true));
            }
        }
        if converged {
            return Ok(finish(x, it, history, false));
        }
    }
    Err(QpError::NotConverged {
        iterations: opts.max_iter,
        last_delta,
        best: Box::new(finish(x, opts.max_iter, history, false)),
    })
}

/// Solves `min ½bᵀH_WW b + g_Wᵀb` subject to `Σb = 1` on the working set
/// `W`. Returns the coefficients and the multiplier of the sum constraint.
fn equality_solve(problem: &WssrProblem, working: &[usize]) -> Option<(Vec<f64>, f64)> {
    let s = working.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (a, &i) in working.iter().enumerate() {
        for (b, &j) in working.iter().enumerate() {
            kkt[(a, b)] = problem.hessian[(i, j)];
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
        rhs[a] = -problem.linear[i];
    }
    rhs[s] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.iter().take(s).copied().collect(), sol[s]))
}

/// Primal active-set method started from the feasible point `start`, with
/// the working set initialised to its support. Every step keeps the iterate
/// feasible and does not increase the objective. Returns a point whose
/// certificate passes at `tol`, or `None` if the iteration cap is reached.
fn active_set_finish(problem: &WssrProblem, start: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    let m = start.len();
    let mut beta = start.clone();
    let mut working: Vec<usize> = (0..m).filter(|&j| beta[j] > 0.0).collect();
    if working.is_empty() {
        return None;
    }
    for _ in 0..(4 * m + 20) {
        let (target, _) = equality_solve(problem, &working)?;
        let mut blocking: Option<(usize, f64)> = None;
        for (a, &i) in working.iter().enumerate() {
            let d = target[a] - beta[i];
            if target[a] < 0.0 && d < 0.0 {
                let ratio = beta[i] / -d;
                if blocking.is_none_or(|(_, r)| ratio < r) {
                    blocking = Some((a, ratio));
                }
            }
        }
        match blocking {
            Some((a, ratio)) => {
                let ratio = ratio.clamp(0.0, 1.0);
                for (c, &i) in working.iter().enumerate() {
                    beta[i] += ratio * (target[c] - beta[i]);
                }
                let dropped = working.remove(a);
                beta[dropped] = 0.0;
                for &i in &working {
                    beta[i] = beta[i].max(0.0);
                }
                let total = beta.sum();
                beta /= total;
            }
            None => {
                beta.fill(0.0);
                for (a, &i) in working.iter().enumerate() {
                    beta[i] = target[a];
                }
                let total = beta.sum();
                beta /= total;
                let cert = certify_kkt(problem, &beta, tol);
                if cert.passing() {
                    return Some(beta);
                }
                // Free the bound with the most negative multiplier.
                let (j, mu) = (0..m)
                    .filter(|j| !working.contains(j))
                    .map(|j| (j, cert.mu[j]))
                    .min_by(|a, b| a.1.total_cmp(&b.1))?;
                if mu >= -tol {
                    return None;
                }
                working.push(j);
                working.sort_unstable();
            }
        }
    }
    None
}
