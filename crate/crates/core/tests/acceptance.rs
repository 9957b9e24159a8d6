//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use common::{active_set_oracle, grid_projection_oracle, random_local_neighborhood, random_neighborhood, rng};
use wssr::active::{Alpha, QueryMode};
use wssr::data_bench::{
    median, run_experiment, table_configs, ActiveSpec, DataSpec, ExperimentConfig, ExperimentResult, Selection, Table,
};
use wssr::geometry::Neighborhood;
use wssr::simplex_qp::{
    assemble, project_simplex, rho_lower_bound, solve, trivial_solution_condition, SimplexSolution, SolverOptions,
    WssrProblem, DEFAULT_XI,
};

const SEEDS: u64 = 10;
const ANGLE_MIN: f64 = 0.97;
const NOISE_HIGH_TARGET: f64 = 0.745;
const NOISE_HIGH_TOL: f64 = 0.06;
const DIMS_MIN: f64 = 0.99;
const DIMS_Q16_TARGET: f64 = 0.874;
const DIMS_Q16_TOL: f64 = 0.08;
const ONE_MINUTE: f64 = 60.0;
const FIVE_MINUTES: f64 = 300.0;
const BOUND_INSTANCES: usize = 500;
const ORACLE_INSTANCES: usize = 1000;
const OBJECTIVE_TOL: f64 = 1e-6;
const PROJECTION_TOL: f64 = 1e-8;
const KKT_TOL: f64 = 1e-6;
const LABEL_FRACTIONS: [f64; 3] = [0.1, 0.2, 0.3];
const MNIST_SEEDS: u64 = 5;
const MNIST_K2_MIN: f64 = 0.95;
const MNIST_K8_MIN: f64 = 0.90;
const GROUPING_INSTANCES: usize = 200;
const GROUPING_TOL: f64 = 1e-6;

enum Verdict {
    Pass,
    Fail,
    Skipped,
}

struct Line {
    id: usize,
    verdict: Verdict,
    detail: String,
    /// A failing best-effort line is reported but does not fail the run.
    binding: bool,
}

impl Line {
    fn new(id: usize, ok: bool, detail: String) -> Self {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        Self {
            id,
            verdict,
            detail,
            binding: true,
        }
    }

    fn skipped(id: usize, detail: String) -> Self {
        Self {
            id,
            verdict: Verdict::Skipped,
            detail,
            binding: false,
        }
    }

    fn best_effort(self) -> Self {
        Self { binding: false, ..self }
    }

    fn print(&self) {
        let tag = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skipped => "SKIPPED",
        };
        let note = if self.binding { "" } else { " [best effort]" };
        println!("criterion {:>2}: {tag:<7} {}{note}", self.id, self.detail);
    }
}

/// Worst certificate seen across the solves of criteria 1–6.
#[derive(Default)]
struct KktLedger {
    solves: usize,
    failing: usize,
    worst: f64,
}

impl KktLedger {
    fn solution(&mut self, sol: &SimplexSolution) {
        self.solves += 1;
        if !sol.kkt.passing() || sol.kkt.tolerance > KKT_TOL {
            self.failing += 1;
        }
        self.worst = self.worst.max(sol.kkt.max_residual());
    }

    fn experiment(&mut self, result: &ExperimentResult) {
        for s in &result.per_seed {
            self.solves += s.solves.solves;
            self.failing += s.solves.failing_certificates;
            self.worst = self.worst.max(s.solves.max_kkt_residual);
            for r in &s.rounds {
                self.solves += r.solves.solves;
                self.failing += r.solves.failing_certificates;
                self.worst = self.worst.max(r.solves.max_kkt_residual);
            }
        }
    }
}

fn config_named(table: Table, name: &str) -> ExperimentConfig {
    let seeds: Vec<u64> = (0..SEEDS).collect();
    table_configs(table, &seeds)
        .into_iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("no config {name}"))
}

fn timed(config: &ExperimentConfig) -> (ExperimentResult, f64) {
    let start = Instant::now();
    let result = run_experiment(config).expect("experiment runs");
    (result, start.elapsed().as_secs_f64())
}

fn criterion_1(kkt: &mut KktLedger) -> Line {
    let (r, secs) = timed(&config_named(Table::Angles, "angles_theta60"));
    kkt.experiment(&r);
    Line::new(
        1,
        r.median >= ANGLE_MIN && secs < ONE_MINUTE,
        format!("angle 60: median {:.3} (>= {ANGLE_MIN}), {secs:.1}s (< {ONE_MINUTE}s)", r.median),
    )
}

fn criterion_2(kkt: &mut KktLedger) -> Line {
    let (r, secs) = timed(&config_named(Table::Noise, "noise_sigma0"));
    kkt.experiment(&r);
    Line::new(
        2,
        r.median == 1.0 && secs < ONE_MINUTE,
        format!("noise 0.0: median {:.3} (= 1.000), {secs:.1}s (< {ONE_MINUTE}s)", r.median),
    )
}

fn criterion_3(kkt: &mut KktLedger) -> Line {
    let (r, _) = timed(&config_named(Table::Noise, "noise_sigma0.5"));
    kkt.experiment(&r);
    Line::new(
        3,
        (r.median - NOISE_HIGH_TARGET).abs() <= NOISE_HIGH_TOL,
        format!("noise 0.5: median {:.3} (target {NOISE_HIGH_TARGET} ± {NOISE_HIGH_TOL})", r.median),
    )
}

fn criterion_4(kkt: &mut KktLedger) -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut total = 0.0;
    for q in [2, 6, 10, 16] {
        let (r, secs) = timed(&config_named(Table::Dims, &format!("dims_q{q}")));
        kkt.experiment(&r);
        total += secs;
        let good = if q == 16 {
            (r.median - DIMS_Q16_TARGET).abs() <= DIMS_Q16_TOL
        } else {
            r.median >= DIMS_MIN
        };
        ok &= good;
        parts.push(format!("q{q} {:.3}", r.median));
    }
    ok &= total < FIVE_MINUTES;
    Line::new(
        4,
        ok,
        format!(
            "{} (q<=10 >= {DIMS_MIN}, q16 {DIMS_Q16_TARGET} ± {DIMS_Q16_TOL}), {total:.1}s (< {FIVE_MINUTES}s)",
            parts.join(", ")
        ),
    )
}

fn random_bound_neighborhood(r: &mut impl Rng) -> (DVector<f64>, Neighborhood) {
    let size = r.random_range(2..=8);
    let dim = r.random_range(3..=6);
    let spread = r.random_range(0.1..0.8);
    let (cloud, nb) = if r.random_bool(0.5) {
        random_local_neighborhood(r, dim, size, spread)
    } else {
        random_neighborhood(r, dim, size)
    };
    (cloud.unit(0).into_owned(), nb)
}

fn solve_at(nb: &Neighborhood, anchor: &DVector<f64>, rho: f64) -> Option<SimplexSolution> {
    let prob = assemble(nb, anchor.as_view(), rho, DEFAULT_XI).ok()?;
    solve(&prob, None, &SolverOptions::default()).ok()
}

fn criterion_5(kkt: &mut KktLedger) -> Line {
    let mut r = rng(5005);
    let (mut instances, mut failures) = (0, 0);
    let (mut trivial, mut below) = (0, 0);
    while instances < BOUND_INSTANCES {
        let (anchor, nb) = random_bound_neighborhood(&mut r);
        let Ok(bound) = rho_lower_bound(&nb, anchor.as_view(), DEFAULT_XI) else { continue };
        instances += 1;
        match solve_at(&nb, &anchor, 1.01 * bound) {
            Some(sol) => {
                kkt.solution(&sol);
                if sol.support() != vec![0] || !sol.kkt.passing() {
                    failures += 1;
                }
            }
            None => failures += 1,
        }
        if trivial_solution_condition(&nb, anchor.as_view()).unwrap_or(false) {
            trivial += 1;
            for rho in [1e-4, 1.0, 100.0] {
                match solve_at(&nb, &anchor, rho) {
                    Some(sol) => {
                        kkt.solution(&sol);
                        if sol.support() != vec![0] {
                            failures += 1;
                        }
                    }
                    None => failures += 1,
                }
            }
        }
        if bound > 0.0 {
            below += 1;
            match solve_at(&nb, &anchor, 0.5 * bound) {
                Some(sol) => {
                    kkt.solution(&sol);
                    if sol.support().len() < 2 {
                        failures += 1;
                    }
                }
                None => failures += 1,
            }
        }
    }
    Line::new(
        5,
        failures == 0,
        format!("{instances} neighbourhoods, {trivial} meeting the trivial condition, {below} with bound > 0: {failures} failures"),
    )
}

fn random_problem(r: &mut impl Rng) -> WssrProblem {
    let size = r.random_range(1..=6);
    let dim = r.random_range(2..=7);
    let (cloud, nb) = if r.random_bool(0.5) {
        random_neighborhood(r, dim, size)
    } else {
        random_local_neighborhood(r, dim, size, 0.4)
    };
    let rho = 10f64.powf(r.random_range(-4.0..0.0));
    assemble(&nb, cloud.unit(0), rho, DEFAULT_XI).expect("valid problem")
}

fn criterion_6(kkt: &mut KktLedger) -> Line {
    let mut r = rng(6006);
    let mut worst_objective: f64 = 0.0;
    let mut objective_failures = 0;
    for _ in 0..ORACLE_INSTANCES {
        let prob = random_problem(&mut r);
        let (_, f_oracle) = active_set_oracle(&prob);
        match solve(&prob, None, &SolverOptions::default()) {
            Ok(sol) => {
                kkt.solution(&sol);
                let gap = (sol.objective - f_oracle).abs();
                worst_objective = worst_objective.max(gap);
                if gap > OBJECTIVE_TOL {
                    objective_failures += 1;
                }
            }
            Err(_) => objective_failures += 1,
        }
    }
    let mut worst_projection: f64 = 0.0;
    let mut projection_failures = 0;
    for _ in 0..ORACLE_INSTANCES {
        let m = r.random_range(2..=6);
        let scale = 10f64.powf(r.random_range(-1.0..1.0));
        let v: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let p = project_simplex(&DVector::from_vec(v.clone()));
        let oracle = grid_projection_oracle(&v, 20);
        let gap = p.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_projection = worst_projection.max(gap);
        if gap > PROJECTION_TOL {
            projection_failures += 1;
        }
    }
    Line::new(
        6,
        objective_failures == 0 && projection_failures == 0,
        format!(
            "objective gap max {worst_objective:.1e} (<= {OBJECTIVE_TOL:.0e}, {objective_failures} failures), projection gap max {worst_projection:.1e} (<= {PROJECTION_TOL:.0e}, {projection_failures} failures)"
        ),
    )
}

fn criterion_7(kkt: &KktLedger) -> Line {
    Line::new(
        7,
        kkt.failing == 0 && kkt.worst <= KKT_TOL,
        format!(
            "{} accepted solves, worst residual {:.1e} (<= {KKT_TOL:.0e}), {} failing certificates",
            kkt.solves, kkt.worst, kkt.failing
        ),
    )
}

fn criterion_8() -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for frac in LABEL_FRACTIONS {
        let mut config = config_named(Table::Noise, "noise_sigma0.1");
        config.active = Some(ActiveSpec {
            label_fraction: frac,
            rounds: 1,
            selection: Selection::Random,
            alpha: Alpha::Auto,
            mode: QueryMode::Approx,
        });
        let result = run_experiment(&config).expect("experiment runs");
        let mut violations = 0;
        let mut non_monotone = 0;
        for s in &result.per_seed {
            for round in &s.rounds {
                violations += round.violations;
                if round.kscc_objective.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
                    non_monotone += 1;
                }
            }
        }
        let wssr = median(&result.per_seed.iter().map(|s| s.wssr_accuracy).collect::<Vec<_>>());
        ok &= violations == 0 && non_monotone == 0 && result.median >= wssr;
        parts.push(format!(
            "{:.0}%: {:.3} vs {wssr:.3}, {violations} violations, {non_monotone} non-monotone",
            frac * 100.0,
            result.median
        ));
    }
    Line::new(8, ok, parts.join("; "))
}

fn mnist_files(dir: &Path) -> Option<(PathBuf, PathBuf)> {
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    (images.exists() && labels.exists()).then_some((images, labels))
}

fn criterion_9() -> Line {
    let Some(dir) = std::env::var_os("WSSR_MNIST_DIR") else {
        return Line::skipped(9, "WSSR_MNIST_DIR not set".into());
    };
    let Some((images, labels)) = mnist_files(Path::new(&dir)) else {
        return Line::skipped(9, format!("no train-*-ubyte files in {}", Path::new(&dir).display()));
    };
    let data = |classes| DataSpec::Idx {
        images: images.clone(),
        labels: labels.clone(),
        classes: Some(classes),
        per_class: 100,
        pca_dim: Some(200),
    };
    let seeds: Vec<u64> = (0..MNIST_SEEDS).collect();
    let base = ExperimentConfig {
        name: "mnist_k2".into(),
        data: data(2),
        wssr: Default::default(),
        ksc: Default::default(),
        seeds,
        active: None,
    };
    let k2 = run_experiment(&base).expect("experiment runs");
    let k8_config = ExperimentConfig {
        name: "mnist_k8_active".into(),
        data: data(8),
        active: Some(ActiveSpec {
            label_fraction: 0.1,
            rounds: 10,
            selection: Selection::Active,
            alpha: Alpha::Auto,
            mode: QueryMode::Approx,
        }),
        ..base
    };
    let k8 = run_experiment(&k8_config).expect("experiment runs");
    Line::new(
        9,
        k2.median >= MNIST_K2_MIN && k8.median >= MNIST_K8_MIN,
        format!(
            "K=2 median {:.3} (>= {MNIST_K2_MIN}); K=8 with 10% active labels median {:.3} (>= {MNIST_K8_MIN}, plain WSSR {:.3})",
            k2.median, k8.median, k8.wssr_median
        ),
    )
    .best_effort()
}

fn criterion_10() -> Line {
    let mut r = rng(1010);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..GROUPING_INSTANCES {
        let size = r.random_range(2..=6);
        let dim = r.random_range(3..=6);
        let spread = r.random_range(0.1..0.6);
        let (cloud, nb) = random_local_neighborhood(&mut r, dim, size, spread);
        let dup = r.random_range(0..nb.len());
        let mut members = nb.members.clone();
        members.push(nb.members[dup]);
        let mut stretched = nb.stretched.clone().insert_column(nb.len(), 0.0);
        stretched.set_column(nb.len(), &nb.stretched.column(dup));
        let mut scales = nb.scales.clone();
        scales.push(nb.scales[dup]);
        let doubled = Neighborhood {
            anchor: nb.anchor,
            members,
            stretched,
            scales,
            weights: nb.weights.clone().insert_row(nb.len(), nb.weights[dup]),
        };
        let prob = assemble(&doubled, cloud.unit(0), 0.01, DEFAULT_XI).expect("valid problem");
        match solve(&prob, None, &SolverOptions::default()) {
            Ok(sol) => {
                let gap = (sol.beta[dup] - sol.beta[nb.len()]).abs();
                worst = worst.max(gap);
                if gap > GROUPING_TOL {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    Line::new(
        10,
        failures == 0,
        format!("{GROUPING_INSTANCES} duplicated members, max coefficient gap {worst:.1e} (<= {GROUPING_TOL:.0e})"),
    )
}

fn main() {
    let start = Instant::now();
    let mut kkt = KktLedger::default();
    let mut lines = Vec::new();
    for run in [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6] {
        let line = run(&mut kkt);
        line.print();
        lines.push(line);
    }
    for line in [criterion_7(&kkt), criterion_8(), criterion_9(), criterion_10()] {
        line.print();
        lines.push(line);
    }
    let failed: Vec<usize> = lines
        .iter()
        .filter(|l| l.binding && matches!(l.verdict, Verdict::Fail))
        .map(|l| l.id)
        .collect();
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
