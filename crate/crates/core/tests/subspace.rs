mod common;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{gaussian_matrix, rng};
use wssr::assignment::min_cost_assignment;
use wssr::data_bench::{generate_k_subspaces, generate_two_subspaces, random_frame, CoefficientLaw, Sampling};
use wssr::geometry::PointCloud;
use wssr::pipeline::{run_wssr, WssrConfig};
use wssr::spectral::ClusterAssignment;
use wssr::subspace::{
    constraint_violations, fit_basis, ksc, kscc, reconstruction_error, KscOptions, SubspaceBasis, SubspaceError,
};

fn sampling(n: usize, sigma: f64, seed: u64) -> Sampling {
    Sampling {
        n_per_cluster: n,
        sigma,
        law: CoefficientLaw::Gaussian,
        seed,
    }
}

fn opts(q: usize) -> KscOptions {
    KscOptions { q, ..KscOptions::default() }
}

/// Error-free product and compensated sum, giving roughly twice the working
/// precision.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (p, e) = two_prod(x, y);
        let t = s + p;
        let z = t - s;
        c += (s - (t - z)) + (p - z) + e;
        s = t;
    }
    s + c
}

fn extended_residual(v: &DMatrix<f64>, x: &[f64]) -> f64 {
    let q = v.ncols();
    let coef: Vec<f64> = (0..q).map(|c| compensated_dot(v.column(c).as_slice(), x)).collect();
    let r: Vec<f64> = (0..x.len())
        .map(|row| {
            let mut terms: Vec<f64> = vec![x[row]];
            let mut weights = vec![1.0];
            for c in 0..q {
                terms.push(v[(row, c)]);
                weights.push(-coef[c]);
            }
            compensated_dot(&terms, &weights)
        })
        .collect();
    compensated_dot(&r, &r)
}

fn accuracy_oracle(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut best = 0;
    let mut perm: Vec<usize> = (0..k).collect();
    permutations(&mut perm, 0, &mut |p| {
        let hits = pred.iter().zip(truth).filter(|&(&a, &b)| p[a] == b).count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permutations(items: &mut Vec<usize>, at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == items.len() {
        visit(items);
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permutations(items, at + 1, visit);
        items.swap(at, i);
    }
}

#[test]
fn fitted_basis_beats_random_frames() {
    let mut g = rng(21);
    for _ in 0..100 {
        let p = g.random_range(3..8);
        let q = g.random_range(1..p);
        let x = gaussian_matrix(&mut g, p, 15);
        let fitted = fit_basis(&x, q, 0, false).unwrap();
        let fit_err = reconstruction_error(&x, &[fitted], &[0; 15]).total;
        let frame = SubspaceBasis {
            cluster: 0,
            basis: random_frame(&mut g, p, q),
            center: None,
        };
        let rand_err = reconstruction_error(&x, &[frame], &[0; 15]).total;
        assert!(fit_err <= rand_err + 1e-10, "{fit_err} > {rand_err}");
    }
}

#[test]
fn true_bases_reconstruct_noise_free_data() {
    let (data, bases) = generate_k_subspaces(3, 2, 6, sampling(30, 0.0, 4));
    let bases: Vec<SubspaceBasis> = bases
        .into_iter()
        .enumerate()
        .map(|(cluster, basis)| SubspaceBasis { cluster, basis, center: None })
        .collect();
    let n = data.len();
    let report = reconstruction_error(&data.points, &bases, &data.dense_labels());
    assert!(report.total <= 1e-18 * n as f64 * 1e3, "total {}", report.total);
}

#[test]
fn reconstruction_matches_extended_precision() {
    let mut g = rng(6);
    for _ in 0..30 {
        let p = g.random_range(3..10);
        let q = g.random_range(1..p);
        let x = gaussian_matrix(&mut g, p, 20);
        let basis = SubspaceBasis {
            cluster: 0,
            basis: random_frame(&mut g, p, q),
            center: None,
        };
        let report = reconstruction_error(&x, std::slice::from_ref(&basis), &[0; 20]);
        let mut total = 0.0;
        for i in 0..20 {
            let exact = extended_residual(&basis.basis, x.column(i).as_slice());
            assert!(report.per_point[i] >= 0.0);
            assert!((report.per_point[i] - exact).abs() <= 1e-12 * exact.max(1.0));
            total += report.per_point[i];
        }
        assert!((report.total - total).abs() <= 1e-9);
    }
}

#[test]
fn ground_truth_init_is_a_fixpoint() {
    let (data, _) = generate_k_subspaces(3, 2, 8, sampling(25, 0.0, 7));
    let truth = data.dense_labels();
    let result = ksc(&data.points, 3, &truth, &opts(2)).unwrap();
    assert_eq!(result.iterations, 1);
    assert!(result.converged);
    assert_eq!(result.state.assignment.labels, truth);
}

#[test]
fn spectral_init_then_ksc_separates_lines() {
    let (data, _) = generate_two_subspaces(60.0, (1, 1), 3, sampling(200, 0.0, 1));
    let truth = data.labels.clone();
    let cloud = PointCloud::from_columns(data.points.clone()).unwrap();
    let init = run_wssr(&cloud, &WssrConfig::default()).unwrap().spectral.assignment.labels;
    let result = ksc(&data.points, 2, &init, &opts(1)).unwrap();
    assert_eq!(accuracy_oracle(&result.state.assignment.labels, &truth, 2), 1.0);
}

#[test]
fn all_labelled_reproduces_labels() {
    let (data, _) = generate_k_subspaces(3, 2, 6, sampling(20, 0.05, 3));
    let truth = data.dense_labels();
    let known: BTreeMap<usize, usize> = truth.iter().copied().enumerate().collect();
    let mut init = truth.clone();
    init.shuffle(&mut rng(2));
    let result = kscc(&data.points, 3, &init, &known, &opts(2)).unwrap();
    let labels = &result.ksc.state.assignment.labels;
    assert_eq!(constraint_violations(labels, &known), 0);
    for (i, &t) in truth.iter().enumerate() {
        assert_eq!(labels[i], result.mapping[&t]);
    }
}

#[test]
fn no_labels_reduces_to_ksc() {
    let mut g = rng(12);
    let (data, _) = generate_k_subspaces(3, 2, 6, sampling(30, 0.1, 5));
    let init: Vec<usize> = (0..data.len()).map(|_| g.random_range(0..3)).collect();
    let plain = ksc(&data.points, 3, &init, &opts(2)).unwrap();
    let constrained = kscc(&data.points, 3, &init, &BTreeMap::new(), &opts(2)).unwrap();
    assert_eq!(plain.state.assignment, constrained.ksc.state.assignment);
    assert_eq!(plain.iterations, constrained.ksc.iterations);
    for (a, b) in plain.objective_history.iter().zip(&constrained.ksc.objective_history) {
        assert!((a - 2.0 * b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn constrained_refinement_helps_on_noisy_lines() {
    let mut wins = 0;
    for seed in 0..5 {
        let (data, _) = generate_two_subspaces(60.0, (1, 2), 3, sampling(200, 0.1, seed));
        let truth = data.labels.clone();
        let cloud = PointCloud::from_columns(data.points.clone()).unwrap();
        let init = run_wssr(&cloud, &WssrConfig::default()).unwrap().spectral.assignment.labels;
        let base = accuracy_oracle(&init, &truth, 2);
        let mut idx: Vec<usize> = (0..truth.len()).collect();
        idx.shuffle(&mut rng(seed));
        let known: BTreeMap<usize, usize> = idx[..truth.len() / 10].iter().map(|&i| (i, truth[i])).collect();
        let mut options = opts(2);
        options.class_dims = [(0, 1), (1, 2)].into_iter().collect();
        let result = kscc(&data.points, 2, &init, &known, &options).unwrap();
        let labels = &result.ksc.state.assignment.labels;
        assert_eq!(constraint_violations(labels, &known), 0);
        let dims: Vec<usize> = result.ksc.state.bases.iter().map(SubspaceBasis::q).collect();
        assert_eq!(dims[result.mapping[&0]], 1);
        assert_eq!(dims[result.mapping[&1]], 2);
        if accuracy_oracle(labels, &truth, 2) >= base {
            wins += 1;
        }
    }
    assert_eq!(wins, 5, "constrained refinement won {wins} of 5");
}

#[test]
fn infeasible_and_invalid_inputs() {
    let x = DMatrix::from_fn(3, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 + 1.0);
    let known: BTreeMap<usize, usize> = [(0, 0), (1, 1), (2, 2)].into_iter().collect();
    assert!(matches!(
        kscc(&x, 2, &[0, 0, 0, 1, 1, 1], &known, &opts(1)),
        Err(SubspaceError::InfeasibleLabels { .. })
    ));
    assert!(matches!(
        kscc(&x, 2, &[0, 0, 0, 1, 1, 5], &BTreeMap::new(), &opts(1)),
        Err(SubspaceError::BadInitialLabels(_))
    ));
    let far: BTreeMap<usize, usize> = [(9, 0)].into_iter().collect();
    assert!(matches!(
        kscc(&x, 2, &[0, 0, 0, 1, 1, 1], &far, &opts(1)),
        Err(SubspaceError::LabelOutOfRange(9))
    ));
}

fn exhaustive_assignment_cost(cost: &DMatrix<f64>) -> f64 {
    let (rows, cols) = cost.shape();
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..cols).collect();
    permutations(&mut perm, 0, &mut |p| {
        let total: f64 = (0..rows).map(|r| cost[(r, p[r])]).sum();
        best = best.min(total);
    });
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fitted_basis_is_orthonormal(seed in 0u64..10_000, p in 2usize..9, n in 1usize..20) {
        let mut g = rng(seed);
        let q = g.random_range(1..=p.min(n));
        let x = gaussian_matrix(&mut g, p, n);
        let b = fit_basis(&x, q, 0, false).unwrap();
        let gram = b.basis.tr_mul(&b.basis);
        prop_assert!((gram - DMatrix::<f64>::identity(q, q)).abs().max() < 1e-10);
    }

    #[test]
    fn hungarian_matches_exhaustive(seed in 0u64..10_000, k in 1usize..=6, extra in 0usize..2) {
        let mut g = rng(seed);
        let rows = k;
        let cols = (k + extra).min(6);
        let cost = DMatrix::from_fn(rows, cols, |_, _| g.random_range(0.0..10.0));
        let assign = min_cost_assignment(&cost);
        let mut seen = assign.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), rows);
        let total: f64 = (0..rows).map(|r| cost[(r, assign[r])]).sum();
        prop_assert!((total - exhaustive_assignment_cost(&cost)).abs() < 1e-9);
    }

    #[test]
    fn objectives_are_nonincreasing(seed in 0u64..10_000, frac in 0.0f64..0.3) {
        let mut g = rng(seed);
        let (data, _) = generate_k_subspaces(3, 2, 5, sampling(25, 0.2, seed));
        let truth = data.dense_labels();
        let n = data.len();
        let init: Vec<usize> = (0..n).map(|_| g.random_range(0..3)).collect();
        let known: BTreeMap<usize, usize> = (0..n).filter(|_| g.random_bool(frac)).map(|i| (i, truth[i])).collect();
        let result = kscc(&data.points, 3, &init, &known, &opts(2)).unwrap();
        prop_assume!(result.ksc.repairs == 0);
        for w in result.ksc.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10) + 1e-12);
        }
        prop_assert_eq!(constraint_violations(&result.ksc.state.assignment.labels, &known), 0);
    }

    #[test]
    fn known_labels_stay_consistent(seed in 0u64..10_000) {
        let mut g = rng(seed);
        let (data, _) = generate_k_subspaces(4, 1, 4, sampling(15, 0.3, seed));
        let truth = data.dense_labels();
        let n = data.len();
        let init: Vec<usize> = (0..n).map(|_| g.random_range(0..4)).collect();
        let known: BTreeMap<usize, usize> = (0..n).filter(|_| g.random_bool(0.2)).map(|i| (i, truth[i])).collect();
        let result = kscc(&data.points, 4, &init, &known, &opts(1)).unwrap();
        let labels = &result.ksc.state.assignment.labels;
        for (&i, &ci) in &known {
            for (&j, &cj) in &known {
                prop_assert_eq!(ci == cj, labels[i] == labels[j]);
            }
            prop_assert_eq!(labels[i], result.mapping[&ci]);
        }
        let state = ClusterAssignment::new(labels.clone(), 4);
        prop_assert!(state.sizes().iter().all(|&s| s >= 1));
    }
}

#[test]
fn centred_fit_removes_offset() {
    let mut g = rng(4);
    let offset = DVector::from_vec(vec![3.0, -2.0, 1.0]);
    let dir = DVector::from_vec(vec![1.0, 1.0, 0.0]).normalize();
    let x = DMatrix::from_fn(3, 20, |r, _| offset[r]);
    let x = DMatrix::from_columns(
        &(0..20)
            .map(|c| x.column(c) + &dir * g.random_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    );
    let b = fit_basis(&x, 1, 0, true).unwrap();
    let report = reconstruction_error(&x, &[b], &[0; 20]);
    assert!(report.total < 1e-20);
}
