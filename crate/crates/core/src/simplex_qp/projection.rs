use nalgebra::DVector;

/// Euclidean projection onto the unit simplex `{β ≥ 0, Σβ = 1}`.
///
/// Sort-and-threshold: with `u` sorted in decreasing order, the active
/// count is the largest `j` with `u_j > (Σ_{r≤j} u_r − 1) / j`, and the
/// projection is `max(v − θ, 0)` for that threshold `θ`. The result is
/// rescaled so its sum is exactly one up to rounding.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    let mut out = v.map(|x| (x - theta).max(0.0));
    let total = out.sum();
    if total > 0.0 {
        out /= total;
    } else {
        // Only reachable through rounding on huge inputs: fall back to the
        // largest coordinate.
        out.fill(0.0);
        out[v.imax()] = 1.0;
    }
    out
}
