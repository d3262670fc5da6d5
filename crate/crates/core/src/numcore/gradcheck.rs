//! Central finite-difference gradient verification.
//!
//! The checker re-evaluates the loss through a caller-supplied closure, so it
//! is independent of the tape's backward pass by construction.

/// Relative error with a floor: coordinates where both gradients are below
/// 1e-6 in magnitude count as matching, since central differences bottom out
/// around 1e-9 absolute accuracy.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-6 {
        return 0.0;
    }
    (analytic - numeric).abs() / denom
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (tensor index, coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` must evaluate the loss for the given parameter values without
/// consulting any cached gradient state. `coords` lists `(tensor, element)`
/// pairs to probe; `step` is the half-width of the central difference.
pub fn check_against_finite_differences<F>(
    param_values: &[Vec<f64>],
    analytic_grads: &[Vec<f64>],
    mut loss_fn: F,
    coords: &[(usize, usize)],
    step: f64,
) -> GradCheckReport
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    assert_eq!(param_values.len(), analytic_grads.len());
    let mut work: Vec<Vec<f64>> = param_values.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for &(t, i) in coords {
        let original = work[t][i];
        work[t][i] = original + step;
        let up = loss_fn(&work);
        work[t][i] = original - step;
        let down = loss_fn(&work);
        work[t][i] = original;

        let numeric = (up - down) / (2.0 * step);
        let analytic = analytic_grads[t][i];
        let rel = relative_error(analytic, numeric);
        report.coords_checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((t, i, analytic, numeric));
        }
    }
    report
}

/// Every coordinate of every tensor.
pub fn all_coords(param_values: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut coords = Vec::new();
    for (t, v) in param_values.iter().enumerate() {
        for i in 0..v.len() {
            coords.push((t, i));
        }
    }
    coords
}

/// A deterministic sample of `n` coordinates drawn across all tensors.
pub fn sample_coords(param_values: &[Vec<f64>], n: usize, seed: u64) -> Vec<(usize, usize)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut all = all_coords(param_values);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(n);
    all
}
