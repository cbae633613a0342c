//! Central finite-difference verification of analytic gradients.

use super::Parameters;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in `param_slices` order.
    pub per_tensor: Vec<f64>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compare `analytic` against `(f(θ+h) − f(θ−h)) / 2h` for every parameter of `model`.
pub fn grad_check<P, F>(model: &P, analytic: &P, loss: F, step: f64, tolerance: f64) -> GradCheckReport
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let mut probe = model.clone();
    let analytic_slices: Vec<Vec<f64>> = analytic.param_slices().iter().map(|s| s.to_vec()).collect();
    let n_tensors = analytic_slices.len();
    let mut per_tensor = vec![0.0f64; n_tensors];
    let mut checked = 0;
    for (t, grads) in analytic_slices.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = probe.param_slices()[t][i];
            probe.param_slices_mut()[t][i] = original + step;
            let up = loss(&probe);
            probe.param_slices_mut()[t][i] = original - step;
            let down = loss(&probe);
            probe.param_slices_mut()[t][i] = original;
            let numeric = (up - down) / (2.0 * step);
            per_tensor[t] = per_tensor[t].max(relative_error(a, numeric));
            checked += 1;
        }
    }
    let max_relative_error = per_tensor.iter().copied().fold(0.0, f64::max);
    GradCheckReport {
        per_tensor,
        max_relative_error,
        tolerance,
        checked,
        passed: max_relative_error < tolerance,
    }
}
