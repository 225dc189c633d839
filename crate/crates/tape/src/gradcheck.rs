//! Central finite differences, used as an independent oracle for analytic gradients.

use crate::Tensor;

/// Step used by the gradient checks in this workspace.
pub const STEP: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; keeps exactly-zero analytic
/// gradients (e.g. biases ahead of a normalization) from dividing by noise.
pub const REL_FLOOR: f64 = 1e-6;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for each requested flat index.
pub fn central_difference(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, indices: &[usize], h: f64) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Evenly spread sample of at most `max` flat indices of a tensor of length `len`.
pub fn spread_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|i| i * len / max + (i * 7919) % (len / max).max(1)).collect()
}
