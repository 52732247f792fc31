//! Dense linear algebra and reverse-mode gradients.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};

pub(crate) use matrix::dot;
pub(crate) use tape::pairwise_sq_dist;

/// Central finite-difference gradient of `f` at `x` with step `h`.
///
/// This is the independent oracle used by gradient checks; it only calls `f`.
pub fn finite_difference(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest entrywise relative error `|a−b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
