//! Kernel independence statistics and the per-sample weight update.
//!
//! The empirical HSIC of `m` paired draws is
//! `(m−1)⁻² · tr(K_U P K_V P)` with RBF kernels `K_ij = exp(−‖x_i − x_j‖²/σ²)`
//! and the centering matrix `P = I − 11ᵀ/m`. It is evaluated here as the
//! Frobenius product of the two double-centered kernels, which is the same
//! quantity and symmetric in its arguments bit for bit.
//!
//! The dependence of one training sample sums HSIC over every pair of its
//! interest rows, with the `d` embedding coordinates as the draws. Weight
//! updates scale the interest matrix by the sample weight, keep the kernel
//! bandwidths that were resolved on the unscaled matrix, and take one
//! projected gradient step.

mod weights;

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_dist, Matrix, Tape, Var};

pub use weights::{
    update_sample_weights, HsicAxis, SampleWeightTable, WeightUpdate, WeightUpdateConfig,
    WeightUpdateReport,
};

/// RBF bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the samples at hand; 1 when that is 0.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::Median,
        }
    }
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Bandwidth::Fixed(s) if !(s > 0.0 && s.is_finite()) => Err(Error::InvalidArgument(
                format!("kernel bandwidth must be positive, got {s}"),
            )),
            _ => Ok(()),
        }
    }

    /// Bandwidth for samples given as the rows of an `m×p` matrix.
    pub fn resolve(&self, samples: &Matrix) -> f64 {
        match self.bandwidth {
            Bandwidth::Fixed(s) => s,
            Bandwidth::Median => median_bandwidth(samples),
        }
    }
}

/// Median Euclidean distance over all pairs of rows, falling back to 1 when
/// the median is zero.
pub fn median_bandwidth(samples: &Matrix) -> f64 {
    let m = samples.rows();
    let sq = pairwise_sq_dist(samples);
    let mut dists = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            dists.push(sq.get(i, j).sqrt());
        }
    }
    median_or_one(dists)
}

/// [`median_bandwidth`] for scalar samples.
pub fn median_bandwidth_scalar(x: &[f64]) -> f64 {
    let mut dists = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
    for (i, a) in x.iter().enumerate() {
        dists.extend(x[i + 1..].iter().map(|b| (a - b).abs()));
    }
    median_or_one(dists)
}

fn median_or_one(mut dists: Vec<f64>) -> f64 {
    let n = dists.len();
    if n == 0 {
        return 1.0;
    }
    let (below, &mut upper, _) = dists.select_nth_unstable_by(n / 2, f64::total_cmp);
    let med = if n % 2 == 1 {
        upper
    } else {
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// RBF Gram matrix over the rows of `samples`.
pub fn rbf_kernel_rows(samples: &Matrix, sigma: f64) -> Matrix {
    let inv = 1.0 / (sigma * sigma);
    let mut k = pairwise_sq_dist(samples).map(|d| (-d * inv).exp());
    for i in 0..k.rows() {
        k.set(i, i, 1.0);
    }
    k
}

/// RBF Gram matrix of scalar samples.
pub fn rbf_kernel_matrix(x: &[f64], cfg: &KernelConfig) -> Result<Matrix> {
    cfg.validate()?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!("kernel needs at least 2 samples, got {}", x.len())));
    }
    let samples = Matrix::column_vector(x);
    Ok(rbf_kernel_rows(&samples, cfg.resolve(&samples)))
}

/// HSIC from two Gram matrices of the same size, clamped at zero.
pub fn hsic_from_kernels(ku: &Matrix, kv: &Matrix) -> f64 {
    hsic_from_centered(&ku.double_center(), &kv.double_center())
}

fn hsic_from_centered(cu: &Matrix, cv: &Matrix) -> f64 {
    let m = cu.rows() as f64;
    (cu.frobenius_dot(cv) / ((m - 1.0) * (m - 1.0))).max(0.0)
}

/// Empirical HSIC of paired scalar samples.
pub fn empirical_hsic(u: &[f64], v: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("paired samples of lengths {} and {}", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Err(Error::InvalidArgument(format!("HSIC needs at least 2 samples, got {}", u.len())));
    }
    let ku = rbf_kernel_matrix(u, cfg)?;
    let kv = rbf_kernel_matrix(v, cfg)?;
    Ok(hsic_from_kernels(&ku, &kv))
}

/// Per-row bandwidths of an interest matrix (each row is a sample set).
pub fn row_bandwidths(interests: &Matrix, cfg: &KernelConfig) -> Vec<f64> {
    (0..interests.rows())
        .map(|r| match cfg.bandwidth {
            Bandwidth::Fixed(s) => s,
            Bandwidth::Median => median_bandwidth_scalar(interests.row(r)),
        })
        .collect()
}

/// Squared distances `(x_i − x_j)²` of scalar samples.
fn scalar_sq_dist(x: &[f64]) -> Matrix {
    let m = x.len();
    let mut out = Matrix::zeros(m, m);
    for (i, a) in x.iter().enumerate() {
        for (o, b) in out.row_mut(i).iter_mut().zip(x) {
            *o = (a - b) * (a - b);
        }
    }
    out
}

/// Double-centered RBF Gram matrix of scalar samples.
fn centered_scalar_kernel(x: &[f64], sigma: f64) -> Matrix {
    let inv = 1.0 / (sigma * sigma);
    scalar_sq_dist(x).map(|d| (-d * inv).exp()).double_center()
}

/// `Σ_{i<j} HSIC(M_i, M_j)` with the `d` coordinates as samples.
///
/// Fewer than two interests make the sum empty; the result is 0 and a warning
/// is logged.
pub fn interest_dependence(interests: &Matrix, cfg: &KernelConfig) -> f64 {
    interest_dependence_with(interests, &row_bandwidths(interests, cfg))
}

/// [`interest_dependence`] with explicit per-row bandwidths.
pub fn interest_dependence_with(interests: &Matrix, sigmas: &[f64]) -> f64 {
    let c = interests.rows();
    if c < 2 {
        log::warn!("interest dependence with {c} interest(s) is vacuous");
        return 0.0;
    }
    assert_eq!(sigmas.len(), c);
    let centered: Vec<Matrix> = (0..c)
        .map(|r| centered_scalar_kernel(interests.row(r), sigmas[r]))
        .collect();
    let mut total = 0.0;
    for i in 0..c {
        for j in (i + 1)..c {
            total += hsic_from_centered(&centered[i], &centered[j]);
        }
    }
    total
}

/// `w · M` on the tape; `M` is recorded as a constant.
pub fn reweight_interests(tape: &mut Tape<'_>, interests: &Matrix, weight: Var) -> Var {
    let m = tape.leaf(interests.clone());
    tape.scale_by(m, weight)
}

/// Centered RBF Gram matrix of the rows of a node.
fn centered_kernel_node(tape: &mut Tape<'_>, samples: Var, sigma: f64) -> Var {
    let d = tape.pairwise_sq_dist(samples);
    let d = tape.scale(d, -1.0 / (sigma * sigma));
    let k = tape.exp(d);
    tape.double_center(k)
}

/// Differentiable `Σ_{i<j} HSIC` over the rows of a `c×d` node with fixed
/// bandwidths. Returns a 1x1 node.
pub fn interest_dependence_node(tape: &mut Tape<'_>, interests: Var, sigmas: &[f64]) -> Var {
    let (c, d) = tape.value(interests).shape();
    assert_eq!(sigmas.len(), c);
    let centered: Vec<Var> = (0..c)
        .map(|r| {
            let row = tape.gather_rows(interests, &[r]);
            let col = tape.transpose(row);
            centered_kernel_node(tape, col, sigmas[r])
        })
        .collect();
    let norm = 1.0 / ((d as f64 - 1.0) * (d as f64 - 1.0));
    let mut total: Option<Var> = None;
    for i in 0..c {
        for j in (i + 1)..c {
            let dot = tape.frobenius_dot(centered[i], centered[j]);
            let term = tape.scale(dot, norm);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
    }
    total.unwrap_or_else(|| tape.leaf(Matrix::scalar(0.0)))
}

/// Value and `w`-derivative of the dependence of `w · M` under bandwidths
/// resolved on the unscaled `M`.
///
/// With `D` the squared distances of a row, `K(w) = exp(−w²D/σ²)` and
/// `dK/dw = −(2wD/σ²) ∘ K`. Centering is idempotent, so each pair
/// contributes `⟨dK_a, HK_bH⟩ + ⟨HK_aH, dK_b⟩` to the derivative.
pub fn weighted_dependence_grad(interests: &Matrix, weight: f64, sigmas: &[f64]) -> (f64, f64) {
    let (c, d) = interests.shape();
    if c < 2 {
        return (0.0, 0.0);
    }
    assert_eq!(sigmas.len(), c);
    let w2 = weight * weight;
    let mut centered = Vec::with_capacity(c);
    let mut slopes = Vec::with_capacity(c);
    for (r, &sigma) in sigmas.iter().enumerate() {
        let inv = 1.0 / (sigma * sigma);
        let dist = scalar_sq_dist(interests.row(r));
        let k = dist.map(|v| (-w2 * v * inv).exp());
        let slope = dist.zip_map(&k, |v, kv| -2.0 * weight * v * inv * kv).expect("same shape");
        centered.push(k.double_center());
        slopes.push(slope);
    }
    let norm = 1.0 / ((d as f64 - 1.0) * (d as f64 - 1.0));
    let (mut value, mut grad) = (0.0, 0.0);
    for a in 0..c {
        for b in (a + 1)..c {
            value += centered[a].frobenius_dot(&centered[b]) * norm;
            grad += (slopes[a].frobenius_dot(&centered[b]) + centered[a].frobenius_dot(&slopes[b])) * norm;
        }
    }
    (value, grad)
}

/// Dependence of `w · M` under fixed bandwidths.
pub fn weighted_dependence(interests: &Matrix, weight: f64, sigmas: &[f64]) -> f64 {
    if interests.rows() < 2 {
        return 0.0;
    }
    interest_dependence_with(&interests.scale(weight), sigmas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E_INV: f64 = 0.367_879_441_171_442_33;

    #[test]
    fn kernel_diagonal_and_unit_distance() {
        let cfg = KernelConfig::fixed(2.0);
        let k = rbf_kernel_matrix(&[0.0, 2.0, 5.0], &cfg).unwrap();
        for i in 0..3 {
            assert_eq!(k.get(i, i), 1.0);
        }
        assert!((k.get(0, 1) - E_INV).abs() < 1e-15);
        assert_eq!(k.get(0, 1), k.get(1, 0));
    }

    #[test]
    fn kernel_needs_two_samples() {
        assert!(rbf_kernel_matrix(&[1.0], &KernelConfig::default()).is_err());
        assert!(rbf_kernel_matrix(&[1.0, 2.0], &KernelConfig::fixed(0.0)).is_err());
    }

    #[test]
    fn degenerate_median_falls_back_to_unit_bandwidth() {
        let samples = Matrix::column_vector(&[3.0; 5]);
        assert_eq!(median_bandwidth(&samples), 1.0);
        let k = rbf_kernel_matrix(&[3.0; 5], &KernelConfig::default()).unwrap();
        assert!(k.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_point_hsic() {
        for sigma in [0.5, 1.0, 3.0] {
            let expected = (1.0 - E_INV).powi(2);
            let fixed = empirical_hsic(&[0.0, sigma], &[0.0, sigma], &KernelConfig::fixed(sigma)).unwrap();
            assert!((fixed - expected).abs() < 1e-12);
            let median = empirical_hsic(&[0.0, sigma], &[0.0, sigma], &KernelConfig::default()).unwrap();
            assert!((median - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_gives_zero() {
        let v = [0.3, -1.0, 2.0, 0.7];
        assert_eq!(empirical_hsic(&[1.5; 4], &v, &KernelConfig::default()).unwrap(), 0.0);
        assert_eq!(empirical_hsic(&[1.5; 4], &v, &KernelConfig::fixed(0.7)).unwrap(), 0.0);
    }

    #[test]
    fn hsic_errors() {
        assert!(empirical_hsic(&[1.0], &[1.0], &KernelConfig::default()).is_err());
        assert!(empirical_hsic(&[1.0, 2.0], &[1.0], &KernelConfig::default()).is_err());
    }

    #[test]
    fn matches_explicit_trace_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 9;
        let u: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = u.iter().map(|x| x * x + rng.random_range(-0.1..0.1)).collect();
        let cfg = KernelConfig::fixed(1.3);
        let ku = rbf_kernel_matrix(&u, &cfg).unwrap();
        let kv = rbf_kernel_matrix(&v, &cfg).unwrap();
        let mut p = Matrix::identity(m);
        for x in p.as_mut_slice() {
            *x -= 1.0 / m as f64;
        }
        let prod = ku.matmul(&p).unwrap().matmul(&kv).unwrap().matmul(&p).unwrap();
        let expected = prod.trace() / ((m - 1) * (m - 1)) as f64;
        assert!((empirical_hsic(&u, &v, &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn dependence_examples() {
        let cfg = KernelConfig::default();
        let constant = Matrix::from_rows(&[vec![1.0; 6], vec![-2.0; 6]]);
        assert_eq!(interest_dependence(&constant, &cfg), 0.0);

        let row = vec![0.1, -0.4, 0.9, 0.3, -1.2, 0.5];
        let dup = Matrix::from_rows(&[row.clone(), row.clone()]);
        let single = empirical_hsic(&row, &row, &cfg).unwrap();
        assert!(single > 0.0);
        assert_eq!(interest_dependence(&dup, &cfg), single);

        let r2 = vec![0.5, 0.2, -0.3, 0.8, 0.0, -0.6];
        let three = Matrix::from_rows(&[row.clone(), r2.clone(), dup.row(0).iter().map(|x| x * 2.0).collect()]);
        let r3 = three.row(2).to_vec();
        let sum = empirical_hsic(&row, &r2, &cfg).unwrap()
            + empirical_hsic(&row, &r3, &cfg).unwrap()
            + empirical_hsic(&r2, &r3, &cfg).unwrap();
        assert!((interest_dependence(&three, &cfg) - sum).abs() < 1e-15);

        assert_eq!(interest_dependence(&Matrix::from_rows(&[row]), &cfg), 0.0);
    }

    #[test]
    fn reweight_endpoints() {
        let m = Matrix::from_rows(&[vec![0.2, -0.1, 0.4], vec![0.3, 0.3, -0.5]]);
        let sigmas = row_bandwidths(&m, &KernelConfig::default());
        let mut tape = Tape::new();
        let one = tape.leaf(Matrix::scalar(1.0));
        let same = reweight_interests(&mut tape, &m, one);
        assert_eq!(tape.value(same), &m);
        assert_eq!(weighted_dependence(&m, 0.0, &sigmas), 0.0);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let data = (0..3 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = Matrix::from_vec(3, 16, data).unwrap();
            let sigmas = row_bandwidths(&m, &KernelConfig::default());
            let w = rng.random_range(0.1..1.0);
            let (value, grad) = weighted_dependence_grad(&m, w, &sigmas);
            assert!((value - weighted_dependence(&m, w, &sigmas)).abs() < 1e-12);
            let numeric = finite_difference(&Matrix::scalar(w), 1e-5, |x| {
                weighted_dependence(&m, x.item(), &sigmas)
            });
            let err = max_relative_error(&Matrix::scalar(grad), &numeric, 1e-8);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn closed_form_gradient_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let data = (0..4 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = Matrix::from_vec(4, 9, data).unwrap();
            let sigmas = row_bandwidths(&m, &KernelConfig::default());
            let w = rng.random_range(0.0..1.0);
            let mut tape = Tape::new();
            let wv = tape.leaf(Matrix::scalar(w));
            let scaled = reweight_interests(&mut tape, &m, wv);
            let obj = interest_dependence_node(&mut tape, scaled, &sigmas);
            let (value, grad) = weighted_dependence_grad(&m, w, &sigmas);
            assert!((tape.value(obj).item() - value).abs() < 1e-12);
            assert!((tape.grad(obj, wv).item() - grad).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_median_matches_matrix_median() {
        let x = [0.3, -1.2, 0.7, 2.0, 0.3];
        assert_eq!(median_bandwidth_scalar(&x), median_bandwidth(&Matrix::column_vector(&x)));
        assert_eq!(median_bandwidth_scalar(&[1.0, 1.0]), 1.0);
    }
}
