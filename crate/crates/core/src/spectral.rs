//! Perron eigenpairs of Metzler matrices, stationary laws of rate matrices,
//! the one-group moment exponent and the Hilbert projective metric.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelSpec;

pub const DEFAULT_TOL: f64 = 1e-12;
const MAX_POWER_ITERATIONS: usize = 100_000;

/// Principal eigenvalue and simplex-normalized positive eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Perron eigenpair of a Metzler irreducible matrix by power iteration on
/// `A + sI`, `s = 1 + max_i |a_ii|`. Stops when the l1 eigen-residual
/// `|A v - value v|_1` drops below `tol`.
pub fn perron(a: &Matrix, tol: f64) -> Result<PerronPair> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::Domain("empty matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    if !a.is_metzler(0.0) {
        return Err(Error::Domain(format!("matrix is not Metzler: {a:?}")));
    }
    if !a.is_irreducible(0.0) {
        return Err(Error::Domain(format!("matrix is reducible: {a:?}")));
    }
    if n == 1 {
        return Ok(PerronPair {
            value: a[(0, 0)],
            vector: vec![1.0],
        });
    }
    let shift = 1.0 + (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut b = a.clone();
    for i in 0..n {
        b[(i, i)] += shift;
    }
    let mut v = vec![1.0 / n as f64; n];
    let mut w = vec![0.0; n];
    let mut av = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut value = 0.0;
    for it in 0..MAX_POWER_ITERATIONS {
        b.mul_vec(&v, &mut w);
        let norm: f64 = w.iter().sum();
        value = norm - shift;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if it % 8 == 7 || n <= 4 {
            a.mul_vec(&v, &mut av);
            // Rayleigh-type quotient in l1 for a positive vector.
            value = av.iter().sum::<f64>();
            residual = av.iter().zip(&v).map(|(x, y)| (x - value * y).abs()).sum();
            if residual < tol {
                return Ok(PerronPair { value, vector: v });
            }
        }
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge: residual {residual:e} after {MAX_POWER_ITERATIONS} iterations (value {value})"
    )))
}

/// Stationary law `pi` of an irreducible rate matrix: `pi Q = 0`, `sum pi = 1`.
pub fn stationary_env(q: &Matrix, tol: f64) -> Result<Vec<f64>> {
    let n = q.dim();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    for i in 0..n {
        let s: f64 = q.row(i).iter().sum();
        if s.abs() > 1e-9 * (1.0 + q.max_abs()) {
            return Err(Error::Domain(format!("row {i} of the rate matrix sums to {s}")));
        }
    }
    if !q.is_metzler(0.0) {
        return Err(Error::Domain("rate matrix has negative off-diagonal entries".into()));
    }
    if !q.is_irreducible(0.0) {
        return Err(Error::Domain(format!("rate matrix is reducible: {q:?}")));
    }
    let scale = q.max_abs().max(1.0);
    let pair = perron(&q.transpose(), tol / scale)?;
    let pi = pair.vector;
    let residual: f64 = (0..n)
        .map(|j| (0..n).map(|i| pi[i] * q[(i, j)]).sum::<f64>().abs())
        .sum();
    if residual >= tol.max(1e-15 * scale) * 10.0 {
        return Err(Error::Numerical(format!(
            "stationary law residual {residual:e} above tolerance"
        )));
    }
    Ok(pi)
}

/// Linearization values `A^env` of a one-group model.
fn scalar_growth_rates(spec: &ModelSpec) -> Result<Vec<f64>> {
    if spec.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "exact moment exponent needs one group, model has {}",
            spec.dim()
        )));
    }
    (0..spec.num_envs())
        .map(|e| spec.linearization_at_zero(e).map(|a| a[(0, 0)]))
        .collect()
}

/// Exact moment Lyapunov exponent of a one-group model with constant
/// switching: the principal eigenvalue of `Q + p Diag(A^1, .., A^|E|)`.
pub fn g_exact_1d(spec: &ModelSpec, p: f64) -> Result<f64> {
    let a = scalar_growth_rates(spec)?;
    let q = spec
        .constant_switch()
        .ok_or_else(|| Error::Unsupported("exact moment exponent needs constant switching".into()))?;
    if p == 0.0 {
        return Ok(0.0);
    }
    let n = q.dim();
    let mut qp = q.clone();
    for e in 0..n {
        qp[(e, e)] += p * a[e];
    }
    let scale = qp.max_abs().max(1.0);
    perron(&qp, DEFAULT_TOL * scale).map(|pair| pair.value)
}

/// Exact top Lyapunov exponent of a one-group model with constant
/// switching: `sum_e pi_e A^e`.
pub fn lambda_exact_1d(spec: &ModelSpec) -> Result<f64> {
    let a = scalar_growth_rates(spec)?;
    let q = spec
        .constant_switch()
        .ok_or_else(|| Error::Unsupported("exact Lyapunov exponent needs constant switching".into()))?;
    let pi = stationary_env(q, DEFAULT_TOL)?;
    Ok(pi.iter().zip(&a).map(|(p, a)| p * a).sum())
}

/// Principal eigenvalue `Lambda^env` of each linearization.
pub fn environment_exponents(spec: &ModelSpec) -> Result<Vec<PerronPair>> {
    (0..spec.num_envs())
        .map(|e| {
            let a = spec.linearization_at_zero(e)?;
            perron(&a, DEFAULT_TOL * a.max_abs().max(1.0))
        })
        .collect()
}

/// Hilbert projective distance `log(max_i(x_i/y_i) / min_i(x_i/y_i))`.
pub fn hilbert_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Domain("vectors must have equal nonzero length".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("Hilbert distance needs strictly positive vectors".into()));
    }
    let (lo, hi) = x
        .iter()
        .zip(y)
        .map(|(a, b)| a / b)
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    Ok((hi / lo).ln())
}
