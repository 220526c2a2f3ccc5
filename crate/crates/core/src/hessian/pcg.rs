use super::{DiagonalPreconditioner, ScaledHessianOp};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2};

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome {
    pub d: Vec<f64>,
    pub iterations: usize,
    /// Final `‖A d − rhs‖`.
    pub residual: f64,
    pub converged: bool,
}

/// Conjugate gradient on `A d = rhs` with optional Jacobi preconditioner `diag(m)`.
///
/// Stops once `‖A d − rhs‖ ≤ eps_k · max(‖d‖, 1e−30)` or after `max_iters`.
pub fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    eps_k: f64,
    precond: Option<&[f64]>,
    max_iters: usize,
) -> Result<PcgOutcome> {
    let n = rhs.len();
    let mut d = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut rnorm = norm2(&r);
    if rnorm == 0.0 {
        return Ok(PcgOutcome { d, iterations: 0, residual: 0.0, converged: true });
    }
    let precondition = |r: &[f64]| -> Vec<f64> {
        match precond {
            Some(m) => r.iter().zip(m).map(|(a, b)| a / b).collect(),
            None => r.to_vec(),
        }
    };
    let mut z = precondition(&r);
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iters {
        let q = apply(&dir);
        let curvature = dot(&dir, &q);
        let alpha = rz / curvature;
        if !alpha.is_finite() {
            return Err(Error::NonFiniteIterate(it));
        }
        axpy(alpha, &dir, &mut d);
        axpy(-alpha, &q, &mut r);
        rnorm = norm2(&r);
        if !rnorm.is_finite() {
            return Err(Error::NonFiniteIterate(it));
        }
        if rnorm <= eps_k * norm2(&d).max(1e-30) {
            return Ok(PcgOutcome { d, iterations: it, residual: rnorm, converged: true });
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (p, zi) in dir.iter_mut().zip(&z) {
            *p = zi + beta * *p;
        }
    }
    Ok(PcgOutcome { d, iterations: max_iters, residual: rnorm, converged: false })
}

/// Solves `(H + diag(g)) d = rhs` on the exact operator.
///
/// The preconditioner, when given, is applied as `k_c + g`, the row sums of
/// the regularized matrix.
pub fn pcg_solve(
    op: &ScaledHessianOp,
    g_diag: &[f64],
    rhs: &[f64],
    eps_k: f64,
    precond: Option<&DiagonalPreconditioner>,
    max_iters: Option<usize>,
) -> Result<PcgOutcome> {
    let m: Option<Vec<f64>> = precond.map(|k| k.k_c.iter().zip(g_diag).map(|(a, b)| a + b).collect());
    let apply = |v: &[f64]| {
        let mut out = op.exact_matvec(v);
        for ((o, g), x) in out.iter_mut().zip(g_diag).zip(v) {
            *o += g * x;
        }
        out
    };
    pcg(apply, rhs, eps_k, m.as_deref(), max_iters.unwrap_or(op.dim()))
}
