use nalgebra::{DMatrix, DVector};

use super::power::{additive_best_response, ces_best_response};
use super::{BestResponse, DualInfo};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::market::{independent_rows, ConstraintMatrix, PriceVector, UtilityKind, UtilitySpec};

const NEWTON_ITERS: usize = 200;
const PROJECTION_ITERS: usize = 20_000;

/// Power-family utility restricted to its support: `log u = outer · log Σ c_j x_j^r`.
pub(crate) struct PowerLog {
    pub c: Vec<f64>,
    pub r: f64,
    pub outer: f64,
}

impl PowerLog {
    pub fn new(spec: &UtilitySpec, c: Vec<f64>) -> Result<Self> {
        let (r, outer) = match spec.kind {
            UtilityKind::Ces { rho } => (rho, 1.0 / rho),
            UtilityKind::AdditiveHomogeneous { k, r } => (r, k),
            UtilityKind::LinearBarrier { .. } => {
                return Err(Error::InvalidParameter(
                    "constrained allocation supports power-family utilities only".into(),
                ))
            }
        };
        Ok(Self { c, r, outer })
    }

    pub fn degree(&self) -> f64 {
        self.outer * self.r
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.outer * log_sum_exp(self.c.iter().zip(x).map(|(c, xj)| c.ln() + self.r * xj.ln()))
    }

    /// Utility shares `θ_j = c_j x_j^r / Σ c_k x_k^r`.
    pub fn shares(&self, x: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = self.c.iter().zip(x).map(|(c, xj)| c.ln() + self.r * xj.ln()).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = t.iter().sum();
        t.iter_mut().for_each(|v| *v /= s);
        t
    }

    /// `X ∇²(−log u) X = d[(1−r)Θ + rθθᵀ]`, the Hessian in log-scaled coordinates.
    pub fn scaled_hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.degree();
        let s = theta.len();
        DMatrix::from_fn(s, s, |a, b| {
            let diag = if a == b { (1.0 - self.r) * theta[a] } else { 0.0 };
            d * (diag + self.r * theta[a] * theta[b])
        })
    }
}

/// Rows of `A` restricted to the columns in `support`, reduced to full row rank.
pub(crate) fn reduced_rows(a: &ConstraintMatrix, support: &[usize]) -> (Vec<usize>, DMatrix<f64>) {
    let restricted = DMatrix::from_fn(a.rows(), support.len(), |i, k| a.0[(i, support[k])]);
    let rows = independent_rows(&restricted);
    let reduced = DMatrix::from_fn(rows.len(), support.len(), |i, k| restricted[(rows[i], k)]);
    (rows, reduced)
}

/// Maximizer of `log u(x)` subject to `⟨p, x⟩ ≤ w` and `A x = 0`.
///
/// Variables outside the support of `c` are fixed at zero. Damped Newton runs
/// in log-scaled coordinates `dx = X dy` on the equality-constrained KKT system
/// with a 0.99 fraction-to-boundary rule, from a strictly positive point of
/// `{A x = 0}` found by alternating projections.
pub fn constrained_best_response(
    p: &PriceVector,
    spec: &UtilitySpec,
    w: f64,
    a: &ConstraintMatrix,
) -> Result<BestResponse> {
    let unconstrained = match spec.kind {
        UtilityKind::AdditiveHomogeneous { .. } => additive_best_response(p, spec, w)?,
        _ => ces_best_response(p, spec, w)?,
    };
    let coeffs = spec.coefficients.positive_part();
    let support = coeffs.indices().to_vec();
    let (rows, a_r) = reduced_rows(a, &support);
    if rows.is_empty() {
        return Ok(unconstrained);
    }
    let util = PowerLog::new(spec, coeffs.values().to_vec())?;
    let d = util.degree();
    let ps: Vec<f64> = support.iter().map(|&j| p[j]).collect();
    let s = support.len();
    let k = rows.len();

    let project = nullspace_projector(&a_r)?;
    let mut x = strictly_feasible_start(&project, &unconstrained.x)?;
    let spend: f64 = ps.iter().zip(&x).map(|(p, x)| p * x).sum();
    x.iter_mut().for_each(|v| *v *= w / spend);

    // B = [A; pᵀ]; in scaled coordinates B̃ = B X.
    let mut converged = false;
    for _ in 0..NEWTON_ITERS {
        let theta = util.shares(&x);
        let g_s = DVector::from_iterator(s, theta.iter().map(|t| d * t));
        let w_s = util.scaled_hessian(&theta);
        let mut kkt = DMatrix::<f64>::zeros(s + k + 1, s + k + 1);
        kkt.view_mut((0, 0), (s, s)).copy_from(&w_s);
        for col in 0..s {
            for i in 0..k {
                let v = a_r[(i, col)] * x[col];
                kkt[(s + i, col)] = v;
                kkt[(col, s + i)] = v;
            }
            let v = ps[col] * x[col];
            kkt[(s + k, col)] = v;
            kkt[(col, s + k)] = v;
        }
        let mut rhs = DVector::<f64>::zeros(s + k + 1);
        rhs.rows_mut(0, s).copy_from(&g_s);
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            return Err(Error::Stagnation { player: 0, residual: f64::NAN });
        };
        let dy = sol.rows(0, s);
        let dec2 = g_s.dot(&dy);
        if dec2 <= 1e-22 * d.abs().max(1.0) {
            converged = true;
            break;
        }
        let alpha_max = dy
            .iter()
            .filter(|&&v| v < 0.0)
            .fold(1.0_f64, |m, &v| m.min(-0.99 / v));
        let f0 = util.value(&x);
        let mut alpha = alpha_max;
        let trial = |alpha: f64| -> Vec<f64> { x.iter().zip(dy.iter()).map(|(xj, dj)| xj * (1.0 + alpha * dj)).collect() };
        let mut next = trial(alpha);
        while util.value(&next) < f0 + 1e-4 * alpha * dec2 && alpha > 1e-14 {
            alpha *= 0.5;
            next = trial(alpha);
        }
        if alpha <= 1e-14 {
            // no ascent available at machine precision
            converged = dec2 <= 1e-16 * d.abs().max(1.0);
            break;
        }
        x = next;
    }

    // Remove drift from the feasible set, then restore the budget exactly.
    let xv = project(&DVector::from_column_slice(&x));
    if xv.iter().any(|&v| v <= 0.0) {
        return Err(Error::Stagnation { player: 0, residual: xv.min() });
    }
    let spend: f64 = ps.iter().zip(xv.iter()).map(|(p, x)| p * x).sum();
    let x: Vec<f64> = xv.iter().map(|v| v * w / spend).collect();

    let theta = util.shares(&x);
    // Multipliers by least squares on X(g − Bᵀν) = 0 in scaled form.
    let g_s = DVector::from_iterator(s, theta.iter().map(|t| d * t));
    let bt = DMatrix::from_fn(s, k + 1, |col, i| if i < k { a_r[(i, col)] * x[col] } else { ps[col] * x[col] });
    let nu = (bt.transpose() * &bt)
        .cholesky()
        .map(|ch| ch.solve(&(bt.transpose() * &g_s)))
        .ok_or(Error::IllConditioned { player: 0, condition: f64::INFINITY })?;
    let stationarity = (&g_s - &bt * &nu).amax();
    let feasibility = (&a_r * DVector::from_column_slice(&x)).amax() / x.iter().fold(0.0_f64, |m, v| m.max(*v));
    let lambda = nu[k];
    let lambda_err = (lambda - d / w).abs() / (d / w);
    if !converged || stationarity > 1e-8 || lambda_err > 1e-6 {
        return Err(Error::Stagnation { player: 0, residual: stationarity.max(lambda_err) });
    }

    let spend: f64 = ps.iter().zip(&x).map(|(p, x)| p * x).sum();
    let gamma = ps.iter().zip(&x).map(|(p, x)| p * x / w).collect();
    let log_utility = util.value(&x);
    Ok(BestResponse {
        support,
        x,
        gamma,
        utility: log_utility.exp(),
        log_utility,
        spend,
        dual: DualInfo::Constrained {
            lambda,
            rows,
            multipliers: nu.rows(0, k).iter().copied().collect(),
            stationarity,
            feasibility,
        },
    })
}

/// Orthogonal projector onto `{z : A z = 0}` for full-row-rank `A`.
fn nullspace_projector(a: &DMatrix<f64>) -> Result<impl Fn(&DVector<f64>) -> DVector<f64> + '_> {
    let gram = (a * a.transpose())
        .cholesky()
        .ok_or(Error::IllConditioned { player: 0, condition: f64::INFINITY })?;
    Ok(move |z: &DVector<f64>| z - a.transpose() * gram.solve(&(a * z)))
}

/// Alternating projections between `{A z = 0}` and `{z ≥ 1}`.
fn strictly_feasible_start(project: &impl Fn(&DVector<f64>) -> DVector<f64>, guess: &[f64]) -> Result<Vec<f64>> {
    let floor = guess.iter().copied().fold(f64::INFINITY, f64::min);
    let mut z = DVector::from_iterator(guess.len(), guess.iter().map(|v| v / floor));
    for _ in 0..PROJECTION_ITERS {
        let y = project(&z);
        if y.min() >= 0.5 {
            return Ok(y.iter().copied().collect());
        }
        z = y.map(|v| v.max(1.0));
    }
    Err(Error::InfeasibleStart { player: 0 })
}
