//! Interior-point tâtonnement drivers.
//!
//! Both drivers move prices multiplicatively, `p ← p ⊙ (1 + d)`, where `d`
//! solves a Newton system in the scaled Hessian `H(p)`.

mod certificate;
mod logbar;
mod params;
mod pathfol;
mod trace;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

pub use certificate::{equilibrium_certificate, EquilibriumCertificate, PlayerResidual};
pub use logbar::{logbar_init, logbar_run, shrink_factor, theory_strict_q, LogBarConfig, LogBarStart};
pub use params::{check_parameters, max_delta, pathfol_select_params, ParamCertificate};
pub use pathfol::{newton_decrement, pathfol_run, PathFolConfig};
pub use trace::{read_trace_csv, SolveStatus, SolveTrace, TraceRow};

use crate::error::{Error, Result};
use crate::hessian::{dr1_solve, pcg_solve, HessianMode, ScaledHessianOp};
use crate::linalg::{norm2, rel_dist};
use crate::market::{MarketInstance, PriceVector};
use crate::oracle::MarketEval;

/// How Newton systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Dense Cholesky on the exact Hessian (`n ≤ 512`).
    ExactDirect,
    /// Sherman–Morrison on the DR1 surrogate.
    Dr1,
    /// Preconditioned conjugate gradient on the exact operator.
    ExactPcg,
}

impl SolverKind {
    pub(crate) fn hessian_mode(self) -> HessianMode {
        match self {
            SolverKind::Dr1 => HessianMode::Dr1,
            _ => HessianMode::Exact,
        }
    }
}

/// Run-level limits shared by every driver.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    pub time_limit: Option<Duration>,
    /// Reference prices: when set, the trace records the ℓ₂ distance to them.
    pub reference: Option<Vec<f64>>,
    /// Stop (as converged) once the distance to `reference` falls below this.
    pub target_dist: Option<f64>,
}

impl RunControl {
    pub(crate) fn dist(&self, p: &[f64]) -> Option<f64> {
        self.reference.as_ref().map(|r| norm2(&crate::linalg::sub(p, r)))
    }

    /// Status to stop with, if any limit is hit.
    pub(crate) fn check(&self, started: Instant, dist: Option<f64>) -> Option<SolveStatus> {
        if let (Some(d), Some(t)) = (dist, self.target_dist) {
            if d <= t {
                return Some(SolveStatus::Converged);
            }
        }
        match self.time_limit {
            Some(limit) if started.elapsed() > limit => Some(SolveStatus::TimedOut),
            _ => None,
        }
    }
}

/// Final prices and the per-iteration record of a run.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub p: PriceVector,
    pub trace: SolveTrace,
}

impl SolveOutcome {
    pub fn status(&self) -> SolveStatus {
        self.trace.status
    }

    pub fn iterations(&self) -> usize {
        self.trace.rows.last().map_or(0, |r| r.k)
    }

    pub fn distance_to(&self, other: &[f64]) -> f64 {
        rel_dist(&self.p, other)
    }
}

/// Solution of a Newton system and the PCG work it took.
pub(crate) struct Step {
    pub d: Vec<f64>,
    pub pcg_iters: Option<usize>,
    pub note: Option<String>,
}

/// Solves `(H̃ + μI) d = rhs` with the configured scheme. DR1 failures fall
/// back to PCG on the exact operator.
pub(crate) fn solve_newton(
    op: &ScaledHessianOp,
    kind: SolverKind,
    mu: f64,
    rhs: &[f64],
    eps_k: f64,
    pcg_cap: Option<usize>,
) -> Result<Step> {
    match kind {
        SolverKind::ExactDirect => {
            let mut h = op.to_dense()?;
            let floor = if mu > 0.0 { mu } else { 1e-12 * (h.trace() / h.nrows() as f64).max(f64::MIN_POSITIVE) };
            for j in 0..h.nrows() {
                h[(j, j)] += floor;
            }
            let d = dense_spd_solve(h, rhs)?;
            Ok(Step { d, pcg_iters: None, note: None })
        }
        SolverKind::Dr1 => match dr1_solve(op, mu.max(0.0), rhs) {
            Ok(d) if d.iter().all(|v| v.is_finite()) => Ok(Step { d, pcg_iters: None, note: None }),
            Ok(_) | Err(Error::SingularUpdate(_)) => {
                let mut step = pcg_step(op, mu, rhs, eps_k, pcg_cap)?;
                step.note = Some("DR1 update singular; solved by PCG on the exact operator".into());
                Ok(step)
            }
            Err(e) => Err(e),
        },
        SolverKind::ExactPcg => pcg_step(op, mu, rhs, eps_k, pcg_cap),
    }
}

fn pcg_step(op: &ScaledHessianOp, mu: f64, rhs: &[f64], eps_k: f64, cap: Option<usize>) -> Result<Step> {
    let reg = vec![mu.max(1e-12 * op.preconditioner().k_c.iter().fold(0.0_f64, |a, b| a.max(*b))); op.dim()];
    let pre = op.preconditioner();
    let out = pcg_solve(op, &reg, rhs, eps_k, Some(&pre), cap)?;
    Ok(Step { d: out.d, pcg_iters: Some(out.iterations), note: None })
}

pub(crate) fn dense_spd_solve(h: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    match h.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&b).iter().copied().collect()),
        None => h
            .lu()
            .solve(&b)
            .map(|x| x.iter().copied().collect())
            .ok_or_else(|| Error::Numerical("dense Newton system is singular".into())),
    }
}

/// Keeps `1 + d ≥ η` componentwise; returns whether `d` was scaled.
pub(crate) fn safeguard(d: &mut [f64], eta: f64) -> bool {
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    if 1.0 + min < eta {
        let scale = (1.0 - eta) / (-min);
        d.iter_mut().for_each(|v| *v *= scale);
        true
    } else {
        false
    }
}

/// `p ⊙ (1 + d)`
pub(crate) fn scaled_update(p: &PriceVector, d: &[f64]) -> Result<PriceVector> {
    PriceVector::new(p.iter().zip(d).map(|(pj, dj)| pj * (1.0 + dj)).collect())
}

/// `P ∇φ(p)`
pub(crate) fn scaled_gradient(p: &[f64], eval: &MarketEval) -> Vec<f64> {
    p.iter().zip(&eval.gradient).map(|(a, b)| a * b).collect()
}

/// `‖P∇φ(p) − μ1‖ / μ`, the central-path neighborhood residual.
pub fn neighborhood_residual(p: &[f64], gradient: &[f64], mu: f64) -> f64 {
    p.iter()
        .zip(gradient)
        .map(|(a, b)| (a * b - mu).powi(2))
        .sum::<f64>()
        .sqrt()
        / mu
}

pub(crate) fn check_instance(inst: &MarketInstance) -> Result<()> {
    inst.check()
}
