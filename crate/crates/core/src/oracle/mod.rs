//! Best responses and the calculus built on them.
//!
//! Each player reports a demand bundle `x_i(p)` and a bidding vector `γ_i`.
//! The potential `φ(p) = ⟨p, 1⟩ + Σ ω_i f_i(p)` has gradient `1 − Σ κ_i x_i(p)`
//! and a scaled Hessian assembled from per-player blocks that depend on `γ_i`
//! only (power family) or on a small dense solve (constrained players).

mod barrier;
mod blocks;
mod constants;
mod constrained;
mod potential;
mod power;

pub use barrier::linear_barrier_best_response;
pub use blocks::{constrained_dual_hessian, demand_jacobian, player_hessian_blocks, PlayerHessianBlock};
pub use constants::{potential_constants, PotentialConstants, DEFAULT_KAPPA_CAP};
pub use constrained::constrained_best_response;
pub use potential::{evaluate, potential_gradient, potential_value, MarketEval};
pub use power::{additive_best_response, ces_best_response};

use crate::error::{Error, Result};
use crate::market::{MarketInstance, PriceVector, UtilityKind};

/// Multipliers and diagnostics that some oracles report.
#[derive(Debug, Clone, PartialEq)]
pub enum DualInfo {
    None,
    /// Barrier-regularized linear player: budget multiplier `λ = (1+σn)/w`,
    /// linear utility value `u = ⟨c, x⟩`, scaled KKT residual.
    Barrier { lambda: f64, u: f64, kkt_residual: f64 },
    /// Constrained player: budget multiplier, multipliers of the retained
    /// constraint rows, and residuals of the final KKT system.
    Constrained {
        lambda: f64,
        rows: Vec<usize>,
        multipliers: Vec<f64>,
        stationarity: f64,
        feasibility: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    /// Goods that may carry positive demand; `x` and `gamma` are aligned with it.
    pub support: Vec<usize>,
    pub x: Vec<f64>,
    /// Bidding shares on the simplex (shifted form for barrier players).
    pub gamma: Vec<f64>,
    pub utility: f64,
    /// Objective value `f_i(p)` at the response (additive constants dropped).
    pub log_utility: f64,
    pub spend: f64,
    pub dual: DualInfo,
}

impl BestResponse {
    pub fn dense_x(&self, n: usize) -> Vec<f64> {
        scatter(&self.support, &self.x, n)
    }

    pub fn dense_gamma(&self, n: usize) -> Vec<f64> {
        scatter(&self.support, &self.gamma, n)
    }

    /// Optimality residual of the inner solve, for oracles that iterate.
    pub fn kkt_residual(&self) -> Option<f64> {
        match &self.dual {
            DualInfo::None => None,
            DualInfo::Barrier { kkt_residual, .. } => Some(*kkt_residual),
            DualInfo::Constrained { stationarity, feasibility, .. } => Some(stationarity.max(*feasibility)),
        }
    }

    /// `max_{j ∈ B} 1/γ_j` over goods with positive share.
    pub fn kappa(&self) -> f64 {
        self.gamma
            .iter()
            .filter(|&&g| g > 0.0)
            .fold(1.0_f64, |k, &g| k.max(1.0 / g))
    }
}

pub(crate) fn scatter(idx: &[usize], val: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&j, &v) in idx.iter().zip(val) {
        out[j] = v;
    }
    out
}

/// Weight `ω_i` of `f_i` in the potential: `w_i/d_i`, or `w_i` for barrier players.
pub fn potential_weight(inst: &MarketInstance, i: usize) -> f64 {
    let u = &inst.utilities[i];
    match u.kind {
        UtilityKind::LinearBarrier { .. } => inst.budgets[i],
        _ => inst.budgets[i] / u.degree(inst.n),
    }
}

/// Multiplier `κ_i` of `x_i` in the gradient: 1, or `1 + σn` for barrier players.
pub fn demand_weight(inst: &MarketInstance, i: usize) -> f64 {
    match inst.utilities[i].kind {
        UtilityKind::LinearBarrier { sigma } => 1.0 + sigma * inst.n as f64,
        _ => 1.0,
    }
}

/// Best response of player `i`, dispatched on utility kind and constraints.
pub fn best_response(inst: &MarketInstance, i: usize, p: &PriceVector) -> Result<BestResponse> {
    if p.len() != inst.n {
        return Err(Error::InvalidParameter(format!(
            "price vector has {} entries for {} goods",
            p.len(),
            inst.n
        )));
    }
    let spec = &inst.utilities[i];
    let w = inst.budgets[i];
    let result = match (inst.constraint(i), spec.kind) {
        (Some(a), UtilityKind::Ces { .. } | UtilityKind::AdditiveHomogeneous { .. }) if a.rows() > 0 => {
            constrained_best_response(p, spec, w, a)
        }
        (_, UtilityKind::Ces { .. }) => ces_best_response(p, spec, w),
        (_, UtilityKind::AdditiveHomogeneous { .. }) => additive_best_response(p, spec, w),
        (_, UtilityKind::LinearBarrier { .. }) => linear_barrier_best_response(p, spec, w),
    };
    result.map_err(|e| e.at_player(i))
}

impl Error {
    /// Relabels per-player errors raised by an oracle called without context.
    pub(crate) fn at_player(self, i: usize) -> Error {
        match self {
            Error::RootBracket { iterations, g_lo, g_hi, .. } => Error::RootBracket {
                player: i,
                iterations,
                g_lo,
                g_hi,
            },
            Error::InfeasibleStart { .. } => Error::InfeasibleStart { player: i },
            Error::Stagnation { residual, .. } => Error::Stagnation { player: i, residual },
            Error::IllConditioned { condition, .. } => Error::IllConditioned { player: i, condition },
            other => other,
        }
    }
}
