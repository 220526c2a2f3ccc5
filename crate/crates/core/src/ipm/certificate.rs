use serde::Serialize;

use crate::error::Result;
use crate::linalg::norm_inf;
use crate::market::{MarketInstance, PriceVector, UtilityKind};
use crate::oracle::evaluate;

#[derive(Debug, Clone, Serialize)]
pub struct PlayerResidual {
    pub player: usize,
    /// `|⟨p, x_i⟩ − w_i| / w_i`
    pub budget: f64,
    /// Scaled KKT residual where the oracle reports one.
    pub kkt: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumCertificate {
    /// `‖∇φ(p)‖_∞`
    pub grad_inf: f64,
    /// `‖Σ x_i − 1‖_∞`, the raw clearing error.
    pub clearing_inf: f64,
    pub max_budget_residual: f64,
    pub max_kkt_residual: f64,
    pub players: Vec<PlayerResidual>,
    /// `(ε + σn)/(1 + σn)` for barrier-regularized linear markets, with `ε = grad_inf`.
    pub linear_clearing_bound: Option<f64>,
}

/// Clearing, budget and optimality residuals of `p`.
pub fn equilibrium_certificate(inst: &MarketInstance, p: &PriceVector) -> Result<EquilibriumCertificate> {
    let eval = evaluate(inst, p)?;
    let mut supply = vec![0.0; inst.n];
    for r in &eval.responses {
        for (&j, &x) in r.support.iter().zip(&r.x) {
            supply[j] += x;
        }
    }
    let clearing_inf = norm_inf(&supply.iter().map(|s| s - 1.0).collect::<Vec<_>>());
    let players: Vec<PlayerResidual> = eval
        .responses
        .iter()
        .enumerate()
        .map(|(i, r)| PlayerResidual {
            player: i,
            budget: (r.spend - inst.budgets[i]).abs() / inst.budgets[i],
            kkt: r.kkt_residual(),
        })
        .collect();
    let grad_inf = norm_inf(&eval.gradient);
    let sigma_n = inst.utilities.iter().find_map(|u| match u.kind {
        UtilityKind::LinearBarrier { sigma } => Some(sigma * inst.n as f64),
        _ => None,
    });
    Ok(EquilibriumCertificate {
        grad_inf,
        clearing_inf,
        max_budget_residual: players.iter().map(|r| r.budget).fold(0.0, f64::max),
        max_kkt_residual: players.iter().filter_map(|r| r.kkt).fold(0.0, f64::max),
        players,
        linear_clearing_bound: sigma_n.map(|sn| (grad_inf + sn) / (1.0 + sn)),
    })
}
