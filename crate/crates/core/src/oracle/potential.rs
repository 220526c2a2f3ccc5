use super::{best_response, demand_weight, potential_weight, BestResponse};
use crate::error::Result;
use crate::market::{MarketInstance, PriceVector};

/// All players' responses at one price vector, with the aggregates the
/// drivers need.
#[derive(Debug, Clone)]
pub struct MarketEval {
    pub responses: Vec<BestResponse>,
    /// `Σ κ_i x_i(p)`
    pub demand: Vec<f64>,
    /// `∇φ(p) = 1 − Σ κ_i x_i(p)`
    pub gradient: Vec<f64>,
    /// `φ(p) = ⟨p, 1⟩ + Σ ω_i f_i(p)`
    pub value: f64,
}

/// Evaluates every player at `p`. Aggregation runs in player order, so the
/// result is reproducible bit for bit.
pub fn evaluate(inst: &MarketInstance, p: &PriceVector) -> Result<MarketEval> {
    let responses = (0..inst.m)
        .map(|i| best_response(inst, i, p))
        .collect::<Result<Vec<_>>>()?;
    let mut demand = vec![0.0; inst.n];
    let mut value: f64 = p.iter().sum();
    for (i, r) in responses.iter().enumerate() {
        let kappa = demand_weight(inst, i);
        for (&j, &xj) in r.support.iter().zip(&r.x) {
            demand[j] += kappa * xj;
        }
        value += potential_weight(inst, i) * r.log_utility;
    }
    let gradient = demand.iter().map(|z| 1.0 - z).collect();
    Ok(MarketEval { responses, demand, gradient, value })
}

impl MarketEval {
    /// Largest KKT residual over players whose oracle reports one.
    pub fn max_oracle_kkt(&self) -> Option<f64> {
        self.responses.iter().filter_map(BestResponse::kkt_residual).reduce(f64::max)
    }
}

pub fn potential_value(inst: &MarketInstance, p: &PriceVector) -> Result<f64> {
    Ok(evaluate(inst, p)?.value)
}

pub fn potential_gradient(inst: &MarketInstance, p: &PriceVector) -> Result<Vec<f64>> {
    Ok(evaluate(inst, p)?.gradient)
}
