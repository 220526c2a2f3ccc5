use super::{BestResponse, DualInfo};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::market::{PriceVector, UtilityKind, UtilitySpec};

/// CES demand `x_j = w γ_j / p_j` with `γ_j ∝ c_j^{1/(1−ρ)} p_j^{−ρ/(1−ρ)}`.
pub fn ces_best_response(p: &PriceVector, spec: &UtilitySpec, w: f64) -> Result<BestResponse> {
    let UtilityKind::Ces { rho } = spec.kind else {
        return Err(Error::InvalidParameter("expected a CES utility".into()));
    };
    power_response(p, spec, w, rho, 1.0 / rho)
}

/// `u = (Σ c_j x_j^r)^k` has the CES(ρ = r) maximizer; the outer power only
/// rescales the log-utility.
pub fn additive_best_response(p: &PriceVector, spec: &UtilitySpec, w: f64) -> Result<BestResponse> {
    let UtilityKind::AdditiveHomogeneous { k, r } = spec.kind else {
        return Err(Error::InvalidParameter("expected an additively homogeneous utility".into()));
    };
    power_response(p, spec, w, r, k)
}

/// Bidding shares of the power family, computed from logs with max-subtraction.
pub(crate) fn power_shares(p: &[f64], idx: &[usize], c: &[f64], r: f64) -> Vec<f64> {
    let a = 1.0 / (1.0 - r);
    let b = -r / (1.0 - r);
    let logs: Vec<f64> = idx
        .iter()
        .zip(c)
        .map(|(&j, &cj)| a * cj.ln() + b * p[j].ln())
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut gamma: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = gamma.iter().sum();
    gamma.iter_mut().for_each(|g| *g /= total);
    gamma
}

fn power_response(p: &PriceVector, spec: &UtilitySpec, w: f64, r: f64, outer: f64) -> Result<BestResponse> {
    let coeffs = spec.coefficients.positive_part();
    let support = coeffs.indices().to_vec();
    if support.is_empty() {
        return Err(Error::InvalidInstance("utility has no positive coefficient".into()));
    }
    let gamma = power_shares(p, &support, coeffs.values(), r);
    let x: Vec<f64> = support.iter().zip(&gamma).map(|(&j, g)| w * g / p[j]).collect();
    let spend = support.iter().zip(&x).map(|(&j, xj)| p[j] * xj).sum();
    let log_utility = outer * log_sum_exp(coeffs.values().iter().zip(&x).map(|(c, xj)| c.ln() + r * xj.ln()));
    if !(log_utility.is_finite() && gamma.iter().all(|g| g.is_finite())) {
        return Err(Error::Numerical(format!(
            "non-finite power-family response (r = {r}); prices out of range"
        )));
    }
    Ok(BestResponse {
        support,
        x,
        gamma,
        utility: log_utility.exp(),
        log_utility,
        spend,
        dual: DualInfo::None,
    })
}
