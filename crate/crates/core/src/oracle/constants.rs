use super::{potential_weight, BestResponse};
use crate::market::{MarketInstance, UtilityKind};

pub const DEFAULT_KAPPA_CAP: f64 = 1e4;

/// Scaled-Lipschitz and self-concordance constants of the potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialConstants {
    pub t_phi: f64,
    pub c_phi: f64,
    /// Per-player `κ̂_i = max_{j ∈ B_i} 1/γ_ij`, clipped to the cap.
    pub kappa_estimates: Vec<f64>,
}

/// Exponent and degree used by the constants. Barrier-regularized linear
/// players are treated as `r = 0` with degree `1 + σn`.
fn shape(inst: &MarketInstance, i: usize) -> (f64, f64) {
    let u = &inst.utilities[i];
    let r = match u.kind {
        UtilityKind::LinearBarrier { .. } => 0.0,
        kind => kind.power().unwrap_or(0.0),
    };
    (r, u.degree(inst.n))
}

/// `T_f = max{6d/(1−r)², 2d}`
pub fn slc_constant(r: f64, d: f64) -> f64 {
    (6.0 * d / ((1.0 - r) * (1.0 - r))).max(2.0 * d)
}

/// `T_φ = Σ ω_i T_{f_i}` and `C_φ = max_i w_i^{−1/2} κ̂_i³ d_i^{−1/2} max{2, 6r_i² − 6r_i + 2}`.
///
/// `samples` holds the responses of all players at one or more price points.
pub fn potential_constants(inst: &MarketInstance, samples: &[Vec<BestResponse>], kappa_cap: f64) -> PotentialConstants {
    let kappa_estimates: Vec<f64> = (0..inst.m)
        .map(|i| {
            samples
                .iter()
                .map(|s| s[i].kappa())
                .fold(1.0_f64, f64::max)
                .min(kappa_cap)
        })
        .collect();
    let t_phi = (0..inst.m)
        .map(|i| {
            let (r, d) = shape(inst, i);
            potential_weight(inst, i) * slc_constant(r, d)
        })
        .sum();
    let c_phi = (0..inst.m)
        .map(|i| {
            let (r, d) = shape(inst, i);
            let k = kappa_estimates[i];
            k.powi(3) * (6.0 * r * r - 6.0 * r + 2.0).max(2.0) / (inst.budgets[i].sqrt() * d.sqrt())
        })
        .fold(0.0_f64, f64::max);
    PotentialConstants { t_phi, c_phi, kappa_estimates }
}
