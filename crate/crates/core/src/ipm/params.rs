use crate::error::{Error, Result};
use crate::oracle::PotentialConstants;

/// Both sides of every inequality in the path-following parameter system.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCertificate {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `δ ≤ C_φ ε / 2`: `(δ, C_φ ε / 2)`
    pub delta_bound: (f64, f64),
    /// `β + γ < 1, β < 0.3, γ < 1, γ > 2β`
    pub box_ok: bool,
    /// `(lhs, β)` of the centering inequality
    pub centering: (f64, f64),
    /// `(γ(0.3 − β)/2, ω_*(β + γ))` of the decrease inequality
    pub decrease: (f64, f64),
}

impl ParamCertificate {
    pub fn holds(&self) -> bool {
        self.delta_bound.0 <= self.delta_bound.1
            && self.box_ok
            && self.centering.0 <= self.centering.1
            && self.decrease.0 > self.decrease.1
    }
}

fn omega_star(t: f64) -> f64 {
    -t - (1.0 - t).ln()
}

fn centering_lhs(beta: f64, gamma: f64, delta: f64) -> f64 {
    let s = beta + gamma;
    let r = (1.0 + delta).sqrt();
    let denom = 1.0 - s * r;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 + delta) * s * s / (denom * denom) + delta * s * r / denom
}

/// Evaluates the parameter system at `(β, γ, δ)` for the given `C_φ ε`.
pub fn check_parameters(beta: f64, gamma: f64, delta: f64, c_phi_eps: f64) -> ParamCertificate {
    let box_ok = beta > 0.0 && beta + gamma < 1.0 && beta < 0.3 && gamma < 1.0 && gamma > 2.0 * beta;
    let decrease_rhs = if beta + gamma < 1.0 { omega_star(beta + gamma) } else { f64::INFINITY };
    ParamCertificate {
        beta,
        gamma,
        delta,
        delta_bound: (delta, c_phi_eps / 2.0),
        box_ok,
        centering: (centering_lhs(beta, gamma, delta), beta),
        decrease: (gamma * (0.3 - beta) / 2.0, decrease_rhs),
    }
}

/// Largest `δ` for which the centering inequality still holds at `(β, γ)`.
pub fn max_delta(beta: f64, gamma: f64) -> f64 {
    if centering_lhs(beta, gamma, 0.0) > beta {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while centering_lhs(beta, gamma, hi) <= beta && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if centering_lhs(beta, gamma, mid) <= beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Starts at `(β, γ) = (0.01, 0.04)` with `δ = min(δ_target, C_φε/2)` and
/// halves both (keeping `γ = 4β`) until the system holds.
pub fn pathfol_select_params(constants: &PotentialConstants, eps: f64, delta_target: f64) -> Result<ParamCertificate> {
    let c_phi = constants.c_phi;
    if !c_phi.is_finite() || c_phi <= 0.0 {
        return Err(Error::InvalidParameter(format!("C_phi must be positive and finite, got {c_phi}")));
    }
    let delta = delta_target.min(c_phi * eps / 2.0).max(0.0);
    let mut beta = 0.01;
    while beta >= 1e-8 {
        let cert = check_parameters(beta, 4.0 * beta, delta, c_phi * eps);
        if cert.holds() {
            return Ok(cert);
        }
        beta /= 2.0;
    }
    Err(Error::NoFeasibleStep)
}
