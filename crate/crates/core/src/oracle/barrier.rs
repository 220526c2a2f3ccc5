use super::{BestResponse, DualInfo};
use crate::error::{Error, Result};
use crate::market::{PriceVector, UtilityKind, UtilitySpec};

const MAX_ITERS: usize = 200;

/// Maximizer of `log⟨c, x⟩ + σ Σ log x_j` subject to `⟨p, x⟩ ≤ w`.
///
/// Stationarity gives `x_j = σ / (λ p_j − c_j/u)` with `λ = (1+σn)/w` and
/// `u = ⟨c, x⟩`. The unknown is parameterized by the gap `g = λ p_* − c_*/u`
/// of the good with the largest `c_j/p_j`; every other gap is then an affine
/// function of `g` with nonnegative offset, so small gaps (small `σ`) are
/// resolved without cancellation. The budget residual is monotone in `g` and
/// is solved by safeguarded Newton inside an analytic bracket.
pub fn linear_barrier_best_response(p: &PriceVector, spec: &UtilitySpec, w: f64) -> Result<BestResponse> {
    let UtilityKind::LinearBarrier { sigma } = spec.kind else {
        return Err(Error::InvalidParameter("expected a barrier-regularized linear utility".into()));
    };
    let n = p.len();
    let c = spec.coefficients.to_dense(n);
    let lambda = (1.0 + sigma * n as f64) / w;

    let (star, best_ratio) = c
        .iter()
        .zip(p.iter())
        .map(|(cj, pj)| cj / pj)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, r)| if r > acc.1 { (j, r) } else { acc });
    if best_ratio <= 0.0 {
        return Err(Error::InvalidInstance("utility has no positive coefficient".into()));
    }
    let (c_star, p_star) = (c[star], p[star]);

    // g_j(g) = base_j + slope_j · g
    let base: Vec<f64> = (0..n)
        .map(|j| {
            if j == star {
                0.0
            } else {
                (lambda * p[j] * (1.0 - (c[j] / p[j]) / best_ratio)).max(0.0)
            }
        })
        .collect();
    let slope: Vec<f64> = c.iter().map(|cj| cj / c_star).collect();
    let gaps = |g: f64| -> Vec<f64> { base.iter().zip(&slope).map(|(b, s)| b + s * g).collect() };
    // budget residual and its derivative in g
    let residual = |g: f64| -> (f64, f64) {
        gaps(g).iter().zip(p.iter()).zip(&slope).fold((-w, 0.0), |(r, dr), ((gj, pj), sj)| {
            (r + pj * sigma / gj, dr - pj * sigma * sj / (gj * gj))
        })
    };

    let mut lo = sigma * p_star / w;
    let mut hi = lambda * p_star;
    let (g_lo, _) = residual(lo);
    let (g_hi, _) = residual(hi);
    if !(g_lo >= 0.0 && g_hi < 0.0) {
        return Err(Error::RootBracket { player: 0, iterations: 0, g_lo, g_hi });
    }

    let mut g = lo;
    let mut converged = g_lo == 0.0;
    let mut iterations = 0;
    while !converged && iterations < MAX_ITERS {
        iterations += 1;
        let (r, dr) = residual(g);
        if r.abs() <= 1e-15 * w {
            converged = true;
            break;
        }
        if r > 0.0 {
            lo = g;
        } else {
            hi = g;
        }
        let newton = g - r / dr;
        g = if newton > lo && newton < hi && dr < 0.0 {
            newton
        } else {
            (lo * hi).sqrt()
        };
        if (hi - lo) <= 1e-15 * hi {
            converged = true;
        }
    }
    if !converged {
        let (g_lo, _) = residual(lo);
        let (g_hi, _) = residual(hi);
        return Err(Error::RootBracket { player: 0, iterations, g_lo, g_hi });
    }

    let x: Vec<f64> = gaps(g).iter().map(|gj| sigma / gj).collect();
    let u: f64 = c.iter().zip(&x).map(|(cj, xj)| cj * xj).sum();
    let gamma: Vec<f64> = c.iter().zip(&x).map(|(cj, xj)| cj * xj / u).collect();
    let spend: f64 = p.iter().zip(&x).map(|(pj, xj)| pj * xj).sum();
    let stationarity = (0..n)
        .map(|j| (gamma[j] + sigma - lambda * p[j] * x[j]).abs())
        .fold(0.0_f64, f64::max);
    let kkt_residual = stationarity.max((spend - w).abs() / w);
    let log_utility = u.ln() + sigma * x.iter().map(|v| v.ln()).sum::<f64>();
    if !log_utility.is_finite() {
        return Err(Error::Numerical("non-finite barrier response".into()));
    }
    Ok(BestResponse {
        support: (0..n).collect(),
        x,
        gamma,
        utility: u,
        log_utility,
        spend,
        dual: DualInfo::Barrier { lambda, u, kkt_residual },
    })
}
