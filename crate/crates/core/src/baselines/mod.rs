//! First-order price dynamics used as references: multiplicative
//! tâtonnement and proportional response.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::ipm::{RunControl, SolveOutcome, SolveStatus, SolveTrace, TraceRow};
use crate::linalg::{norm2, norm_inf};
use crate::market::{MarketInstance, PriceVector};
use crate::oracle::evaluate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Tat,
    PropRes,
}

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Tâtonnement step `λ`.
    pub step: f64,
    pub max_iters: usize,
    pub eps: f64,
    pub control: RunControl,
}

impl BaselineConfig {
    pub fn tat(step: f64, eps: f64, max_iters: usize) -> Self {
        Self { method: BaselineMethod::Tat, step, max_iters, eps, control: RunControl::default() }
    }

    pub fn propres(eps: f64, max_iters: usize) -> Self {
        Self { method: BaselineMethod::PropRes, step: 0.0, max_iters, eps, control: RunControl::default() }
    }
}

const DIVERGENCE: f64 = 1e12;

/// `p_j ← p_j (1 + λ min(z_j, 1))` with excess demand `z = −∇φ(p)`.
pub fn tat_run(inst: &MarketInstance, cfg: &BaselineConfig, p0: &PriceVector) -> Result<SolveOutcome> {
    inst.check()?;
    if !(cfg.step >= 0.0 && cfg.step < 1.0) {
        return Err(Error::InvalidParameter(format!("step must lie in [0, 1), got {}", cfg.step)));
    }
    let started = Instant::now();
    let mut p = p0.clone();
    let mut trace = SolveTrace::new();
    let mut k = 0;
    let mut step_norm = 0.0;
    trace.status = loop {
        let eval = match evaluate(inst, &p) {
            Ok(e) => e,
            Err(e) => {
                trace.note(format!("iteration {k}: evaluation failed: {e}"));
                break SolveStatus::NumericalFailure;
            }
        };
        let grad_inf = norm_inf(&eval.gradient);
        let dist = cfg.control.dist(&p);
        trace.push(baseline_row(k, &eval.gradient, step_norm, started, dist));
        if grad_inf <= cfg.eps {
            break SolveStatus::Converged;
        }
        if let Some(s) = cfg.control.check(started, dist) {
            break s;
        }
        if k >= cfg.max_iters {
            break SolveStatus::MaxIters;
        }
        let rel: Vec<f64> = eval.gradient.iter().map(|g| cfg.step * (-g).min(1.0)).collect();
        step_norm = norm2(&rel);
        let next: Vec<f64> = p.iter().zip(&rel).map(|(pj, r)| pj * (1.0 + r)).collect();
        if norm_inf(&next) > DIVERGENCE {
            trace.note(format!("iteration {}: prices diverged", k + 1));
            break SolveStatus::NumericalFailure;
        }
        p = PriceVector::new(next)?;
        k += 1;
    };
    Ok(SolveOutcome { p, trace })
}

fn baseline_row(k: usize, gradient: &[f64], step_norm: f64, started: Instant, dist: Option<f64>) -> TraceRow {
    TraceRow {
        k,
        homotopy: f64::NAN,
        grad_inf: norm_inf(gradient),
        grad_l2: norm2(gradient),
        nbhd_resid: None,
        decrement: None,
        step_norm,
        pcg_iters: None,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        dist,
        ..TraceRow::default()
    }
}

/// Bids of every player on the positive support of its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BidMatrix {
    pub support: Vec<Vec<usize>>,
    pub bids: Vec<Vec<f64>>,
}

impl BidMatrix {
    /// `b_ij = w_i c_ij / Σ_k c_ik`
    pub fn proportional(inst: &MarketInstance) -> Self {
        let (support, bids) = inst
            .utilities
            .iter()
            .zip(&inst.budgets)
            .map(|(u, &w)| {
                let c = u.coefficients.positive_part();
                let total: f64 = c.values().iter().sum();
                (c.indices().to_vec(), c.values().iter().map(|v| w * v / total).collect())
            })
            .unzip();
        Self { support, bids }
    }

    /// `p_j = Σ_i b_ij`
    pub fn prices(&self, n: usize) -> Vec<f64> {
        let mut p = vec![0.0; n];
        for (idx, b) in self.support.iter().zip(&self.bids) {
            for (&j, &v) in idx.iter().zip(b) {
                p[j] += v;
            }
        }
        p
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.bids.iter().map(|b| b.iter().sum()).collect()
    }
}

/// Proportional response: `x_ij = b_ij/p_j`, then `b'_ij ∝ c_ij x_ij^ρ` with
/// row sums `w_i`. For `ρ < 0` the update is damped to
/// `b'_ij ∝ b_ij^{1−θ}(c_ij x_ij^ρ)^θ` with `θ = 1/(1−ρ)`.
pub fn propres_run(inst: &MarketInstance, cfg: &BaselineConfig, b0: Option<BidMatrix>) -> Result<SolveOutcome> {
    inst.check()?;
    if !inst.is_power_family() {
        return Err(Error::InvalidParameter(
            "proportional response needs unconstrained power-family utilities".into(),
        ));
    }
    let exponents: Vec<f64> = inst.utilities.iter().map(|u| u.kind.power().expect("power family")).collect();
    let coeffs: Vec<Vec<f64>> = inst.utilities.iter().map(|u| u.coefficients.positive_part().values().to_vec()).collect();
    let mut bids = b0.unwrap_or_else(|| BidMatrix::proportional(inst));
    for (i, (idx, b)) in bids.support.iter().zip(&bids.bids).enumerate() {
        if idx.as_slice() != inst.utilities[i].coefficients.positive_part().indices() || b.len() != idx.len() {
            return Err(Error::InvalidParameter(format!("bids of player {i} must cover the support of its coefficients")));
        }
    }

    let started = Instant::now();
    let mut trace = SolveTrace::new();
    let mut p_vec = bids.prices(inst.n);
    let mut k = 0;
    let mut step_norm = 0.0;
    trace.status = loop {
        let p = match PriceVector::new(p_vec.clone()) {
            Ok(p) => p,
            Err(_) => {
                trace.note(format!("iteration {k}: a demanded good has zero price"));
                break SolveStatus::NumericalFailure;
            }
        };
        let gradient = match evaluate(inst, &p) {
            Ok(e) => e.gradient,
            Err(e) => {
                trace.note(format!("iteration {k}: evaluation failed: {e}"));
                break SolveStatus::NumericalFailure;
            }
        };
        let dist = cfg.control.dist(&p);
        trace.push(baseline_row(k, &gradient, step_norm, started, dist));
        if k > 0 && step_norm <= cfg.eps {
            break SolveStatus::Converged;
        }
        if let Some(s) = cfg.control.check(started, dist) {
            break s;
        }
        if k >= cfg.max_iters {
            break SolveStatus::MaxIters;
        }

        for (i, (idx, b)) in bids.support.iter().zip(bids.bids.iter_mut()).enumerate() {
            let rho = exponents[i];
            let theta = if rho < 0.0 { 1.0 / (1.0 - rho) } else { 1.0 };
            let logs: Vec<f64> = idx
                .iter()
                .zip(b.iter())
                .zip(&coeffs[i])
                .map(|((&j, &bij), &c)| {
                    let x = bij / p_vec[j];
                    (1.0 - theta) * bij.ln() + theta * (c.ln() + rho * x.ln())
                })
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let w = inst.budgets[i];
            b.iter_mut().zip(&weights).for_each(|(bij, wt)| *bij = w * wt / total);
        }
        let next = bids.prices(inst.n);
        let change = next.iter().zip(&p_vec).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        step_norm = change / norm_inf(&p_vec);
        p_vec = next;
        k += 1;
    };
    let p = PriceVector::new(p_vec)?;
    Ok(SolveOutcome { p, trace })
}
