use std::time::Instant;

use super::{
    check_instance, neighborhood_residual, safeguard, scaled_gradient, scaled_update, solve_newton, RunControl,
    SolveOutcome, SolveStatus, SolveTrace, SolverKind, TraceRow,
};
use crate::error::{Error, Result};
use crate::hessian::assemble;
use crate::linalg::{dot, norm2, norm_inf};
use crate::market::{MarketInstance, PriceVector};
use crate::oracle::{demand_weight, evaluate, MarketEval};

#[derive(Debug, Clone)]
pub struct LogBarConfig {
    /// Neighborhood size `Q ∈ (0, 1/2)`.
    pub q: f64,
    pub eps: f64,
    /// Replaces the shrink factor `(Q+√n)/(2Q+√n)` when set.
    pub sigma_override: Option<f64>,
    pub solver: SolverKind,
    pub eps_k: f64,
    /// PCG iteration cap; `n` when absent.
    pub pcg_max_iters: Option<usize>,
    pub max_iters: usize,
    pub step_safeguard_eta: f64,
    /// Damped re-centering steps allowed per `μ`. Zero gives the plain
    /// short-step method; positive values backtrack every step on
    /// `φ(p) − μ Σ log p_j` and re-center until back inside `C(μ, Q)`.
    pub max_correctors: usize,
    pub control: RunControl,
}

impl Default for LogBarConfig {
    fn default() -> Self {
        Self {
            q: 0.25,
            eps: 1e-7,
            sigma_override: None,
            solver: SolverKind::Dr1,
            eps_k: 1e-10,
            pcg_max_iters: None,
            max_iters: 10_000,
            step_safeguard_eta: 0.01,
            max_correctors: 0,
            control: RunControl::default(),
        }
    }
}

impl LogBarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 0.5) {
            return Err(Error::InvalidParameter(format!("Q must lie in (0, 1/2), got {}", self.q)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if let Some(s) = self.sigma_override {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::InvalidParameter(format!("sigma must lie in (0, 1), got {s}")));
            }
        }
        if !(self.step_safeguard_eta > 0.0 && self.step_safeguard_eta < 1.0) {
            return Err(Error::InvalidParameter("safeguard eta must lie in (0, 1)".into()));
        }
        if !(self.eps_k > 0.0) {
            return Err(Error::InvalidParameter("eps_K must be positive".into()));
        }
        Ok(())
    }
}

/// `σ = (Q + √n)/(2Q + √n)`
pub fn shrink_factor(q: f64, n: usize) -> f64 {
    let s = (n as f64).sqrt();
    (q + s) / (2.0 * q + s)
}

/// `Q = ε/(14ε + 4T_φ(√n + 1))`, the neighborhood size the convergence proof uses.
pub fn theory_strict_q(eps: f64, t_phi: f64, n: usize) -> f64 {
    eps / (14.0 * eps + 4.0 * t_phi * ((n as f64).sqrt() + 1.0))
}

/// Starting point of the barrier method.
#[derive(Debug, Clone)]
pub struct LogBarStart {
    pub mu0: f64,
    pub p0: PriceVector,
    pub eval: MarketEval,
    /// Neighborhood residual of `p0` at `mu0`.
    pub residual: f64,
    /// Whether `μ₀ = √(Σw/Q)` already gave a point of `C(μ₀, Q)`.
    pub sqrt_rule_held: bool,
}

/// `p₀ = μ₀·1` with `μ₀ = √(Σw/Q)`, verified to lie in `C(μ₀, Q)`.
///
/// The residual at `μ₀·1` equals `‖Σ κ_i x_i(μ₀1)‖ ≤ Σ κ_i w_i / μ₀`, so when
/// the square-root rule misses, `μ₀ = Σ κ_i w_i / Q` is used instead.
pub fn logbar_init(inst: &MarketInstance, q: f64) -> Result<LogBarStart> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::InvalidParameter(format!("Q must lie in (0, 1/2), got {q}")));
    }
    let at = |mu0: f64| -> Result<(PriceVector, MarketEval, f64)> {
        let p0 = PriceVector::uniform(inst.n, mu0)?;
        let eval = evaluate(inst, &p0)?;
        let resid = neighborhood_residual(&p0, &eval.gradient, mu0);
        Ok((p0, eval, resid))
    };
    let mu0 = (inst.total_budget() / q).sqrt();
    let (p0, eval, residual) = at(mu0)?;
    if residual <= q {
        return Ok(LogBarStart { mu0, p0, eval, residual, sqrt_rule_held: true });
    }
    let weighted: f64 = (0..inst.m).map(|i| demand_weight(inst, i) * inst.budgets[i]).sum();
    let mu0 = mu0.max(weighted / q);
    let (p0, eval, residual) = at(mu0)?;
    if residual > q {
        return Err(Error::Numerical(format!(
            "initial point outside the neighborhood: residual {residual} > Q = {q}"
        )));
    }
    Ok(LogBarStart { mu0, p0, eval, residual, sqrt_rule_held: false })
}

/// One Newton step on `ψ_μ(p) = φ(p) − μ Σ log p_j` in scaled coordinates.
struct BarrierStep {
    p: PriceVector,
    eval: MarketEval,
    step_norm: f64,
    pcg_iters: Option<usize>,
}

fn barrier_step(
    inst: &MarketInstance,
    cfg: &LogBarConfig,
    p: &PriceVector,
    eval: &MarketEval,
    mu: f64,
    damped: bool,
    notes: &mut Vec<String>,
) -> Result<BarrierStep> {
    let op = assemble(inst, p, eval, cfg.solver.hessian_mode())?;
    let rhs: Vec<f64> = scaled_gradient(p, eval).iter().map(|g| mu - g).collect();
    let mut step = solve_newton(&op, cfg.solver, mu, &rhs, cfg.eps_k, cfg.pcg_max_iters)?;
    notes.extend(step.note.take());
    if safeguard(&mut step.d, cfg.step_safeguard_eta) {
        notes.push("step safeguard scaled d".into());
    }
    if !damped {
        let q = scaled_update(p, &step.d)?;
        let e = evaluate(inst, &q)?;
        return Ok(BarrierStep { p: q, eval: e, step_norm: norm2(&step.d), pcg_iters: step.pcg_iters });
    }

    let merit = |p: &PriceVector, e: &MarketEval| e.value - mu * p.iter().map(|v| v.ln()).sum::<f64>();
    let psi0 = merit(p, eval);
    // directional derivative of ψ_μ along P d is ⟨P∇φ − μ1, d⟩ = −⟨rhs, d⟩
    let slope = -dot(&rhs, &step.d);
    let mut alpha = 1.0;
    for _ in 0..60 {
        let d: Vec<f64> = step.d.iter().map(|v| alpha * v).collect();
        if let Ok((q, e)) = scaled_update(p, &d).and_then(|q| evaluate(inst, &q).map(|e| (q, e))) {
            if merit(&q, &e) <= psi0 + 1e-4 * alpha * slope.min(0.0) {
                return Ok(BarrierStep { p: q, eval: e, step_norm: norm2(&d), pcg_iters: step.pcg_iters });
            }
        }
        alpha *= 0.5;
    }
    Err(Error::NoFeasibleStep)
}

/// Barrier path following: `μ_{k+1} = σμ_k`, `(H̃ + μ_{k+1}I)d = −(P∇φ − μ_{k+1}1)`,
/// `p ← p ⊙ (1 + d)`, until `‖∇φ‖_∞ ≤ ε`.
pub fn logbar_run(inst: &MarketInstance, cfg: &LogBarConfig) -> Result<SolveOutcome> {
    check_instance(inst)?;
    cfg.validate()?;
    let started = Instant::now();
    let LogBarStart { mu0, p0, eval, sqrt_rule_held, .. } = logbar_init(inst, cfg.q)?;
    let (mut p, mut eval) = (p0, eval);
    let sigma = cfg.sigma_override.unwrap_or_else(|| shrink_factor(cfg.q, inst.n));
    let mu_floor = cfg.eps / (1.0 + (inst.n as f64).sqrt());
    let damped = cfg.max_correctors > 0;
    let mut trace = SolveTrace::new();
    if !sqrt_rule_held {
        trace.note(format!("mu0 = sqrt(sum w / Q) missed the neighborhood; started from mu0 = {mu0:.6e}"));
    }
    let mut threshold_noted = false;

    let row = |k: usize, mu: f64, p: &PriceVector, eval: &MarketEval, step_norm: f64| TraceRow {
        k,
        homotopy: mu,
        grad_inf: norm_inf(&eval.gradient),
        grad_l2: norm2(&eval.gradient),
        nbhd_resid: Some(neighborhood_residual(p, &eval.gradient, mu)),
        step_norm,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        dist: cfg.control.dist(p),
        oracle_kkt: eval.max_oracle_kkt(),
        ..TraceRow::default()
    };
    trace.push(row(0, mu0, &p, &eval, 0.0));

    let mut k = 0;
    trace.status = loop {
        let last = trace.last().expect("initial row");
        if last.grad_inf <= cfg.eps {
            break SolveStatus::Converged;
        }
        if let Some(status) = cfg.control.check(started, last.dist) {
            break status;
        }
        if k >= cfg.max_iters {
            break SolveStatus::MaxIters;
        }
        k += 1;
        let mu = mu0 * sigma.powi(k as i32);
        if mu <= mu_floor && !threshold_noted {
            trace.note(format!("mu reached eps/(1+sqrt n) at iteration {k}"));
            threshold_noted = true;
        }
        let shifted = neighborhood_residual(&p, &eval.gradient, mu);

        let mut notes = Vec::new();
        let mut pcg_total: Option<usize> = None;
        let mut correctors = 0;
        let mut outcome = barrier_step(inst, cfg, &p, &eval, mu, damped, &mut notes);
        let mut step_norm = 0.0;
        while let Ok(step) = outcome {
            step_norm = step.step_norm;
            pcg_total = match (pcg_total, step.pcg_iters) {
                (a, None) => a,
                (None, b) => b,
                (Some(a), Some(b)) => Some(a + b),
            };
            p = step.p;
            eval = step.eval;
            if correctors >= cfg.max_correctors || neighborhood_residual(&p, &eval.gradient, mu) <= cfg.q {
                outcome = Ok(BarrierStep { p: p.clone(), eval: eval.clone(), step_norm, pcg_iters: None });
                break;
            }
            correctors += 1;
            outcome = barrier_step(inst, cfg, &p, &eval, mu, true, &mut notes);
        }
        for n in notes {
            trace.note(format!("iteration {k}: {n}"));
        }
        if let Err(e) = outcome {
            trace.note(format!("iteration {k}: step failed: {e}"));
            break SolveStatus::NumericalFailure;
        }
        let mut r = row(k, mu, &p, &eval, step_norm);
        r.pcg_iters = pcg_total;
        r.nbhd_shifted = Some(shifted);
        r.correctors = damped.then_some(correctors);
        trace.push(r);
    };
    Ok(SolveOutcome { p, trace })
}
