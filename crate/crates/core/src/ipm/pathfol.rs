use std::time::Instant;

use super::{
    check_instance, max_delta, safeguard, scaled_gradient, scaled_update, solve_newton, ParamCertificate, RunControl,
    SolveOutcome, SolveStatus, SolveTrace, SolverKind, TraceRow,
};
use crate::error::{Error, Result};
use crate::hessian::{assemble, ScaledHessianOp};
use crate::linalg::{dot, norm2, norm_inf};
use crate::market::{MarketInstance, PriceVector};
use crate::oracle::{evaluate, MarketEval, DEFAULT_KAPPA_CAP};

#[derive(Debug, Clone)]
pub struct PathFolConfig {
    pub beta: f64,
    pub gamma_step: f64,
    pub delta_target: f64,
    /// Self-concordance constant used in the `t` update and the centering test.
    pub c_phi: f64,
    pub eps: f64,
    pub solver: SolverKind,
    pub eps_k: f64,
    pub pcg_max_iters: Option<usize>,
    pub max_iters: usize,
    pub step_safeguard_eta: f64,
    /// Power iterations spent estimating `‖H̃ − H‖` per outer iteration (DR1 only).
    pub power_iters: usize,
    pub kappa_cap: f64,
    pub control: RunControl,
}

impl Default for PathFolConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            gamma_step: 0.04,
            delta_target: 1e-3,
            c_phi: 1.0,
            eps: 1e-7,
            solver: SolverKind::Dr1,
            eps_k: 1e-10,
            pcg_max_iters: None,
            max_iters: 10_000,
            step_safeguard_eta: 0.01,
            power_iters: 10,
            kappa_cap: DEFAULT_KAPPA_CAP,
            control: RunControl::default(),
        }
    }
}

impl PathFolConfig {
    pub fn with_certificate(mut self, cert: &ParamCertificate) -> Self {
        self.beta = cert.beta;
        self.gamma_step = cert.gamma;
        self.delta_target = cert.delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (b, g) = (self.beta, self.gamma_step);
        if !(b > 0.0 && g > 0.0 && b + g < 1.0) {
            return Err(Error::InvalidParameter(format!("need beta, gamma > 0 with beta + gamma < 1, got ({b}, {g})")));
        }
        if !(self.c_phi > 0.0 && self.c_phi.is_finite()) {
            return Err(Error::InvalidParameter(format!("C_phi must be positive, got {}", self.c_phi)));
        }
        if !(self.eps > 0.0 && self.eps_k > 0.0) {
            return Err(Error::InvalidParameter("eps and eps_K must be positive".into()));
        }
        if !(self.step_safeguard_eta > 0.0 && self.step_safeguard_eta < 1.0) {
            return Err(Error::InvalidParameter("safeguard eta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// `λ̃(p) = √(gᵀ H̃⁻¹ g)` with `g = P∇φ(p)`.
pub fn newton_decrement(p: &PriceVector, eval: &MarketEval, op: &ScaledHessianOp, solver: SolverKind) -> Result<f64> {
    let g = scaled_gradient(p, eval);
    let a = solve_newton(op, solver, 0.0, &g, 1e-10, Some(10 * op.dim().max(1)))?.d;
    Ok(dot(&g, &a).max(0.0).sqrt())
}

/// Homotopy from the anchor `p₀`: `t` shrinks by `γ/(C_φ‖P∇φ(p₀)‖*_{H̃(p_k)})`
/// and `p` follows the minimizers of `φ(p) − t⟨∇φ(p₀), p⟩`. After `t = 0` the
/// iteration is plain inexact Newton, stopped at `λ̃ ≤ ε/2` or `‖∇φ‖_∞ ≤ ε`.
pub fn pathfol_run(inst: &MarketInstance, cfg: &PathFolConfig, p0: &PriceVector) -> Result<SolveOutcome> {
    check_instance(inst)?;
    cfg.validate()?;
    if p0.len() != inst.n {
        return Err(Error::InvalidParameter("p0 has the wrong dimension".into()));
    }
    let started = Instant::now();
    let mut p = p0.clone();
    let mut eval = evaluate(inst, &p)?;
    let g0 = eval.gradient.clone();
    let mut t = 1.0_f64;
    let mut solver = cfg.solver;
    let delta_max = max_delta(cfg.beta, cfg.gamma_step);
    let degrees: Vec<f64> = inst.utilities.iter().map(|u| u.degree(inst.n)).collect();
    let centering_bound = cfg.beta / cfg.c_phi;
    let mut centering_flags = 0usize;
    let mut trace = SolveTrace::new();
    let mut k = 0usize;
    let mut last_step = (0.0, None);

    trace.status = loop {
        let op = match assemble(inst, &p, &eval, solver.hessian_mode()) {
            Ok(op) => op,
            Err(e) => {
                trace.note(format!("iteration {k}: assembly failed: {e}"));
                break SolveStatus::NumericalFailure;
            }
        };
        if solver == SolverKind::Dr1 {
            let eps_h = op.dr1_error_norm(cfg.power_iters)?;
            let ratio = eval
                .responses
                .iter()
                .zip(&degrees)
                .map(|(r, d)| r.kappa().min(cfg.kappa_cap) / d)
                .fold(0.0_f64, f64::max);
            let delta = eps_h * ratio;
            if delta > delta_max {
                trace.note(format!(
                    "iteration {k}: DR1 relative error {delta:.3e} exceeds {delta_max:.3e}; switching to PCG"
                ));
                solver = SolverKind::ExactPcg;
            }
        }

        let g = scaled_gradient(&p, &eval);
        let pg0: Vec<f64> = p.iter().zip(&g0).map(|(a, b)| a * b).collect();
        let cap = cfg.pcg_max_iters;
        let solved = solve_newton(&op, solver, 0.0, &g, cfg.eps_k, cap)
            .and_then(|a| solve_newton(&op, solver, 0.0, &pg0, cfg.eps_k, cap).map(|b| (a, b)));
        let (a, b) = match solved {
            Ok(v) => v,
            Err(e) => {
                trace.note(format!("iteration {k}: Newton solve failed: {e}"));
                break SolveStatus::NumericalFailure;
            }
        };
        let pcg_iters = match (a.pcg_iters, b.pcg_iters) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        let (a, b) = (a.d, b.d);
        let decrement = dot(&g, &a).max(0.0).sqrt();
        let anchor_norm = dot(&pg0, &b).max(0.0).sqrt();
        // ‖g − t·Pg₀‖* from the two solves
        let cg: Vec<f64> = g.iter().zip(&pg0).map(|(x, y)| x - t * y).collect();
        let ca: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - t * y).collect();
        let centering = dot(&cg, &ca).max(0.0).sqrt();
        if centering > centering_bound {
            centering_flags += 1;
        }

        trace.push(TraceRow {
            k,
            homotopy: t,
            grad_inf: norm_inf(&eval.gradient),
            grad_l2: norm2(&eval.gradient),
            nbhd_resid: Some(centering),
            decrement: Some(decrement),
            step_norm: last_step.0,
            pcg_iters: last_step.1,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            dist: cfg.control.dist(&p),
            oracle_kkt: eval.max_oracle_kkt(),
            ..TraceRow::default()
        });

        let row = trace.last().expect("row just pushed");
        if row.grad_inf <= cfg.eps || (t == 0.0 && decrement <= cfg.eps / 2.0) {
            break SolveStatus::Converged;
        }
        if let Some(status) = cfg.control.check(started, row.dist) {
            break status;
        }
        if k >= cfg.max_iters {
            break SolveStatus::MaxIters;
        }

        let t_next = if anchor_norm > 0.0 {
            (t - cfg.gamma_step / (cfg.c_phi * anchor_norm)).max(0.0)
        } else {
            0.0
        };
        let mut d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| -(x - t_next * y)).collect();
        if safeguard(&mut d, cfg.step_safeguard_eta) {
            trace.note(format!("iteration {}: step safeguard scaled d", k + 1));
        }
        match scaled_update(&p, &d).and_then(|q| evaluate(inst, &q).map(|e| (q, e))) {
            Ok((q, e)) => {
                p = q;
                eval = e;
            }
            Err(e) => {
                trace.note(format!("iteration {}: evaluation failed: {e}", k + 1));
                break SolveStatus::NumericalFailure;
            }
        }
        t = t_next;
        k += 1;
        last_step = (norm2(&d), pcg_iters);
    };
    if centering_flags > 0 {
        trace.note(format!(
            "centering residual exceeded beta/C_phi = {centering_bound:.3e} at {centering_flags} iterations"
        ));
    }
    Ok(SolveOutcome { p, trace })
}
