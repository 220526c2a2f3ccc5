//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tatonnement::baselines::{propres_run, tat_run, BaselineConfig};
use tatonnement::hessian::{assemble, dr1_solve, pcg_solve, HessianMode, ScaledHessianOp};
use tatonnement::ipm::*;
use tatonnement::market::{build_flow_instance, generate_random, parse_graph, FlowOptions, GeneratorParams};
use tatonnement::oracle::*;
use tatonnement::{MarketInstance, PriceVector, SparseVec, UtilityKind, UtilitySpec};

type Check = Result<String, String>;
type Runner = Box<dyn Fn(&MarketInstance, RunControl) -> Result<SolveOutcome, String>>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_inf(&diff) / norm_inf(b).max(f64::MIN_POSITIVE)
}

fn rel_dist(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff) / norm2(b)
}

fn prices(v: Vec<f64>) -> PriceVector {
    PriceVector::new(v).expect("positive prices")
}

fn random_prices(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> PriceVector {
    prices((0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn desk(n: usize, m: usize, rho: f64, seed: u64) -> MarketInstance {
    generate_random(&GeneratorParams::new(n, m, 0.2, rho, seed)).expect("valid generator parameters")
}

fn nonzero_exponent(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let r: f64 = rng.gen_range(lo..hi);
        if r.abs() > 0.05 {
            return r;
        }
    }
}

/// A random CES or additive player on up to 20 goods.
fn random_power_player(rng: &mut ChaCha8Rng) -> (MarketInstance, f64, f64) {
    let n = rng.gen_range(1..=20);
    let r = nonzero_exponent(rng, -3.0, 0.95);
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    let (kind, outer) = if rng.gen_bool(0.5) {
        (UtilityKind::Ces { rho: r }, 1.0 / r)
    } else {
        let k = rng.gen_range(0.1..=1.0) / r;
        (UtilityKind::AdditiveHomogeneous { k, r }, k)
    };
    let w = rng.gen_range(0.1..10.0);
    let spec = UtilitySpec { kind, coefficients: SparseVec::from_dense(&c) };
    (MarketInstance::new(n, vec![w], vec![spec]), r, outer)
}

fn c1_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut budget, mut simplex, mut homog, mut ident) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let (inst, r, outer) = random_power_player(&mut rng);
        let n = inst.n;
        let w = inst.budgets[0];
        let p = random_prices(&mut rng, n, 0.01, 10.0);
        let resp = best_response(&inst, 0, &p).map_err(err)?;
        let x = resp.dense_x(n);
        let spend: f64 = p.iter().zip(&x).map(|(a, b)| a * b).sum();
        budget = budget.max((spend - w).abs() / w);
        simplex = simplex.max((resp.gamma.iter().sum::<f64>() - 1.0).abs());
        ensure(resp.gamma.iter().all(|&g| g >= 0.0), || "negative bidding share".into())?;
        let x2 = best_response(&inst, 0, &p.scaled(2.0).map_err(err)?).map_err(err)?.dense_x(n);
        homog = homog.max(rel_err(&x2.iter().map(|v| 2.0 * v).collect::<Vec<_>>(), &x));

        // v = −log u with log u = outer·log Σ c_j x_j^r
        let c = inst.utilities[0].coefficients.to_dense(n);
        let terms: Vec<f64> = c.iter().zip(&x).map(|(cj, xj)| cj.ln() + r * xj.ln()).collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        let grad_dot_x: f64 = -terms.iter().map(|t| outer * r * (t - max).exp() / total).sum::<f64>();
        let d = inst.utilities[0].degree(n);
        ident = ident.max((grad_dot_x + d).abs());
    }
    ensure(budget <= 1e-10, || format!("budget residual {budget:.2e}"))?;
    ensure(simplex <= 1e-12, || format!("simplex residual {simplex:.2e}"))?;
    ensure(homog <= 1e-12, || format!("homogeneity error {homog:.2e}"))?;
    ensure(ident <= 1e-10, || format!("<grad v, x> + d = {ident:.2e}"))?;
    Ok(format!("200 players; budget {budget:.1e}, simplex {simplex:.1e}, homogeneity {homog:.1e}, identity {ident:.1e}"))
}

/// Random market on up to 10 goods mixing every unconstrained utility kind.
fn mixed_instance(seed: u64) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=10);
    let m = rng.gen_range(2..=6);
    let mut inst = generate_random(&GeneratorParams::new(n, m, 0.7, 0.5, seed)).expect("valid generator parameters");
    for u in &mut inst.utilities {
        u.kind = match rng.gen_range(0..3) {
            0 => UtilityKind::Ces { rho: nonzero_exponent(&mut rng, -2.0, 0.9) },
            1 => {
                let r = nonzero_exponent(&mut rng, -1.5, 0.9);
                UtilityKind::AdditiveHomogeneous { k: rng.gen_range(0.3..=1.0) / r, r }
            }
            _ => UtilityKind::LinearBarrier { sigma: rng.gen_range(0.01..0.2) },
        };
    }
    inst
}

fn shifted(p: &PriceVector, dir: &[f64], h: f64) -> PriceVector {
    prices(p.iter().zip(dir).map(|(a, d)| a + h * d).collect())
}

fn c2_calculus() -> Check {
    let (mut grad_e, mut jac_e, mut hess_e) = (0.0_f64, 0.0_f64, 0.0_f64);
    for seed in 0..20 {
        let inst = mixed_instance(seed);
        let n = inst.n;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p = random_prices(&mut rng, n, 0.05, 0.5);
        let eval = evaluate(&inst, &p).map_err(err)?;

        let mut fd = vec![0.0; n];
        for j in 0..n {
            let h = 1e-6 * p[j];
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let up = potential_value(&inst, &shifted(&p, &e, h)).map_err(err)?;
            let down = potential_value(&inst, &shifted(&p, &e, -h)).map_err(err)?;
            fd[j] = (up - down) / (2.0 * h);
        }
        grad_e = grad_e.max(rel_err(&eval.gradient, &fd));

        for i in 0..inst.m {
            let jac = demand_jacobian(&inst, i, &p).map_err(err)?;
            let mut fd = DMatrix::zeros(n, n);
            for j in 0..n {
                let h = 1e-6 * p[j];
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let xu = best_response(&inst, i, &shifted(&p, &e, h)).map_err(err)?.dense_x(n);
                let xd = best_response(&inst, i, &shifted(&p, &e, -h)).map_err(err)?.dense_x(n);
                for a in 0..n {
                    fd[(a, j)] = (xu[a] - xd[a]) / (2.0 * h);
                }
            }
            jac_e = jac_e.max((&jac - &fd).amax() / fd.amax());
        }

        // H v = P ∇²φ P v against differences of ∇φ along P v, scaled by P
        let op = assemble(&inst, &p, &eval, HessianMode::Exact).map_err(err)?;
        let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let pv: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a * b).collect();
        let h = 1e-6;
        let gu = potential_gradient(&inst, &shifted(&p, &pv, h)).map_err(err)?;
        let gd = potential_gradient(&inst, &shifted(&p, &pv, -h)).map_err(err)?;
        let fd: Vec<f64> = (0..n).map(|j| p[j] * (gu[j] - gd[j]) / (2.0 * h)).collect();
        hess_e = hess_e.max(rel_err(&op.exact_matvec(&v), &fd));
    }
    ensure(grad_e <= 1e-5, || format!("gradient rel. error {grad_e:.2e}"))?;
    ensure(jac_e <= 1e-4, || format!("Jacobian rel. error {jac_e:.2e}"))?;
    ensure(hess_e <= 1e-4, || format!("Hessian matvec rel. error {hess_e:.2e}"))?;
    Ok(format!("20 instances; gradient {grad_e:.1e}, Jacobian {jac_e:.1e}, matvec {hess_e:.1e}"))
}

fn c3_dr1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let single = generate_random(&GeneratorParams::new(30, 1, 1.0, 0.7, 3)).map_err(err)?;
    let p = random_prices(&mut rng, 30, 0.1, 1.0);
    let op = assemble(&single, &p, &evaluate(&single, &p).map_err(err)?, HessianMode::Dr1).map_err(err)?;
    let mut exact = 0.0_f64;
    for _ in 0..20 {
        let v: Vec<f64> = (0..30).map(|_| rng.gen::<f64>() - 0.5).collect();
        exact = exact.max(rel_err(&op.dr1_matvec(&v).map_err(err)?, &op.exact_matvec(&v)));
    }
    ensure(exact <= 1e-14, || format!("m = 1 surrogate differs by {exact:.2e}"))?;

    let mut resid = 0.0_f64;
    for k in 0..100 {
        let inst = generate_random(&GeneratorParams::new(20, 40, 0.5, if k % 2 == 0 { 0.8 } else { -0.8 }, 300 + k)).map_err(err)?;
        let p = random_prices(&mut rng, 20, 0.01, 0.2);
        let op = assemble(&inst, &p, &evaluate(&inst, &p).map_err(err)?, HessianMode::Dr1).map_err(err)?;
        let mu = 10f64.powf(rng.gen_range(-4.0..0.0));
        let rhs: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() - 0.5).collect();
        let d = dr1_solve(&op, mu, &rhs).map_err(err)?;
        let back: Vec<f64> = op.dr1_matvec(&d).map_err(err)?.iter().zip(&d).map(|(h, x)| h + mu * x).collect();
        let r: Vec<f64> = back.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        resid = resid.max(norm2(&r) / norm2(&rhs));
    }
    ensure(resid <= 1e-12, || format!("dr1_solve residual {resid:.2e}"))?;

    let inst = desk(50, 150, 0.9, 33);
    let p = random_prices(&mut rng, 50, 0.005, 0.05);
    let op = assemble(&inst, &p, &evaluate(&inst, &p).map_err(err)?, HessianMode::Dr1).map_err(err)?;
    let mu = 1e-3;
    let rhs: Vec<f64> = (0..50).map(|_| rng.gen::<f64>() - 0.5).collect();
    let d = dr1_solve(&op, mu, &rhs).map_err(err)?;
    let a = op.dr1_dense().map_err(err)? + DMatrix::identity(50, 50) * mu;
    let dense = a.lu().solve(&nalgebra::DVector::from_column_slice(&rhs)).ok_or("dense solve failed")?;
    let agree = rel_err(&d, dense.as_slice());
    ensure(agree <= 1e-10, || format!("dense agreement {agree:.2e}"))?;
    Ok(format!("m=1 gap {exact:.1e}; max residual {resid:.1e} over 100 systems; dense agreement {agree:.1e}"))
}

fn centered_condition(op: &ScaledHessianOp) -> Result<f64, String> {
    let k = op.preconditioner().k_c;
    let h = op.to_dense().map_err(err)?;
    let n = op.dim();
    let c = DMatrix::from_fn(n, n, |a, b| h[(a, b)] / (k[a] * k[b]).sqrt());
    let eig = c.symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::MIN, f64::max);
    let min = eig.iter().copied().fold(f64::MAX, f64::min);
    Ok(max / min)
}

fn c4_preconditioner() -> Check {
    let mut lines = Vec::new();
    for (k, r) in [-1.9, -0.9, 0.5, 0.9].into_iter().enumerate() {
        let inst = generate_random(&GeneratorParams::new(200, 400, 0.1, r, 40 + k as u64)).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let p = random_prices(&mut rng, 200, 0.001, 0.01);
        let op = assemble(&inst, &p, &evaluate(&inst, &p).map_err(err)?, HessianMode::Exact).map_err(err)?;
        let kappa = centered_condition(&op)?;
        let bound = if r >= 0.0 { 1.0 / (1.0 - r) } else { 1.0 - r };
        ensure(kappa <= bound * (1.0 + 1e-8), || format!("r = {r}: kappa {kappa:.6} > {bound:.6}"))?;
        lines.push(format!("r={r}: {kappa:.3}<={bound:.3}"));
    }
    Ok(lines.join(", "))
}

fn c5_figure1() -> Check {
    let n = 200;
    let mut errors = Vec::new();
    for m in [50usize, 200, 800, 3200] {
        let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
        let w = 1.0 / m as f64;
        let blocks = (0..m)
            .map(|_| {
                let g = simplex_point(&mut rng, n);
                PlayerHessianBlock::DiagRankOne {
                    idx: (0..n).collect(),
                    diag: g.iter().map(|x| 2.0 * w * x).collect(),
                    coef: w,
                    v: g,
                    exact_diag: None,
                }
            })
            .collect();
        let op = ScaledHessianOp::from_blocks(n, blocks, HessianMode::Dr1).map_err(err)?;
        errors.push(op.dr1_error_norm(300).map_err(err)?);
    }
    ensure(errors.windows(2).all(|w| w[1] < w[0]), || format!("DR1 error not decreasing: {errors:?}"))?;

    let mut wins = 0;
    for seed in 0..50 {
        let inst = generate_random(&GeneratorParams::new(200, 400, 0.1, 0.9, 500 + seed)).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_prices(&mut rng, 200, 0.001, 0.01);
        let op = assemble(&inst, &p, &evaluate(&inst, &p).map_err(err)?, HessianMode::Exact).map_err(err)?;
        let g = vec![1e-3; 200];
        let rhs: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() - 0.5).collect();
        let plain = pcg_solve(&op, &g, &rhs, 1e-10, None, Some(5000)).map_err(err)?;
        let pre = pcg_solve(&op, &g, &rhs, 1e-10, Some(&op.preconditioner()), Some(5000)).map_err(err)?;
        if pre.iterations <= plain.iterations {
            wins += 1;
        }
    }
    ensure(wins >= 45, || format!("preconditioned PCG no worse on only {wins}/50 seeds"))?;
    let errors: Vec<String> = errors.iter().map(|e| format!("{e:.2e}")).collect();
    Ok(format!("DR1 error [{}]; preconditioner no worse on {wins}/50", errors.join(", ")))
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

const LOGBAR_SIGMA: f64 = 0.8;

fn c6_logbar() -> Check {
    let mut lines = Vec::new();
    for (rho, seed) in [(0.9, 6), (-0.9, 6)] {
        let inst = desk(50, 150, rho, seed);
        let cfg = LogBarConfig { eps: 1e-7, sigma_override: Some(LOGBAR_SIGMA), ..LogBarConfig::default() };
        let start = logbar_init(&inst, cfg.q).map_err(err)?;
        ensure(start.sqrt_rule_held && start.residual <= cfg.q, || format!("rho {rho}: initial point residual {:.3}", start.residual))?;
        let out = logbar_run(&inst, &cfg).map_err(err)?;
        let last = out.trace.last().ok_or("empty trace")?;
        ensure(out.status() == SolveStatus::Converged, || format!("rho {rho}: status {}", out.status()))?;
        ensure(last.grad_inf <= 1e-7, || format!("rho {rho}: grad {:.2e}", last.grad_inf))?;
        ensure(out.iterations() <= 200, || format!("rho {rho}: {} iterations", out.iterations()))?;
        let pts: Vec<(f64, f64)> = out.trace.rows.iter().map(|r| (r.k as f64, r.homotopy.ln())).collect();
        let s = slope(&pts);
        ensure((s - LOGBAR_SIGMA.ln()).abs() <= 1e-12, || format!("rho {rho}: log mu slope {s} vs {}", LOGBAR_SIGMA.ln()))?;
        lines.push(format!("rho={rho}: {} iters, grad {:.1e}", out.iterations(), last.grad_inf));
    }
    Ok(lines.join("; "))
}

fn c7_pathfol() -> Check {
    let envelope = 1.2 * (1.0 / 0.49 + 1.0 / 0.7);
    let mut lines = Vec::new();
    for (rho, seed) in [(0.9, 6), (-0.9, 6)] {
        let inst = desk(50, 150, rho, seed);
        let p0 = PriceVector::uniform(50, 1.0 / 50.0).map_err(err)?;
        let cfg = PathFolConfig { beta: 0.01, gamma_step: 0.04, eps: 1e-7, ..PathFolConfig::default() };
        let out = pathfol_run(&inst, &cfg, &p0).map_err(err)?;
        let rows = &out.trace.rows;
        ensure(out.status() == SolveStatus::Converged, || format!("rho {rho}: status {}", out.status()))?;
        let last = rows.last().ok_or("empty trace")?;
        ensure(last.grad_inf <= 1e-7, || format!("rho {rho}: grad {:.2e}", last.grad_inf))?;
        ensure(rows.windows(2).all(|w| w[1].homotopy <= w[0].homotopy), || format!("rho {rho}: t increased"))?;
        ensure(last.homotopy == 0.0, || format!("rho {rho}: t ended at {}", last.homotopy))?;

        let samples = vec![evaluate(&inst, &p0).map_err(err)?.responses, evaluate(&inst, &out.p).map_err(err)?.responses];
        let c_phi = potential_constants(&inst, &samples, cfg.kappa_cap).c_phi;
        let pairs: Vec<(f64, f64)> = rows
            .windows(2)
            .filter(|w| w[1].homotopy == 0.0)
            .filter_map(|w| Some((w[0].decrement?, w[1].decrement?)))
            .collect();
        ensure(!pairs.is_empty(), || format!("rho {rho}: no steps after t = 0"))?;
        let tail = &pairs[pairs.len().saturating_sub(3)..];
        let worst = tail.iter().map(|(a, b)| b / (a * a)).fold(0.0, f64::max);
        ensure(worst <= envelope * c_phi, || format!("rho {rho}: decrement ratio {worst:.3} > {:.3}", envelope * c_phi))?;

        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.homotopy > 0.0).map(|r| (r.k as f64, r.homotopy.ln())).collect();
        let q = if pts.len() >= 2 { slope(&pts).exp() } else { 0.0 };
        ensure(q < 1.0, || format!("rho {rho}: fitted t decay q = {q}"))?;
        lines.push(format!(
            "rho={rho}: {} iters, q={q:.3}, lam+/lam^2 {worst:.2} (C_phi {c_phi:.2e})",
            out.iterations()
        ));
    }
    Ok(lines.join("; "))
}

struct MethodRun {
    name: &'static str,
    ipm: bool,
    run: Runner,
}

fn methods() -> Vec<MethodRun> {
    let logbar = |solver| {
        move |inst: &MarketInstance, control| {
            let cfg = LogBarConfig { eps: 1e-10, sigma_override: Some(LOGBAR_SIGMA), solver, control, ..LogBarConfig::default() };
            logbar_run(inst, &cfg).map_err(err)
        }
    };
    vec![
        MethodRun { name: "LogBar", ipm: true, run: Box::new(logbar(SolverKind::Dr1)) },
        MethodRun { name: "LogBar-PCG", ipm: true, run: Box::new(logbar(SolverKind::ExactPcg)) },
        MethodRun {
            name: "PathFol",
            ipm: true,
            run: Box::new(|inst, control| {
                let cfg = PathFolConfig { eps: 1e-10, control, ..PathFolConfig::default() };
                pathfol_run(inst, &cfg, &PriceVector::uniform(inst.n, inst.total_budget() / inst.n as f64).map_err(err)?).map_err(err)
            }),
        },
        MethodRun {
            name: "Tat",
            ipm: false,
            run: Box::new(|inst, control| {
                let cfg = BaselineConfig { control, ..BaselineConfig::tat(0.1, 1e-10, 200_000) };
                tat_run(inst, &cfg, &PriceVector::uniform(inst.n, inst.total_budget() / inst.n as f64).map_err(err)?).map_err(err)
            }),
        },
        MethodRun {
            name: "PropRes",
            ipm: false,
            run: Box::new(|inst, control| {
                let cfg = BaselineConfig { control, ..BaselineConfig::propres(1e-13, 200_000) };
                propres_run(inst, &cfg, None).map_err(err)
            }),
        },
    ]
}

fn c8_cross_method() -> Check {
    let methods = methods();
    let mut agree = 0.0_f64;
    let mut violations = Vec::new();
    let mut lines = Vec::new();
    for (n, m) in [(50, 150), (80, 240), (100, 300)] {
        for rho in [0.9, -0.9] {
            let inst = desk(n, m, rho, 8);
            let reference = logbar_run(
                &inst,
                &LogBarConfig { eps: 1e-12, sigma_override: Some(LOGBAR_SIGMA), solver: SolverKind::ExactDirect, ..LogBarConfig::default() },
            )
            .map_err(err)?;
            ensure(reference.status() == SolveStatus::Converged, || format!("({n},{m},{rho}): reference run {}", reference.status()))?;
            let star = reference.p.as_slice().to_vec();

            let mut finals: Vec<Vec<f64>> = Vec::new();
            let mut iters = Vec::new();
            for method in &methods {
                let full = (method.run)(&inst, RunControl::default())?;
                ensure(full.status() == SolveStatus::Converged, || format!("({n},{m},{rho}) {}: {}", method.name, full.status()))?;
                finals.push(full.p.as_slice().to_vec());
                let control = RunControl { reference: Some(star.clone()), target_dist: Some(1e-5 * norm2(&star)), ..RunControl::default() };
                iters.push((method.name, method.ipm, (method.run)(&inst, control)?.iterations()));
            }
            for a in 0..finals.len() {
                for b in a + 1..finals.len() {
                    agree = agree.max(rel_dist(&finals[a], &finals[b]));
                }
            }
            for &(ipm, _, ki) in iters.iter().filter(|r| r.1) {
                for &(fom, _, kf) in iters.iter().filter(|r| !r.1) {
                    if 10 * ki > kf {
                        violations.push(format!("({n},{m},{rho}) {ipm} {ki} vs {fom} {kf}"));
                    }
                }
            }
            let counts: Vec<String> = iters.iter().map(|(name, _, k)| format!("{name} {k}")).collect();
            lines.push(format!("({n},{m},{rho}): {}", counts.join(", ")));
        }
    }
    let detail = lines.join("\n    ");
    ensure(agree <= 1e-4, || format!("pairwise disagreement {agree:.2e}\n    {detail}"))?;
    ensure(violations.is_empty(), || {
        format!(
            "prices agree (max pairwise {agree:.1e}) but the IPM/FOM iteration ratio exceeds 1/10 in {} pairs; iterations to rel. dist 1e-5:\n    {detail}",
            violations.len()
        )
    })?;
    Ok(format!("max pairwise {agree:.1e}\n    {detail}"))
}

fn c9_linear_barrier() -> Check {
    let eps = 1e-6;
    let mut inst = generate_random(&GeneratorParams::new(20, 50, 0.3, 0.5, 9)).map_err(err)?;
    let sigma = eps / inst.n as f64;
    for u in &mut inst.utilities {
        u.kind = UtilityKind::LinearBarrier { sigma };
    }
    let cfg = LogBarConfig {
        eps,
        solver: SolverKind::ExactDirect,
        sigma_override: Some(LOGBAR_SIGMA),
        max_correctors: 50,
        ..LogBarConfig::default()
    };
    let out = logbar_run(&inst, &cfg).map_err(err)?;
    ensure(out.status() == SolveStatus::Converged, || format!("status {}", out.status()))?;
    let cert = equilibrium_certificate(&inst, &out.p).map_err(err)?;
    let sn = sigma * inst.n as f64;
    let bound = (eps + sn) / (1.0 + sn);
    ensure(cert.clearing_inf <= bound, || format!("clearing {:.3e} > {bound:.3e}", cert.clearing_inf))?;
    let kkt = out.trace.rows.iter().map(|r| r.oracle_kkt.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    ensure(kkt <= 1e-10, || format!("oracle KKT residual {kkt:.2e}"))?;
    Ok(format!("{} iters; clearing {:.3e} <= {bound:.3e}; KKT {kkt:.1e}", out.iterations(), cert.clearing_inf))
}

fn c10_flows() -> Check {
    let mut worst = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for (text, p) in [("s t\nterminal s t\n", vec![0.3, 1.1]), ("s v\nv t\ns t\nterminal s t\n", vec![0.4, 0.9, 0.6, 1.7])] {
        let graph = parse_graph(text).map_err(err)?;
        let inst = build_flow_instance(&graph, &graph.terminals, &FlowOptions::default()).map_err(err)?;
        let n = inst.n;
        let p = prices(p);
        let a = inst.constraint(0).ok_or("missing constraint")?.0.clone();
        let resp = best_response(&inst, 0, &p).map_err(err)?;
        let x = nalgebra::DVector::from_vec(resp.dense_x(n));
        worst.0 = worst.0.max((&a * &x).amax());
        let spend: f64 = p.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        worst.1 = worst.1.max((spend - inst.budgets[0]).abs() / inst.budgets[0]);

        let m = constrained_dual_hessian(&inst, 0, &p).map_err(err)?;
        worst.2 = worst.2.max((&m * a.transpose()).amax() / m.amax());

        let jac = demand_jacobian(&inst, 0, &p).map_err(err)?;
        let mut fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * p[j];
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let xu = best_response(&inst, 0, &shifted(&p, &e, h)).map_err(err)?.dense_x(n);
            let xd = best_response(&inst, 0, &shifted(&p, &e, -h)).map_err(err)?.dense_x(n);
            for r in 0..n {
                fd[(r, j)] = (xu[r] - xd[r]) / (2.0 * h);
            }
        }
        worst.3 = worst.3.max((&jac - &fd).amax() / fd.amax());
    }
    let (ax, budget, annihilate, jac) = worst;
    ensure(ax <= 1e-10, || format!("|Ax| = {ax:.2e}"))?;
    ensure(budget <= 1e-10, || format!("budget residual {budget:.2e}"))?;
    ensure(annihilate <= 1e-10, || format!("|M A^T| = {annihilate:.2e}"))?;
    ensure(jac <= 1e-4, || format!("Jacobian rel. error {jac:.2e}"))?;
    Ok(format!("|Ax| {ax:.1e}, budget {budget:.1e}, |M A^T| {annihilate:.1e}, Jacobian {jac:.1e}"))
}

fn c11_invariance() -> Check {
    let inst = generate_random(&GeneratorParams::new(5, 8, 1.0, 0.5, 11)).map_err(err)?;
    let ones = PriceVector::uniform(5, 1.0).map_err(err)?;
    let consts = potential_constants(&inst, &[evaluate(&inst, &ones).map_err(err)?.responses], DEFAULT_KAPPA_CAP);
    let q = theory_strict_q(1e-7, consts.t_phi, 5);
    let cfg = LogBarConfig { q, eps: 1e-7, solver: SolverKind::ExactDirect, max_iters: 20_000, ..LogBarConfig::default() };
    let out = logbar_run(&inst, &cfg).map_err(err)?;
    let rows = &out.trace.rows;
    // σ = 1 − O(Q/√n) at this Q, so the run covers a fixed window of iterations
    ensure(rows.len() > 1, || "no iterations".into())?;
    let shifted = rows.iter().filter_map(|r| r.nbhd_shifted).fold(0.0, f64::max) / q;
    let resid = rows.iter().filter_map(|r| r.nbhd_resid).fold(0.0, f64::max) / q;
    ensure(shifted <= 2.0, || format!("max shifted residual {shifted:.6} Q"))?;
    ensure(resid <= 1.0, || format!("max residual {resid:.6} Q"))?;
    ensure(out.trace.notes.iter().all(|n| !n.contains("safeguard")), || "step safeguard triggered".into())?;
    Ok(format!("Q = {q:.2e}, {} iterations; max shifted {shifted:.4} Q, max residual {resid:.4} Q", rows.len() - 1))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("oracle correctness", Duration::from_secs(10), c1_oracle),
        ("calculus vs finite differences", Duration::from_secs(30), c2_calculus),
        ("DR1 exactness and inverse", Duration::from_secs(5), c3_dr1),
        ("preconditioner bound", Duration::from_secs(30), c4_preconditioner),
        ("Hessian approximation and PCG trends", Duration::from_secs(120), c5_figure1),
        ("LogBar end-to-end", Duration::from_secs(120), c6_logbar),
        ("PathFol behavior", Duration::from_secs(120), c7_pathfol),
        ("cross-method agreement", Duration::from_secs(300), c8_cross_method),
        ("linear-barrier market", Duration::from_secs(60), c9_linear_barrier),
        ("constrained allocation", Duration::from_secs(60), c10_flows),
        ("neighborhood invariance", Duration::from_secs(60), c11_invariance),
    ];
    let mut failed = 0;
    let mut out = std::io::stderr();
    for (k, (name, budget, run)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = started.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("took {:.1}s, limit {}s; {detail}", elapsed.as_secs_f64(), budget.as_secs()))
            }
        });
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(out, "criterion {:>2} {tag} {name} ({:.2}s): {detail}", k + 1, elapsed.as_secs_f64());
    }
    let _ = writeln!(out, "acceptance: {} passed, {failed} failed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
