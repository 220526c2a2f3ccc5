// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tatonnement::baselines::{propres_run, tat_run, BaselineConfig};
use tatonnement::ipm::{
    equilibrium_certificate, logbar_run, pathfol_run, LogBarConfig, PathFolConfig, RunControl, SolveOutcome,
    SolveStatus, SolverKind,
};
use tatonnement::market::{
    build_flow_instance, generate_random, ingest_ratings, parse_graph, read_instance, write_atomic, write_instance,
    FlowOptions, GeneratorParams, IngestOptions, RatingScale,
};
use tatonnement::{MarketInstance, PriceVector, UtilityKind};

#[derive(Parser)]
#[command(name = "tatonnement", version, about = "Fisher market equilibria by second-order tâtonnement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random CES market.
    Gen(GenArgs),
    /// Build a market from a `user,item,rating` file.
    Ingest(IngestArgs),
    /// Solve one instance with one method.
    Solve(SolveArgs),
    /// Run several methods over generated cells against a high-precision reference.
    Bench(BenchArgs),
    /// Build a network allocation market from an edge list.
    FlowGen(FlowGenArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instance file to write; a `.provenance.json` sidecar is written next to it.
    #[arg(long, default_value = "instance.json")]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    ratings: PathBuf,
    #[arg(long)]
    max_users: Option<usize>,
    #[arg(long)]
    max_items: Option<usize>,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    rho: f64,
    /// Divide ratings by the largest one.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FlowGenArgs {
    graph: PathBuf,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    rho: f64,
    #[arg(long, default_value = "instance.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Logbar,
    LogbarPcg,
    Pathfol,
    Tat,
    Propres,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Logbar => "logbar",
            Method::LogbarPcg => "logbar-pcg",
            Method::Pathfol => "pathfol",
            Method::Tat => "tat",
            Method::Propres => "propres",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Hessian {
    Exact,
    Dr1,
    Pcg,
}

impl From<Hessian> for SolverKind {
    fn from(h: Hessian) -> Self {
        match h {
            Hessian::Exact => SolverKind::ExactDirect,
            Hessian::Dr1 => SolverKind::Dr1,
            Hessian::Pcg => SolverKind::ExactPcg,
        }
    }
}

/// Method settings shared by `solve` and `bench`.
#[derive(Args, Clone)]
struct MethodArgs {
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
    /// Newton system solver; DR1 by default, PCG for `logbar-pcg` and constrained markets.
    #[arg(long, value_enum)]
    hessian: Option<Hessian>,
    #[arg(long = "Q", default_value_t = 0.25)]
    q: f64,
    /// Fixed `μ` shrink factor in place of `(Q+√n)/(2Q+√n)`.
    #[arg(long)]
    sigma: Option<f64>,
    /// Damped re-centering steps per `μ` (0 = short-step method).
    #[arg(long, default_value_t = 0)]
    max_correctors: usize,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 0.04)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    c_phi: f64,
    /// Tâtonnement step.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Replaces `σ` of every barrier-regularized linear player.
    #[arg(long)]
    sigma_barrier: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    eps_k: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long)]
    time_limit_s: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "logbar")]
    method: Method,
    #[command(flatten)]
    cfg: MethodArgs,
    /// Directory receiving `trace.csv`, `prices.txt` and `certificate.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Cells as `n:m:rho`, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    cells: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "logbar,logbar-pcg,pathfol,tat,propres")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distance to the reference at which a method stops.
    #[arg(long, default_value_t = 1e-5)]
    target_dist: f64,
    #[command(flatten)]
    cfg: MethodArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Failure outside a solver run: exit code 3 for bad flags or inputs, 2 when
/// the numerics broke before a trace existed.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

fn config<T>(r: anyhow::Result<T>) -> Result<T, ConfigError> {
    r.map_err(ConfigError)
}

impl ConfigError {
    fn exit_code(&self) -> u8 {
        use tatonnement::Error as E;
        match self.0.downcast_ref::<E>() {
            Some(
                E::RootBracket { .. }
                | E::InfeasibleStart { .. }
                | E::Stagnation { .. }
                | E::IllConditioned { .. }
                | E::SingularUpdate(_)
                | E::NonFiniteIterate(_)
                | E::Numerical(_)
                | E::NoFeasibleStep,
            ) => 2,
            _ => 3,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| ExitCode::SUCCESS),
        Command::Ingest(a) => cmd_ingest(&a).map(|_| ExitCode::SUCCESS),
        Command::FlowGen(a) => cmd_flow_gen(&a).map(|_| ExitCode::SUCCESS),
        Command::Solve(a) => cmd_solve(&a),
        Command::Bench(a) => cmd_bench(&a).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {:#}", e.0);
        ExitCode::from(e.exit_code())
    })
}

#[derive(Serialize)]
struct Provenance<'a> {
    generator: &'a str,
    n: usize,
    m: usize,
    tau: f64,
    delta: f64,
    rho: f64,
    seed: u64,
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    out.with_file_name(name)
}

fn cmd_gen(a: &GenArgs) -> Result<(), ConfigError> {
    let params = GeneratorParams { delta: a.delta, ..GeneratorParams::new(a.n, a.m, a.tau, a.rho, a.seed) };
    let inst = config(generate_random(&params).context("generating instance"))?;
    config(write_instance(&a.out, &inst).with_context(|| format!("writing {}", a.out.display())))?;
    let prov = Provenance { generator: "bernoulli-uniform", n: a.n, m: a.m, tau: a.tau, delta: a.delta, rho: a.rho, seed: a.seed };
    let json = serde_json::to_string_pretty(&prov).expect("provenance serializes");
    config(write_atomic(&sidecar_path(&a.out), json.as_bytes()).context("writing provenance"))?;
    log::info!("wrote {} ({} goods, {} players)", a.out.display(), inst.n, inst.m);
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), ConfigError> {
    let opts = IngestOptions {
        max_users: a.max_users.unwrap_or(usize::MAX),
        max_items: a.max_items.unwrap_or(usize::MAX),
        rho: a.rho,
        scale: if a.normalize { RatingScale::MaxNormalized } else { RatingScale::Raw },
    };
    let res = config(ingest_ratings(&a.ratings, &opts).with_context(|| format!("reading {}", a.ratings.display())))?;
    config(std::fs::create_dir_all(&a.out).context("creating output directory"))?;
    config(write_instance(&a.out.join("instance.json"), &res.instance).context("writing instance"))?;
    config(res.write_mappings(&a.out).context("writing id mappings"))?;
    Ok(())
}

fn cmd_flow_gen(a: &FlowGenArgs) -> Result<(), ConfigError> {
    let text = config(std::fs::read_to_string(&a.graph).with_context(|| format!("reading {}", a.graph.display())))?;
    let graph = config(parse_graph(&text).context("parsing graph"))?;
    let opts = FlowOptions { rho: a.rho, budgets: None };
    let inst = config(build_flow_instance(&graph, &graph.terminals, &opts).context("building flow market"))?;
    config(write_instance(&a.out, &inst).with_context(|| format!("writing {}", a.out.display())))?;
    Ok(())
}

fn apply_sigma_barrier(inst: &mut MarketInstance, sigma: f64) -> anyhow::Result<()> {
    if !(sigma > 0.0) {
        bail!("--sigma-barrier must be positive, got {sigma}");
    }
    for u in &mut inst.utilities {
        if let UtilityKind::LinearBarrier { sigma: s } = &mut u.kind {
            *s = sigma;
        }
    }
    Ok(())
}

fn uniform_start(inst: &MarketInstance) -> anyhow::Result<PriceVector> {
    Ok(PriceVector::uniform(inst.n, inst.total_budget() / inst.n as f64)?)
}

/// Runs `method` on `inst`; configuration problems surface as `Err`.
fn run_method(inst: &MarketInstance, method: Method, a: &MethodArgs, control: RunControl) -> anyhow::Result<SolveOutcome> {
    if let Some(t) = a.time_limit_s {
        if !(t > 0.0) {
            bail!("--time-limit-s must be positive");
        }
    }
    // the DR1 surrogate exists only for unconstrained players
    let constrained = (0..inst.m).any(|i| inst.constraint(i).is_some());
    let solver = |default: SolverKind| {
        let default = if constrained && default == SolverKind::Dr1 { SolverKind::ExactPcg } else { default };
        a.hessian.map_or(default, SolverKind::from)
    };
    let out = match method {
        Method::Logbar | Method::LogbarPcg => {
            let default = if method == Method::LogbarPcg { SolverKind::ExactPcg } else { SolverKind::Dr1 };
            let cfg = LogBarConfig {
                q: a.q,
                eps: a.eps,
                sigma_override: a.sigma,
                solver: solver(default),
                eps_k: a.eps_k,
                max_iters: a.max_iters,
                max_correctors: a.max_correctors,
                control,
                ..LogBarConfig::default()
            };
            cfg.validate()?;
            logbar_run(inst, &cfg)?
        }
        Method::Pathfol => {
            let cfg = PathFolConfig {
                beta: a.beta,
                gamma_step: a.gamma,
                c_phi: a.c_phi,
                eps: a.eps,
                solver: solver(SolverKind::Dr1),
                eps_k: a.eps_k,
                max_iters: a.max_iters,
                control,
                ..PathFolConfig::default()
            };
            cfg.validate()?;
            pathfol_run(inst, &cfg, &uniform_start(inst)?)?
        }
        Method::Tat => {
            let cfg = BaselineConfig { control, ..BaselineConfig::tat(a.step, a.eps, a.max_iters) };
            tat_run(inst, &cfg, &uniform_start(inst)?)?
        }
        Method::Propres => {
            let cfg = BaselineConfig { control, ..BaselineConfig::propres(a.eps, a.max_iters) };
            propres_run(inst, &cfg, None)?
        }
    };
    Ok(out)
}

fn control(a: &MethodArgs) -> RunControl {
    RunControl { time_limit: a.time_limit_s.map(Duration::from_secs_f64), ..RunControl::default() }
}

fn prices_text(p: &[f64]) -> String {
    p.iter().fold(String::new(), |mut s, v| {
        let _ = writeln!(s, "{v:e}");
        s
    })
}

fn cmd_solve(a: &SolveArgs) -> Result<ExitCode, ConfigError> {
    let mut inst = config(read_instance(&a.instance).with_context(|| format!("reading {}", a.instance.display())))?;
    if let Some(s) = a.cfg.sigma_barrier {
        config(apply_sigma_barrier(&mut inst, s))?;
    }
    let out = config(run_method(&inst, a.method, &a.cfg, control(&a.cfg)))?;
    config(std::fs::create_dir_all(&a.out).context("creating output directory"))?;
    let trace = config(out.trace.to_csv_string().map_err(Into::into))?;
    config(write_atomic(&a.out.join("trace.csv"), trace.as_bytes()).context("writing trace"))?;
    config(write_atomic(&a.out.join("prices.txt"), prices_text(&out.p).as_bytes()).context("writing prices"))?;
    let cert = config(equilibrium_certificate(&inst, &out.p).context("evaluating certificate"))?;
    let json = serde_json::to_string_pretty(&cert).expect("certificate serializes");
    config(write_atomic(&a.out.join("certificate.json"), json.as_bytes()).context("writing certificate"))?;
    eprintln!(
        "{}: {} after {} iterations, |grad|_inf = {:.3e}",
        a.method.name(),
        out.status(),
        out.iterations(),
        cert.grad_inf
    );
    Ok(match out.status() {
        SolveStatus::Converged => ExitCode::SUCCESS,
        SolveStatus::MaxIters | SolveStatus::TimedOut => ExitCode::from(1),
        SolveStatus::NumericalFailure => ExitCode::from(2),
    })
}

fn parse_cell(s: &str) -> anyhow::Result<(usize, usize, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    let [n, m, rho] = parts.as_slice() else {
        bail!("cell {s:?} is not of the form n:m:rho");
    };
    Ok((n.parse()?, m.parse()?, rho.parse()?))
}

/// `p*` at `ε = 1e−12`: exact Hessian up to the dense limit, otherwise DR1
/// followed by a PCG Newton polish.
fn ground_truth(inst: &MarketInstance, a: &MethodArgs) -> anyhow::Result<PriceVector> {
    let dense = inst.n <= tatonnement::hessian::DENSE_LIMIT;
    let cfg = LogBarConfig {
        q: a.q,
        eps: if dense { 1e-12 } else { 1e-8 },
        sigma_override: a.sigma,
        solver: if dense { SolverKind::ExactDirect } else { SolverKind::Dr1 },
        max_iters: a.max_iters,
        max_correctors: a.max_correctors,
        ..LogBarConfig::default()
    };
    let run = logbar_run(inst, &cfg)?;
    if run.status() != SolveStatus::Converged {
        bail!("reference run ended with {}", run.status());
    }
    if dense {
        return Ok(run.p);
    }
    let polish = PathFolConfig { eps: 1e-12, solver: SolverKind::ExactPcg, ..PathFolConfig::default() };
    let run = pathfol_run(inst, &polish, &run.p)?;
    if run.status() != SolveStatus::Converged {
        bail!("reference polish ended with {}", run.status());
    }
    Ok(run.p)
}

fn cmd_bench(a: &BenchArgs) -> Result<(), ConfigError> {
    let cells = config(a.cells.iter().map(|c| parse_cell(c)).collect::<anyhow::Result<Vec<_>>>())?;
    config(std::fs::create_dir_all(&a.out).context("creating output directory"))?;
    let mut table = String::from("n,m,rho,method,time_s,final_dist,iters,status,inaccurate\n");
    for (cell, &(n, m, rho)) in cells.iter().enumerate() {
        let params = GeneratorParams::new(n, m, a.tau, rho, a.seed + cell as u64);
        let inst = config(generate_random(&params).context("generating cell instance"))?;
        let reference = match ground_truth(&inst, &a.cfg) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("cell {n}:{m}:{rho}: reference unavailable: {e:#}");
                for method in &a.methods {
                    let _ = writeln!(table, "{n},{m},{rho},{},,,,unavailable,", method.name());
                }
                continue;
            }
        };
        for &method in &a.methods {
            let ctl = RunControl {
                reference: Some(reference.to_vec()),
                target_dist: Some(a.target_dist),
                ..control(&a.cfg)
            };
            let started = Instant::now();
            let run = config(run_method(&inst, method, &a.cfg, ctl))?;
            let time_s = started.elapsed().as_secs_f64();
            let dist = run.trace.last().and_then(|r| r.dist).unwrap_or(f64::NAN);
            let flag = if dist > a.target_dist { "†" } else { "" };
            let _ = writeln!(
                table,
                "{n},{m},{rho},{},{time_s:.6},{dist:e},{},{},{flag}",
                method.name(),
                run.iterations(),
                run.status()
            );
            let name = format!("trace_{n}_{m}_{rho}_{}.csv", method.name());
            let csv = config(run.trace.to_csv_string().map_err(Into::into))?;
            config(write_atomic(&a.out.join(name), csv.as_bytes()).context("writing trace"))?;
        }
    }
    config(write_atomic(&a.out.join("results.csv"), table.as_bytes()).context("writing results"))?;
    print!("{table}");
    Ok(())
}
