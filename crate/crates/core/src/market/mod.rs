//! Market instances: players, goods, budgets and utility parameters.

mod flow;
mod generate;
mod io;
mod ratings;

use std::fmt;
use std::ops::Deref;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use flow::{build_flow_instance, parse_graph, FlowGraph, FlowOptions};
pub use generate::{generate_random, GeneratorParams};
pub use io::{from_json, read_instance, to_json, write_atomic, write_instance};
pub use ratings::{ingest_ratings, IngestOptions, IngestResult, RatingScale};

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseVec {
    /// Builds from `(index, value)` pairs; later duplicates overwrite earlier ones.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(j, _)| j);
        let mut idx: Vec<usize> = Vec::with_capacity(pairs.len());
        let mut val: Vec<f64> = Vec::with_capacity(pairs.len());
        for (j, v) in pairs {
            if idx.last() == Some(&j) {
                *val.last_mut().unwrap() = v;
            } else {
                idx.push(j);
                val.push(v);
            }
        }
        Self { idx, val }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let (idx, val) = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .unzip();
        Self { idx, val }
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn get(&self, j: usize) -> f64 {
        self.idx.binary_search(&j).map_or(0.0, |k| self.val[k])
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    /// Positive entries only (the support used by the oracles).
    pub fn positive_part(&self) -> SparseVec {
        let (idx, val) = self.iter().filter(|&(_, v)| v > 0.0).unzip();
        SparseVec { idx, val }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityKind {
    /// `u(x) = (Σ c_j x_j^ρ)^{1/ρ}`
    Ces { rho: f64 },
    /// `u(x) = (Σ c_j x_j^r)^k`, degree `d = k·r`
    AdditiveHomogeneous { k: f64, r: f64 },
    /// `log⟨c, x⟩ + σ Σ log x_j`
    LinearBarrier { sigma: f64 },
}

impl UtilityKind {
    /// Exponent `r` of the power family; `None` for the barrier-regularized linear kind.
    pub fn power(&self) -> Option<f64> {
        match *self {
            UtilityKind::Ces { rho } => Some(rho),
            UtilityKind::AdditiveHomogeneous { r, .. } => Some(r),
            UtilityKind::LinearBarrier { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub coefficients: SparseVec,
}

impl UtilitySpec {
    pub fn ces(rho: f64, coefficients: SparseVec) -> Self {
        Self {
            kind: UtilityKind::Ces { rho },
            coefficients,
        }
    }

    /// Degree of log-homogeneity of the utility (`d` with `log u(αx) = log u(x) + d log α`).
    pub fn degree(&self, n: usize) -> f64 {
        match self.kind {
            UtilityKind::Ces { .. } => 1.0,
            UtilityKind::AdditiveHomogeneous { k, r } => k * r,
            UtilityKind::LinearBarrier { sigma } => 1.0 + sigma * n as f64,
        }
    }
}

/// Homogeneous linear constraint `A x = 0` on one player's allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix(pub DMatrix<f64>);

impl ConstraintMatrix {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.0)
    }
}

/// Rank by Gaussian elimination with partial pivoting.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    independent_rows(a).len()
}

/// Indices of a maximal set of linearly independent rows, in input order.
pub fn independent_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-10 * scale * (a.nrows().max(a.ncols()) as f64);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut kept = Vec::new();
    for i in 0..a.nrows() {
        let mut row: Vec<f64> = a.row(i).iter().copied().collect();
        for (b, &pc) in basis.iter().zip(&pivots) {
            let f = row[pc] / b[pc];
            if f != 0.0 {
                for (r, bv) in row.iter_mut().zip(b) {
                    *r -= f * bv;
                }
            }
        }
        let (pc, pv) = row
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc });
        if pv > tol {
            basis.push(row);
            pivots.push(pc);
            kept.push(i);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    pub n: usize,
    pub m: usize,
    pub budgets: Vec<f64>,
    pub utilities: Vec<UtilitySpec>,
    /// Per-player constraint matrices (`m` entries) when any player is constrained.
    pub constraints: Option<Vec<Option<ConstraintMatrix>>>,
}

impl MarketInstance {
    pub fn new(n: usize, budgets: Vec<f64>, utilities: Vec<UtilitySpec>) -> Self {
        Self {
            n,
            m: budgets.len(),
            budgets,
            utilities,
            constraints: None,
        }
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    pub fn constraint(&self, i: usize) -> Option<&ConstraintMatrix> {
        self.constraints.as_ref().and_then(|c| c[i].as_ref())
    }

    pub fn has_linear_barrier(&self) -> bool {
        self.utilities
            .iter()
            .any(|u| matches!(u.kind, UtilityKind::LinearBarrier { .. }))
    }

    /// Every player uses a power-family utility without constraints.
    pub fn is_power_family(&self) -> bool {
        self.utilities.iter().all(|u| u.kind.power().is_some())
            && (0..self.m).all(|i| self.constraint(i).is_none_or(|a| a.rows() == 0))
    }

    /// Returns `Err` listing every violation, or `Ok(())`.
    pub fn check(&self) -> Result<()> {
        let report = validate(self);
        if report.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = report.iter().map(ToString::to_string).collect();
            Err(Error::InvalidInstance(msgs.join("; ")))
        }
    }
}

/// Strictly positive price vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidParameter("price vector is empty".into()));
        }
        if let Some((j, v)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "price of good {j} must be positive and finite, got {v}"
            )));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * alpha).collect())
    }
}

impl Deref for PriceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for PriceVector {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension(String),
    Budget { player: usize, value: f64 },
    RhoZero { player: usize },
    RhoRange { player: usize, rho: f64 },
    Concavity { player: usize, k: f64, r: f64 },
    Sigma { player: usize, sigma: f64 },
    Coefficient { player: usize, good: usize, value: f64 },
    CoefficientIndex { player: usize, good: usize },
    NoPositiveCoefficient { player: usize },
    UnvaluedGood { good: usize },
    ConstraintShape { player: usize, cols: usize },
    ConstraintRank { player: usize, rank: usize, rows: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(s) => write!(f, "{s}"),
            Violation::Budget { player, value } => {
                write!(f, "player {player}: budget must be positive and finite, got {value}")
            }
            Violation::RhoZero { player } => write!(f, "player {player}: rho must be nonzero"),
            Violation::RhoRange { player, rho } => {
                write!(f, "player {player}: rho must be finite and below 1, got {rho}")
            }
            Violation::Concavity { player, k, r } => write!(
                f,
                "player {player}: (k, r) = ({k}, {r}) violates concavity: need r in (0,1) with k in (0, 1/r], or r < 0 with k in [1/r, 0)"
            ),
            Violation::Sigma { player, sigma } => {
                write!(f, "player {player}: sigma must be positive, got {sigma}")
            }
            Violation::Coefficient { player, good, value } => write!(
                f,
                "player {player}: coefficient for good {good} must be finite and nonnegative, got {value}"
            ),
            Violation::CoefficientIndex { player, good } => {
                write!(f, "player {player}: coefficient index {good} out of range")
            }
            Violation::NoPositiveCoefficient { player } => {
                write!(f, "player {player}: needs at least one positive coefficient")
            }
            Violation::UnvaluedGood { good } => write!(f, "good {good} is valued by no player"),
            Violation::ConstraintShape { player, cols } => {
                write!(f, "player {player}: constraint matrix has {cols} columns")
            }
            Violation::ConstraintRank { player, rank, rows } => write!(
                f,
                "player {player}: constraint matrix has rank {rank} with {rows} rows"
            ),
        }
    }
}

/// Parameter check for additively homogeneous utilities.
pub fn additive_params_valid(k: f64, r: f64) -> bool {
    if !(k.is_finite() && r.is_finite()) {
        return false;
    }
    if r > 0.0 && r < 1.0 {
        k > 0.0 && k <= 1.0 / r
    } else if r < 0.0 {
        k >= 1.0 / r && k < 0.0
    } else {
        false
    }
}

/// Lists every invariant violation; empty iff the instance is valid.
pub fn validate(inst: &MarketInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    if inst.n == 0 || inst.m == 0 {
        out.push(Violation::Dimension(format!(
            "need n, m >= 1, got n = {}, m = {}",
            inst.n, inst.m
        )));
    }
    if inst.budgets.len() != inst.m || inst.utilities.len() != inst.m {
        out.push(Violation::Dimension(format!(
            "m = {} but {} budgets and {} utilities",
            inst.m,
            inst.budgets.len(),
            inst.utilities.len()
        )));
        return out;
    }
    for (player, &w) in inst.budgets.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            out.push(Violation::Budget { player, value: w });
        }
    }
    let mut valued = vec![false; inst.n];
    for (player, u) in inst.utilities.iter().enumerate() {
        match u.kind {
            UtilityKind::Ces { rho } => {
                if rho == 0.0 {
                    out.push(Violation::RhoZero { player });
                } else if !(rho.is_finite() && rho < 1.0) {
                    out.push(Violation::RhoRange { player, rho });
                }
            }
            UtilityKind::AdditiveHomogeneous { k, r } => {
                if !additive_params_valid(k, r) {
                    out.push(Violation::Concavity { player, k, r });
                }
            }
            UtilityKind::LinearBarrier { sigma } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    out.push(Violation::Sigma { player, sigma });
                }
            }
        }
        let mut any_positive = false;
        for (good, value) in u.coefficients.iter() {
            if good >= inst.n {
                out.push(Violation::CoefficientIndex { player, good });
                continue;
            }
            if !(value.is_finite() && value >= 0.0) {
                out.push(Violation::Coefficient { player, good, value });
            } else if value > 0.0 {
                any_positive = true;
                valued[good] = true;
            }
        }
        if !any_positive {
            out.push(Violation::NoPositiveCoefficient { player });
        }
    }
    out.extend(
        valued
            .iter()
            .enumerate()
            .filter(|(_, v)| !**v)
            .map(|(good, _)| Violation::UnvaluedGood { good }),
    );
    if let Some(cs) = &inst.constraints {
        if cs.len() != inst.m {
            out.push(Violation::Dimension(format!(
                "{} constraint entries for {} players",
                cs.len(),
                inst.m
            )));
        } else {
            for (player, a) in cs.iter().enumerate() {
                let Some(a) = a else { continue };
                if a.0.ncols() != inst.n {
                    out.push(Violation::ConstraintShape { player, cols: a.0.ncols() });
                    continue;
                }
                let rank = a.rank();
                if rank != a.rows() {
                    out.push(Violation::ConstraintRank { player, rank, rows: a.rows() });
                }
            }
        }
    }
    out
}
