//! Scaled Hessian operator `H(p) = P∇²φ(p)P`, its diagonal-plus-rank-one
//! surrogate, the row-sum preconditioner and the Newton-system solvers.

mod pcg;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::market::{MarketInstance, PriceVector};
use crate::oracle::{player_hessian_blocks, MarketEval, PlayerHessianBlock};

pub use pcg::{pcg, pcg_solve, PcgOutcome};

/// Largest `n` for which dense materialization is offered.
pub const DENSE_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    Exact,
    Dr1,
}

/// `H̃ = diag(D) − Ω ξξᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dr1Surrogate {
    pub diag: Vec<f64>,
    pub omega: f64,
    pub xi: Vec<f64>,
    /// False when `Ω` cancelled to (relative) zero and only the diagonal is kept.
    pub rank_one: bool,
}

#[derive(Debug, Clone)]
pub struct ScaledHessianOp {
    n: usize,
    pub blocks: Vec<PlayerHessianBlock>,
    pub mode: HessianMode,
    pub dr1: Option<Dr1Surrogate>,
}

/// Assembles `H(p)` from responses evaluated at `p`.
pub fn assemble(inst: &MarketInstance, p: &PriceVector, eval: &MarketEval, mode: HessianMode) -> Result<ScaledHessianOp> {
    ScaledHessianOp::from_blocks(inst.n, player_hessian_blocks(inst, p, eval)?, mode)
}

impl ScaledHessianOp {
    pub fn from_blocks(n: usize, blocks: Vec<PlayerHessianBlock>, mode: HessianMode) -> Result<Self> {
        let dr1 = match mode {
            HessianMode::Exact => None,
            HessianMode::Dr1 => Some(build_dr1(n, &blocks)?),
        };
        Ok(Self { n, blocks, mode, dr1 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Exact `H v`, `O(nnz)`.
    pub fn exact_matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for b in &self.blocks {
            b.matvec_add(v, &mut out);
        }
        out
    }

    /// `H̃ v = D ⊙ v − Ω⟨ξ, v⟩ξ`.
    pub fn dr1_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let s = self.surrogate()?;
        let mut out: Vec<f64> = s.diag.iter().zip(v).map(|(d, x)| d * x).collect();
        if s.rank_one {
            let t = s.omega * dot(&s.xi, v);
            for (o, x) in out.iter_mut().zip(&s.xi) {
                *o -= t * x;
            }
        }
        Ok(out)
    }

    /// Matvec with the operator selected by `mode`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        match self.mode {
            HessianMode::Exact => self.exact_matvec(v),
            HessianMode::Dr1 => self.dr1_matvec(v).expect("surrogate assembled in DR1 mode"),
        }
    }

    /// `(H̃ − H) v = Σ coef_i ⟨v_i, v⟩ v_i − Ω⟨ξ, v⟩ξ` (diagonals cancel).
    pub fn difference_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let s = self.surrogate()?;
        let mut out = vec![0.0; self.n];
        for b in &self.blocks {
            if let PlayerHessianBlock::DiagRankOne { idx, coef, v: vi, .. } = b {
                let t = coef * idx.iter().zip(vi).map(|(&j, a)| a * v[j]).sum::<f64>();
                for (&j, a) in idx.iter().zip(vi) {
                    out[j] += t * a;
                }
            }
        }
        if s.rank_one {
            let t = s.omega * dot(&s.xi, v);
            for (o, x) in out.iter_mut().zip(&s.xi) {
                *o -= t * x;
            }
        }
        Ok(out)
    }

    /// `‖H̃ − H‖₂` estimated by power iteration from a fixed pseudo-random start.
    pub fn dr1_error_norm(&self, iterations: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v: Vec<f64> = (0..self.n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut estimate = 0.0;
        for _ in 0..iterations {
            let av = self.difference_matvec(&v)?;
            estimate = norm2(&av);
            if estimate == 0.0 {
                return Ok(0.0);
            }
            v = av.iter().map(|x| x / estimate).collect();
        }
        Ok(estimate)
    }

    /// `k_c = H·1` with entries clamped below at `1e−300`.
    pub fn preconditioner(&self) -> DiagonalPreconditioner {
        let mut k_c = vec![0.0; self.n];
        for b in &self.blocks {
            b.row_sums_add(&mut k_c);
        }
        k_c.iter_mut().for_each(|v| *v = v.max(1e-300));
        DiagonalPreconditioner { k_c }
    }

    /// Dense exact `H`, for `n ≤ DENSE_LIMIT`.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.n > DENSE_LIMIT {
            return Err(Error::InvalidParameter(format!(
                "dense Hessian requested for n = {} > {DENSE_LIMIT}",
                self.n
            )));
        }
        let mut m = DMatrix::zeros(self.n, self.n);
        for b in &self.blocks {
            b.add_to_dense(&mut m);
        }
        Ok(m)
    }

    /// Dense `H̃`, for `n ≤ DENSE_LIMIT`.
    pub fn dr1_dense(&self) -> Result<DMatrix<f64>> {
        let s = self.surrogate()?;
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&s.diag));
        if s.rank_one {
            for a in 0..self.n {
                for b in 0..self.n {
                    m[(a, b)] -= s.omega * s.xi[a] * s.xi[b];
                }
            }
        }
        Ok(m)
    }

    fn surrogate(&self) -> Result<&Dr1Surrogate> {
        self.dr1
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("operator assembled without the DR1 surrogate".into()))
    }
}

fn build_dr1(n: usize, blocks: &[PlayerHessianBlock]) -> Result<Dr1Surrogate> {
    let mut diag = vec![0.0; n];
    let mut omega = 0.0;
    let mut scale = 0.0;
    let mut xi = vec![0.0; n];
    for b in blocks {
        let PlayerHessianBlock::DiagRankOne { idx, diag: d, coef, v, .. } = b else {
            return Err(Error::InvalidParameter(
                "DR1 surrogate needs diagonal-plus-rank-one blocks; constrained players require the exact operator".into(),
            ));
        };
        for ((&j, dj), vj) in idx.iter().zip(d).zip(v) {
            diag[j] += dj;
            xi[j] += coef * vj;
        }
        omega += coef;
        scale += coef.abs();
    }
    let rank_one = omega.abs() >= 1e-14 * scale && omega != 0.0;
    if rank_one {
        xi.iter_mut().for_each(|x| *x /= omega);
    } else {
        xi.iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(Dr1Surrogate { diag, omega, xi, rank_one })
}

/// `k_c = H(p)·1 = Σ w_i γ_i` for the power family.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalPreconditioner {
    pub k_c: Vec<f64>,
}

/// Solves `(diag(D) + μI − Ωξξᵀ) d = rhs` by Sherman–Morrison.
pub fn dr1_solve(op: &ScaledHessianOp, mu: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let s = op.surrogate()?;
    let m: Vec<f64> = s.diag.iter().map(|d| d + mu).collect();
    if let Some(j) = m.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::SingularUpdate(m[j]));
    }
    let mut d: Vec<f64> = rhs.iter().zip(&m).map(|(r, mj)| r / mj).collect();
    if s.rank_one {
        let b: Vec<f64> = s.xi.iter().zip(&m).map(|(x, mj)| x / mj).collect();
        let xi_b = dot(&s.xi, &b);
        let inv_omega = 1.0 / s.omega;
        let denom = inv_omega - xi_b;
        if denom.abs() <= 1e-12 * inv_omega.abs().max(xi_b.abs()) {
            return Err(Error::SingularUpdate(denom));
        }
        let t = dot(&s.xi, &d) / denom;
        for (di, bi) in d.iter_mut().zip(&b) {
            *di += t * bi;
        }
    }
    Ok(d)
}
