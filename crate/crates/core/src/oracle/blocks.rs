use nalgebra::DMatrix;

use super::constrained::{reduced_rows, PowerLog};
use super::{best_response, demand_weight, BestResponse, DualInfo, MarketEval};
use crate::error::{Error, Result};
use crate::market::{MarketInstance, PriceVector, UtilityKind};

/// One player's contribution `H_i = ω_i P ∇²f_i(p) P` to the scaled Hessian.
#[derive(Debug, Clone, PartialEq)]
pub enum PlayerHessianBlock {
    /// `diag(diag) − coef · v vᵀ` on the goods `idx`.
    ///
    /// Power family: `diag = w/(1−r) γ`, `coef = w r/(1−r)`, `v = γ`.
    DiagRankOne {
        idx: Vec<usize>,
        diag: Vec<f64>,
        coef: f64,
        v: Vec<f64>,
        /// Diagonal of the whole block when it suffers cancellation if formed
        /// as `diag − coef v²`.
        exact_diag: Option<Vec<f64>>,
    },
    /// Dense block on the goods `idx` (constrained players).
    Dense { idx: Vec<usize>, mat: DMatrix<f64> },
}

impl PlayerHessianBlock {
    pub fn power(w: f64, r: f64, resp: &BestResponse) -> Self {
        let a = w / (1.0 - r);
        PlayerHessianBlock::DiagRankOne {
            idx: resp.support.clone(),
            diag: resp.gamma.iter().map(|g| a * g).collect(),
            coef: w * r / (1.0 - r),
            v: resp.gamma.clone(),
            exact_diag: None,
        }
    }

    /// `w λ² P W⁻¹ P` with `W = σX⁻² + ccᵀ/u²`. With `b = σ1 + γ`,
    /// `s = σ + ‖γ‖²` this is `(w/σ)[diag(b²) − (b⊙γ)(b⊙γ)ᵀ/s]`.
    pub fn barrier(w: f64, sigma: f64, resp: &BestResponse) -> Self {
        let gamma = &resp.gamma;
        let b: Vec<f64> = gamma.iter().map(|g| sigma + g).collect();
        let g2: f64 = gamma.iter().map(|g| g * g).sum();
        let s = sigma + g2;
        let scale = w / sigma;
        let exact_diag = b
            .iter()
            .zip(gamma)
            .map(|(bj, gj)| scale * bj * bj * (sigma + (g2 - gj * gj).max(0.0)) / s)
            .collect();
        PlayerHessianBlock::DiagRankOne {
            idx: resp.support.clone(),
            diag: b.iter().map(|bj| scale * bj * bj).collect(),
            coef: scale / s,
            v: b.iter().zip(gamma).map(|(bj, gj)| bj * gj).collect(),
            exact_diag: Some(exact_diag),
        }
    }

    pub fn indices(&self) -> &[usize] {
        match self {
            PlayerHessianBlock::DiagRankOne { idx, .. } | PlayerHessianBlock::Dense { idx, .. } => idx,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, PlayerHessianBlock::Dense { .. })
    }

    /// `out += H_i x`
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        match self {
            PlayerHessianBlock::DiagRankOne { idx, diag, coef, v, .. } => {
                let proj: f64 = idx.iter().zip(v).map(|(&j, vj)| vj * x[j]).sum();
                for ((&j, dj), vj) in idx.iter().zip(diag).zip(v) {
                    out[j] += dj * x[j] - coef * proj * vj;
                }
            }
            PlayerHessianBlock::Dense { idx, mat } => {
                for (a, &ja) in idx.iter().enumerate() {
                    out[ja] += idx.iter().enumerate().map(|(b, &jb)| mat[(a, b)] * x[jb]).sum::<f64>();
                }
            }
        }
    }

    pub fn add_to_dense(&self, out: &mut DMatrix<f64>) {
        match self {
            PlayerHessianBlock::DiagRankOne { idx, diag, coef, v, exact_diag } => {
                for (a, &ja) in idx.iter().enumerate() {
                    for (b, &jb) in idx.iter().enumerate() {
                        out[(ja, jb)] += if a == b {
                            exact_diag.as_ref().map_or(diag[a] - coef * v[a] * v[a], |e| e[a])
                        } else {
                            -coef * v[a] * v[b]
                        };
                    }
                }
            }
            PlayerHessianBlock::Dense { idx, mat } => {
                for (a, &ja) in idx.iter().enumerate() {
                    for (b, &jb) in idx.iter().enumerate() {
                        out[(ja, jb)] += mat[(a, b)];
                    }
                }
            }
        }
    }

    /// `out += H_i 1`
    pub fn row_sums_add(&self, out: &mut [f64]) {
        match self {
            PlayerHessianBlock::DiagRankOne { idx, diag, coef, v, .. } => {
                let total: f64 = v.iter().sum();
                for ((&j, dj), vj) in idx.iter().zip(diag).zip(v) {
                    out[j] += dj - coef * total * vj;
                }
            }
            PlayerHessianBlock::Dense { idx, mat } => {
                for (a, &j) in idx.iter().enumerate() {
                    out[j] += mat.row(a).sum();
                }
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        self.add_to_dense(&mut m);
        m
    }
}

/// Blocks for every player from responses already evaluated at `p`.
pub fn player_hessian_blocks(inst: &MarketInstance, p: &PriceVector, eval: &MarketEval) -> Result<Vec<PlayerHessianBlock>> {
    eval.responses
        .iter()
        .enumerate()
        .map(|(i, resp)| block_for(inst, i, p, resp).map_err(|e| e.at_player(i)))
        .collect()
}

fn block_for(inst: &MarketInstance, i: usize, p: &PriceVector, resp: &BestResponse) -> Result<PlayerHessianBlock> {
    let w = inst.budgets[i];
    let spec = &inst.utilities[i];
    if let DualInfo::Constrained { .. } = resp.dual {
        let (idx, dual_hessian) = constrained_pieces(inst, i, resp)?;
        let omega = w / spec.degree(inst.n);
        let mat = DMatrix::from_fn(idx.len(), idx.len(), |a, b| omega * p[idx[a]] * dual_hessian[(a, b)] * p[idx[b]]);
        return Ok(PlayerHessianBlock::Dense { idx, mat });
    }
    Ok(match spec.kind {
        UtilityKind::Ces { rho } => PlayerHessianBlock::power(w, rho, resp),
        UtilityKind::AdditiveHomogeneous { r, .. } => PlayerHessianBlock::power(w, r, resp),
        UtilityKind::LinearBarrier { sigma } => PlayerHessianBlock::barrier(w, sigma, resp),
    })
}

/// `∇²f = (d/w)² [W⁻¹ − W⁻¹Aᵀ(AW⁻¹Aᵀ)⁻¹AW⁻¹]` on the player's support, with
/// `W = ∇²(−log u)(x(p))`. Computed in log-scaled form `W = X⁻¹ W̃ X⁻¹`.
fn constrained_pieces(inst: &MarketInstance, i: usize, resp: &BestResponse) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let spec = &inst.utilities[i];
    let w = inst.budgets[i];
    let a = inst
        .constraint(i)
        .ok_or_else(|| Error::InvalidParameter(format!("player {i} has no constraints")))?;
    let support = resp.support.clone();
    let c: Vec<f64> = support.iter().map(|&j| spec.coefficients.get(j)).collect();
    let util = PowerLog::new(spec, c)?;
    let d = util.degree();
    let x = &resp.x;
    let theta = util.shares(x);
    let w_inv = util
        .scaled_hessian(&theta)
        .cholesky()
        .ok_or(Error::IllConditioned { player: i, condition: f64::INFINITY })?
        .inverse();
    let (_, a_r) = reduced_rows(a, &support);
    let s = support.len();
    let a_s = DMatrix::from_fn(a_r.nrows(), s, |r, k| a_r[(r, k)] * x[k]);
    let aw = &a_s * &w_inv;
    let gram = &aw * a_s.transpose();
    let condition = condition_estimate(&gram);
    if condition > 1e14 {
        return Err(Error::IllConditioned { player: i, condition });
    }
    let proj = &w_inv
        - aw.transpose()
            * gram
                .cholesky()
                .ok_or(Error::IllConditioned { player: i, condition })?
                .solve(&aw);
    let scale = (d / w) * (d / w);
    let m = DMatrix::from_fn(s, s, |a, b| scale * x[a] * proj[(a, b)] * x[b]);
    Ok((support, m))
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Dual Hessian `∇²f_i(p)` of a constrained player as an `n × n` matrix.
pub fn constrained_dual_hessian(inst: &MarketInstance, i: usize, p: &PriceVector) -> Result<DMatrix<f64>> {
    let resp = best_response(inst, i, p)?;
    if !matches!(resp.dual, DualInfo::Constrained { .. }) {
        // no active constraint rows: the power-family closed form
        let block = block_for(inst, i, p, &resp)?;
        let omega = super::potential_weight(inst, i);
        let h = block.to_dense(inst.n);
        return Ok(DMatrix::from_fn(inst.n, inst.n, |a, b| h[(a, b)] / (omega * p[a] * p[b])));
    }
    let (idx, m) = constrained_pieces(inst, i, &resp)?;
    let mut out = DMatrix::zeros(inst.n, inst.n);
    for (a, &ja) in idx.iter().enumerate() {
        for (b, &jb) in idx.iter().enumerate() {
            out[(ja, jb)] = m[(a, b)];
        }
    }
    Ok(out)
}

/// Jacobian `∇x_i(p) = −P⁻¹ H_i P⁻¹ / κ_i` as an `n × n` matrix.
pub fn demand_jacobian(inst: &MarketInstance, i: usize, p: &PriceVector) -> Result<DMatrix<f64>> {
    let resp = best_response(inst, i, p)?;
    let h = block_for(inst, i, p, &resp)?.to_dense(inst.n);
    let kappa = demand_weight(inst, i);
    Ok(DMatrix::from_fn(inst.n, inst.n, |a, b| -h[(a, b)] / (kappa * p[a] * p[b])))
}

