use rand::distributions::{Distribution, Open01, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MarketInstance, SparseVec, UtilitySpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub n: usize,
    pub m: usize,
    /// Expected fraction of nonzero coefficients.
    pub tau: f64,
    /// Coefficient scale: entries are uniform on `(0, delta]`.
    pub delta: f64,
    pub rho: f64,
    pub seed: u64,
}

impl GeneratorParams {
    pub fn new(n: usize, m: usize, tau: f64, rho: f64, seed: u64) -> Self {
        Self { n, m, tau, delta: 1.0, rho, seed }
    }
}

/// Random sparse CES market with budgets normalized to sum to one.
///
/// Players or goods left without a positive coefficient get one uniformly
/// placed entry, so every good stays valued.
pub fn generate_random(params: &GeneratorParams) -> Result<MarketInstance> {
    let GeneratorParams { n, m, tau, delta, rho, seed } = *params;
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("n and m must be at least 1".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {tau}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if !(rho.is_finite() && rho < 1.0 && rho != 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be nonzero and below 1, got {rho}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (0, delta]: 1 - U[0,1) lies in (0, 1].
    let entry = |rng: &mut ChaCha8Rng| delta * (1.0 - rng.gen::<f64>());
    let mut rows: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|_| {
            (0..n)
                .filter_map(|j| if rng.gen_bool(tau) { Some((j, entry(&mut rng))) } else { None })
                .collect()
        })
        .collect();

    let goods = Uniform::new(0, n);
    for row in rows.iter_mut().filter(|r| r.is_empty()) {
        let j = goods.sample(&mut rng);
        row.push((j, entry(&mut rng)));
    }
    let mut valued = vec![false; n];
    for &(j, _) in rows.iter().flatten() {
        valued[j] = true;
    }
    let players = Uniform::new(0, m);
    for j in (0..n).filter(|&j| !valued[j]) {
        let i = players.sample(&mut rng);
        rows[i].push((j, entry(&mut rng)));
    }

    let raw: Vec<f64> = (0..m).map(|_| Open01.sample(&mut rng)).collect();
    let total: f64 = raw.iter().sum();
    let budgets = raw.iter().map(|w| w / total).collect();

    let utilities = rows
        .into_iter()
        .map(|row| UtilitySpec::ces(rho, SparseVec::from_pairs(row)))
        .collect();
    let inst = MarketInstance::new(n, budgets, utilities);
    inst.check()?;
    Ok(inst)
}
