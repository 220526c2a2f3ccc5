//! Second-order tâtonnement for Fisher markets.
//!
//! Prices are driven by players' best responses only: the excess demand is the
//! negative gradient of a convex dual potential, and its Hessian is rebuilt
//! from the bidding vectors. Two interior-point drivers ([`ipm::logbar_run`]
//! and [`ipm::pathfol_run`]) use that structure, with first-order baselines in
//! [`baselines`] for comparison.
// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod hessian;
pub mod ipm;
pub mod linalg;
pub mod market;
pub mod oracle;

pub use error::{Error, Result};
pub use market::{MarketInstance, PriceVector, SparseVec, UtilityKind, UtilitySpec};
