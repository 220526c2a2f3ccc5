use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ConstraintMatrix, MarketInstance, SparseVec, UtilityKind, UtilitySpec};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    n: usize,
    m: usize,
    budgets: Vec<f64>,
    utilities: Vec<UtilityDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraints: Option<Vec<Option<Vec<Vec<f64>>>>>,
}

#[derive(Serialize, Deserialize)]
struct UtilityDoc {
    kind: KindTag,
    param: Param,
    entries: Vec<(usize, f64)>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    Ces,
    Additive,
    LinearBarrier,
}

/// `rho` or `sigma` as a number; `[k, r]` for additive utilities.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Param {
    Scalar(f64),
    Pair([f64; 2]),
}

impl From<&MarketInstance> for InstanceDoc {
    fn from(inst: &MarketInstance) -> Self {
        let utilities = inst
            .utilities
            .iter()
            .map(|u| {
                let (kind, param) = match u.kind {
                    UtilityKind::Ces { rho } => (KindTag::Ces, Param::Scalar(rho)),
                    UtilityKind::AdditiveHomogeneous { k, r } => (KindTag::Additive, Param::Pair([k, r])),
                    UtilityKind::LinearBarrier { sigma } => (KindTag::LinearBarrier, Param::Scalar(sigma)),
                };
                UtilityDoc { kind, param, entries: u.coefficients.iter().collect() }
            })
            .collect();
        let constraints = inst.constraints.as_ref().map(|cs| {
            cs.iter()
                .map(|a| {
                    a.as_ref().map(|a| {
                        a.0.row_iter()
                            .map(|r| r.iter().copied().collect())
                            .collect()
                    })
                })
                .collect()
        });
        InstanceDoc {
            n: inst.n,
            m: inst.m,
            budgets: inst.budgets.clone(),
            utilities,
            constraints,
        }
    }
}

impl TryFrom<InstanceDoc> for MarketInstance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        let utilities = doc
            .utilities
            .into_iter()
            .enumerate()
            .map(|(i, u)| {
                let kind = match (u.kind, u.param) {
                    (KindTag::Ces, Param::Scalar(rho)) => UtilityKind::Ces { rho },
                    (KindTag::Additive, Param::Pair([k, r])) => UtilityKind::AdditiveHomogeneous { k, r },
                    (KindTag::LinearBarrier, Param::Scalar(sigma)) => UtilityKind::LinearBarrier { sigma },
                    _ => {
                        return Err(Error::InvalidInstance(format!(
                            "utility {i}: parameter shape does not match its kind"
                        )))
                    }
                };
                Ok(UtilitySpec { kind, coefficients: SparseVec::from_pairs(u.entries) })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = doc.n;
        let constraints = doc
            .constraints
            .map(|cs| {
                cs.into_iter()
                    .enumerate()
                    .map(|(i, a)| {
                        a.map(|rows| {
                            if rows.iter().any(|r| r.len() != n) {
                                return Err(Error::InvalidInstance(format!(
                                    "constraint rows of player {i} must have {n} entries"
                                )));
                            }
                            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                            Ok(ConstraintMatrix(DMatrix::from_row_slice(rows.len(), n, &flat)))
                        })
                        .transpose()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(MarketInstance {
            n,
            m: doc.m,
            budgets: doc.budgets,
            utilities,
            constraints,
        })
    }
}

/// Serializes an instance to pretty JSON.
pub fn to_json(inst: &MarketInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&InstanceDoc::from(inst))?)
}

/// Parses and validates an instance from JSON text.
pub fn from_json(text: &str) -> Result<MarketInstance> {
    let doc: InstanceDoc = serde_json::from_str(text)?;
    let inst = MarketInstance::try_from(doc)?;
    inst.check()?;
    Ok(inst)
}

pub fn read_instance(path: &Path) -> Result<MarketInstance> {
    from_json(&fs::read_to_string(path)?)
}

pub fn write_instance(path: &Path, inst: &MarketInstance) -> Result<()> {
    write_atomic(path, to_json(inst)?.as_bytes())
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
