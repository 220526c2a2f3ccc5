use std::collections::HashMap;
use std::path::Path;

use super::{MarketInstance, SparseVec, UtilitySpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatingScale {
    /// Coefficient equals the rating.
    #[default]
    Raw,
    /// Ratings divided by the largest rating in the file.
    MaxNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub max_users: usize,
    pub max_items: usize,
    pub rho: f64,
    pub scale: RatingScale,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_users: usize::MAX,
            max_items: usize::MAX,
            rho: 0.5,
            scale: RatingScale::Raw,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestResult {
    pub instance: MarketInstance,
    /// Original user id of each player.
    pub user_ids: Vec<String>,
    /// Original item id of each good.
    pub item_ids: Vec<String>,
}

impl IngestResult {
    pub fn write_mappings(&self, dir: &Path) -> Result<()> {
        let table = |header: &str, ids: &[String]| {
            let mut s = format!("index,{header}\n");
            for (k, id) in ids.iter().enumerate() {
                s.push_str(&format!("{k},{id}\n"));
            }
            s
        };
        super::write_atomic(&dir.join("players.csv"), table("user_id", &self.user_ids).as_bytes())?;
        super::write_atomic(&dir.join("goods.csv"), table("item_id", &self.item_ids).as_bytes())?;
        Ok(())
    }
}

/// Reads a `user_id,item_id,rating` CSV (with header) into a CES market.
///
/// Users and items are admitted in order of first appearance up to the limits.
/// A repeated (user, item) pair keeps its last rating. Players and goods
/// without a positive rating are dropped; budgets are uniform and sum to one.
pub fn ingest_ratings(path: &Path, opts: &IngestOptions) -> Result<IngestResult> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut users: HashMap<String, usize> = HashMap::new();
    let mut items: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut ratings: HashMap<(usize, usize), f64> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let (user, item) = (record[0].trim(), record[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(parse_err(line, "empty user or item id".into()));
        }
        let rating: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("rating {:?} is not a number", &record[2])))?;
        if !(rating.is_finite() && rating >= 0.0) {
            return Err(parse_err(line, format!("rating {rating} must be nonnegative")));
        }

        let u = match users.get(user) {
            Some(&u) => u,
            None if user_ids.len() < opts.max_users => {
                users.insert(user.to_string(), user_ids.len());
                user_ids.push(user.to_string());
                user_ids.len() - 1
            }
            None => continue,
        };
        let j = match items.get(item) {
            Some(&j) => j,
            None if item_ids.len() < opts.max_items => {
                items.insert(item.to_string(), item_ids.len());
                item_ids.push(item.to_string());
                item_ids.len() - 1
            }
            None => continue,
        };
        ratings.insert((u, j), rating);
    }

    let scale = match opts.scale {
        RatingScale::Raw => 1.0,
        RatingScale::MaxNormalized => {
            let max = ratings.values().fold(0.0_f64, |a, &b| a.max(b));
            if max > 0.0 {
                1.0 / max
            } else {
                1.0
            }
        }
    };

    let mut item_used = vec![false; item_ids.len()];
    let mut user_used = vec![false; user_ids.len()];
    for (&(u, j), &r) in &ratings {
        if r > 0.0 {
            item_used[j] = true;
            user_used[u] = true;
        }
    }
    let item_map: Vec<Option<usize>> = remap(&item_used);
    let user_map: Vec<Option<usize>> = remap(&user_used);
    let n = item_map.iter().flatten().count();
    let m = user_map.iter().flatten().count();
    if n == 0 || m == 0 {
        return Err(Error::Empty(format!("{} has no positive ratings", path.display())));
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (&(u, j), &r) in &ratings {
        if let (Some(pu), Some(gj)) = (user_map[u], item_map[j]) {
            if r > 0.0 {
                rows[pu].push((gj, r * scale));
            }
        }
    }
    let utilities = rows
        .into_iter()
        .map(|row| UtilitySpec::ces(opts.rho, SparseVec::from_pairs(row)))
        .collect();
    let instance = MarketInstance::new(n, vec![1.0 / m as f64; m], utilities);
    instance.check()?;

    let keep = |ids: Vec<String>, used: &[bool]| {
        ids.into_iter()
            .zip(used)
            .filter_map(|(id, &k)| k.then_some(id))
            .collect()
    };
    Ok(IngestResult {
        instance,
        user_ids: keep(user_ids, &user_used),
        item_ids: keep(item_ids, &item_used),
    })
}

fn remap(used: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    used.iter()
        .map(|&u| {
            u.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}
