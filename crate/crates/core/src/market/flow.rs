use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;

use super::{independent_rows, ConstraintMatrix, MarketInstance, SparseVec, UtilitySpec};
use crate::error::{Error, Result};

/// Directed graph with named nodes and optional terminal pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub terminals: Vec<(usize, usize)>,
}

impl FlowGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&mut self, name: &str) -> usize {
        match self.nodes.iter().position(|v| v == name) {
            Some(k) => k,
            None => {
                self.nodes.push(name.to_string());
                self.nodes.len() - 1
            }
        }
    }

    /// Nodes reachable from `start` following edges forward (or backward).
    fn reachable(&self, start: usize, forward: bool) -> Vec<bool> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            if forward {
                adj[a].push(b);
            } else {
                adj[b].push(a);
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

/// Parses `u v` edge lines and `terminal s t` lines; `#` starts a comment.
pub fn parse_graph(text: &str) -> Result<FlowGraph> {
    let mut g = FlowGraph::default();
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut id = |g: &mut FlowGraph, name: &str| {
        *names.entry(name.to_string()).or_insert_with(|| g.node(name))
    };
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::InvalidInstance(format!("graph line {}: {msg}: {raw:?}", k + 1));
        match parts.as_slice() {
            ["terminal", s, t] => {
                let pair = (id(&mut g, s), id(&mut g, t));
                g.terminals.push(pair);
            }
            [u, v] => {
                if u == v {
                    return Err(bad("self-loop"));
                }
                let e = (id(&mut g, u), id(&mut g, v));
                g.edges.push(e);
            }
            _ => return Err(bad("expected `u v` or `terminal s t`")),
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowOptions {
    pub rho: f64,
    /// Per-player budgets; uniform summing to one when absent.
    pub budgets: Option<Vec<f64>>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { rho: 0.5, budgets: None }
    }
}

/// Network allocation market: good 0 is the routed flow value, good `1 + e`
/// is edge `e`. Player `i` routes an `s_i`–`t_i` flow subject to balance rows
///
/// ```text
/// s:  x0 + in(s) − out(s) = 0
/// t: −x0 + in(t) − out(t) = 0
/// v:  out(v) − in(v)      = 0     (v ≠ s, t)
/// ```
///
/// reduced to a full-row-rank subset. The player values `x0` and every edge
/// lying on some `s`–`t` walk with coefficient 1.
pub fn build_flow_instance(
    graph: &FlowGraph,
    terminals: &[(usize, usize)],
    opts: &FlowOptions,
) -> Result<MarketInstance> {
    let nv = graph.node_count();
    let ne = graph.edges.len();
    if terminals.is_empty() {
        return Err(Error::InvalidParameter("no terminal pairs".into()));
    }
    let n = 1 + ne;
    let mut utilities = Vec::with_capacity(terminals.len());
    let mut constraints = Vec::with_capacity(terminals.len());
    let mut edge_valued = vec![false; ne];

    for (i, &(s, t)) in terminals.iter().enumerate() {
        if s >= nv || t >= nv {
            return Err(Error::InvalidParameter(format!("player {i}: terminal out of range")));
        }
        if s == t {
            return Err(Error::InvalidParameter(format!("player {i}: s and t coincide")));
        }
        let from_s = graph.reachable(s, true);
        let to_t = graph.reachable(t, false);
        if !from_s[t] {
            return Err(Error::InvalidInstance(format!(
                "player {i}: no directed path from {} to {}",
                graph.nodes[s], graph.nodes[t]
            )));
        }

        let mut full = DMatrix::<f64>::zeros(nv, n);
        for (e, &(a, b)) in graph.edges.iter().enumerate() {
            let col = 1 + e;
            // e leaves a and enters b; terminal rows count in − out, interior rows out − in
            let terminal_sign = |v: usize| if v == s || v == t { 1.0 } else { -1.0 };
            full[(a, col)] -= terminal_sign(a);
            full[(b, col)] += terminal_sign(b);
        }
        full[(s, 0)] = 1.0;
        full[(t, 0)] = -1.0;
        let rows = independent_rows(&full);
        let a = DMatrix::from_fn(rows.len(), n, |r, c| full[(rows[r], c)]);

        let mut coeffs = vec![(0, 1.0)];
        for (e, &(a, b)) in graph.edges.iter().enumerate() {
            if from_s[a] && to_t[b] {
                coeffs.push((1 + e, 1.0));
                edge_valued[e] = true;
            }
        }
        utilities.push(UtilitySpec::ces(opts.rho, SparseVec::from_pairs(coeffs)));
        constraints.push(Some(ConstraintMatrix(a)));
    }

    if let Some(e) = edge_valued.iter().position(|v| !v) {
        let (a, b) = graph.edges[e];
        return Err(Error::InvalidInstance(format!(
            "edge {} -> {} lies on no terminal path, so no player values it",
            graph.nodes[a], graph.nodes[b]
        )));
    }

    let m = terminals.len();
    let budgets = match &opts.budgets {
        Some(b) if b.len() == m => b.clone(),
        Some(b) => {
            return Err(Error::InvalidParameter(format!(
                "{} budgets for {m} players",
                b.len()
            )))
        }
        None => vec![1.0 / m as f64; m],
    };
    let mut inst = MarketInstance::new(n, budgets, utilities);
    inst.constraints = Some(constraints);
    inst.check()?;
    Ok(inst)
}
