//! Erdős–Rényi, Barabási–Albert and Watts–Strogatz samplers.
//!
//! Every sampler is a pure function of its arguments and the state of the
//! [`SeededStream`] it is handed. The order in which random draws are consumed
//! is part of the contract:
//!
//! * ER visits the pairs `(u, v)`, `u < v`, lexicographically and draws one
//!   `bernoulli(p)` per pair.
//! * BA starts from `m` isolated nodes `0..m`. New node `t` (for `t = m..n`)
//!   draws targets until it has `m` distinct ones. While every existing node
//!   has degree zero a target is `below(t)`; otherwise it is
//!   `below(total_degree)` resolved against the cumulative degree list in
//!   node order. Duplicates are rejected and redrawn. Degrees are updated once
//!   `t` has all its targets.
//! * WS builds the ring lattice, then for `i = 1..=k/2` and `v = 0..n` draws
//!   one `bernoulli(p)`. On success it redraws `below(n)` until the candidate
//!   is neither `v` nor already adjacent to `v`, and replaces the edge
//!   `{v, v+i mod n}` by `{v, w}`. A node already adjacent to every other
//!   node keeps its edge.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::SeededStream;

/// Model family and its parameters (θ in generator terms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GraphModel {
    Er { p: f64 },
    Ba { m: usize },
    Ws { k: usize, p: f64 },
}

impl GraphModel {
    pub fn family(&self) -> Family {
        match self {
            GraphModel::Er { .. } => Family::Er,
            GraphModel::Ba { .. } => Family::Ba,
            GraphModel::Ws { .. } => Family::Ws,
        }
    }

    /// Checks the model parameters against a graph of `n` nodes.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return param("node count must be positive");
        }
        match *self {
            GraphModel::Er { p } => check_probability("ER p", p),
            GraphModel::Ba { m } => {
                if m == 0 || m >= n {
                    return param(format!("BA requires 1 <= m < n, got m={m}, n={n}"));
                }
                Ok(())
            }
            GraphModel::Ws { k, p } => {
                if k % 2 != 0 {
                    return param(format!("WS k must be even, got {k}"));
                }
                if k < 2 || k >= n {
                    return param(format!("WS requires 2 <= k < n, got k={k}, n={n}"));
                }
                check_probability("WS p", p)
            }
        }
    }
}

impl std::fmt::Display for GraphModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphModel::Er { p } => write!(f, "ER({p})"),
            GraphModel::Ba { m } => write!(f, "BA({m})"),
            GraphModel::Ws { k, p } => write!(f, "WS({k}, {p})"),
        }
    }
}

fn check_probability(what: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return param(format!("{what} must lie in [0, 1], got {p}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Er,
    Ba,
    Ws,
}

/// A stochastic generator instance: model parameters, node count and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub model: GraphModel,
    pub nodes: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(model: GraphModel, nodes: usize, seed: u64) -> Result<Self> {
        model.validate(nodes)?;
        Ok(Self { model, nodes, seed })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate(self.nodes)
    }

    /// Samples the graph with a fresh stream seeded by `self.seed`.
    pub fn sample(&self) -> Result<SampledGraph> {
        let mut rng = SeededStream::new(self.seed);
        sample(self.model, self.nodes, &mut rng)
    }
}

/// Undirected simple graph with a canonical (sorted, `u < v`) edge list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndirectedGraph {
    pub n: usize,
    edges: Vec<(usize, usize)>,
}

impl UndirectedGraph {
    /// Builds a graph from arbitrary pairs, canonicalizing them. Self-loops,
    /// duplicate edges and out-of-range ids are rejected.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return param(format!("self-loop on node {a}"));
            }
            if a >= n || b >= n {
                return param(format!("edge ({a}, {b}) out of range for n={n}"));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return param(format!("duplicate edge ({a}, {b})"));
            }
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
        })
    }

    fn from_set(n: usize, set: BTreeSet<(usize, usize)>) -> Self {
        Self {
            n,
            edges: set.into_iter().collect(),
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization is infallible")
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph G {\n");
        for v in 0..self.n {
            let _ = writeln!(out, "  {v};");
        }
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "  {u} -- {v};");
        }
        out.push_str("}\n");
        out
    }
}

/// How node ids map onto DAG indices for a given sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order", rename_all = "snake_case")]
pub enum Indexing {
    /// ER: a random permutation is drawn when the DAG is built.
    Random,
    /// BA: node ids in the order they joined the graph (initial nodes first).
    AdditionOrder(Vec<usize>),
    /// WS: node ids in clockwise ring order.
    Clockwise(Vec<usize>),
}

/// A sampled graph together with the ordering metadata needed to orient it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGraph {
    pub family: Family,
    pub graph: UndirectedGraph,
    pub indexing: Indexing,
}

pub fn sample(model: GraphModel, n: usize, rng: &mut SeededStream) -> Result<SampledGraph> {
    model.validate(n)?;
    let (graph, indexing) = match model {
        GraphModel::Er { p } => (sample_er(n, p, rng)?, Indexing::Random),
        GraphModel::Ba { m } => (
            sample_ba(n, m, rng)?,
            Indexing::AdditionOrder((0..n).collect()),
        ),
        GraphModel::Ws { k, p } => (
            sample_ws(n, k, p, rng)?,
            Indexing::Clockwise((0..n).collect()),
        ),
    };
    Ok(SampledGraph {
        family: model.family(),
        graph,
        indexing,
    })
}

pub fn sample_er(n: usize, p: f64, rng: &mut SeededStream) -> Result<UndirectedGraph> {
    GraphModel::Er { p }.validate(n)?;
    let mut set = BTreeSet::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.bernoulli(p) {
                set.insert((u, v));
            }
        }
    }
    Ok(UndirectedGraph::from_set(n, set))
}

/// Nodes are labelled in addition order, so the initial `m` nodes are
/// `0..m` and node `t` is the `t`-th node to join.
pub fn sample_ba(n: usize, m: usize, rng: &mut SeededStream) -> Result<UndirectedGraph> {
    GraphModel::Ba { m }.validate(n)?;
    let mut degree = vec![0usize; n];
    let mut total = 0usize;
    let mut set = BTreeSet::new();
    let mut targets = Vec::with_capacity(m);

    for t in m..n {
        targets.clear();
        while targets.len() < m {
            let candidate = if total == 0 {
                // Cold start: no degree mass yet, pick uniformly.
                rng.below(t)
            } else {
                let mut r = rng.below(total);
                let mut chosen = 0;
                for (v, &d) in degree[..t].iter().enumerate() {
                    if r < d {
                        chosen = v;
                        break;
                    }
                    r -= d;
                }
                chosen
            };
            if !targets.contains(&candidate) {
                targets.push(candidate);
            }
        }
        for &v in &targets {
            set.insert((v, t));
            degree[v] += 1;
        }
        degree[t] += m;
        total += 2 * m;
    }
    Ok(UndirectedGraph::from_set(n, set))
}

/// Node ids are ring positions in clockwise order.
pub fn sample_ws(n: usize, k: usize, p: f64, rng: &mut SeededStream) -> Result<UndirectedGraph> {
    GraphModel::Ws { k, p }.validate(n)?;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for v in 0..n {
        for i in 1..=k / 2 {
            let u = (v + i) % n;
            adj[v].insert(u);
            adj[u].insert(v);
        }
    }
    for i in 1..=k / 2 {
        for v in 0..n {
            if !rng.bernoulli(p) {
                continue;
            }
            if adj[v].len() >= n - 1 {
                continue;
            }
            let u = (v + i) % n;
            let w = loop {
                let w = rng.below(n);
                if w != v && !adj[v].contains(&w) {
                    break w;
                }
            };
            adj[v].remove(&u);
            adj[u].remove(&v);
            adj[v].insert(w);
            adj[w].insert(v);
        }
    }
    let set = adj
        .iter()
        .enumerate()
        .flat_map(|(v, ns)| ns.iter().filter(move |&&u| u > v).map(move |&u| (v, u)))
        .collect();
    Ok(UndirectedGraph::from_set(n, set))
}

/// Analytic ring lattice: node `v` adjacent to `v ± 1 .. v ± k/2 (mod n)`.
pub fn ring_lattice(n: usize, k: usize) -> Result<UndirectedGraph> {
    GraphModel::Ws { k, p: 0.0 }.validate(n)?;
    let set = (0..n)
        .flat_map(|v| (1..=k / 2).map(move |i| (v, (v + i) % n)))
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    Ok(UndirectedGraph::from_set(n, set))
}

pub fn is_connected(g: &UndirectedGraph) -> bool {
    if g.n <= 1 {
        return true;
    }
    let adj = g.adjacency();
    let mut seen = vec![false; g.n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == g.n
}
