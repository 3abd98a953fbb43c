//! Orientation of undirected samples into per-stage DAGs.
//!
//! Each node receives an index and every edge points from the smaller index
//! to the larger one. Index order is therefore a topological order. A unique
//! input pseudo-node feeds every node without predecessors and a unique
//! output pseudo-node collects every node without successors; isolated nodes
//! get both.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_models::{Family, Indexing, SampledGraph, UndirectedGraph};
use crate::rng::SeededStream;

/// One stage's wiring. Internal nodes are `0..n_internal` in DAG index
/// order; the input and output pseudo-nodes are `n_internal` and
/// `n_internal + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDag {
    pub n_internal: usize,
    /// Internal edges `(src, dst)` with `src < dst`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub original_inputs: Vec<usize>,
    pub original_outputs: Vec<usize>,
    /// `index_map[graph_node] = dag_index`.
    pub index_map: Vec<usize>,
}

impl StageDag {
    pub fn input_node(&self) -> usize {
        self.n_internal
    }

    pub fn output_node(&self) -> usize {
        self.n_internal + 1
    }

    /// Predecessor lists over internal nodes (internal edges only).
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.n_internal];
        for &(s, d) in &self.edges {
            preds[d].push(s);
        }
        preds
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.n_internal];
        for &(s, d) in &self.edges {
            succ[s].push(d);
        }
        succ
    }

    /// All edges including the pseudo-node ones, over ids
    /// `0..n_internal + 2`.
    pub fn full_edges(&self) -> Vec<(usize, usize)> {
        let mut all: Vec<_> = self
            .original_inputs
            .iter()
            .map(|&v| (self.input_node(), v))
            .collect();
        all.extend_from_slice(&self.edges);
        all.extend(
            self.original_outputs
                .iter()
                .map(|&v| (v, self.output_node())),
        );
        all
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{name}\" {{");
        out.push_str("  rankdir=TB;\n  node [shape=circle];\n");
        let _ = writeln!(
            out,
            "  in [label=\"in\", style=filled, fillcolor=blue, fontcolor=white];"
        );
        let _ = writeln!(
            out,
            "  out [label=\"out\", style=filled, fillcolor=red, fontcolor=white];"
        );
        for v in 0..self.n_internal {
            let _ = writeln!(out, "  n{v} [label=\"{v}\"];");
        }
        for &v in &self.original_inputs {
            let _ = writeln!(out, "  in -> n{v};");
        }
        for &(s, d) in &self.edges {
            let _ = writeln!(out, "  n{s} -> n{d};");
        }
        for &v in &self.original_outputs {
            let _ = writeln!(out, "  n{v} -> out;");
        }
        out.push_str("}\n");
        out
    }
}

/// Orients `sample` into a [`StageDag`].
///
/// For ER the permutation is drawn from `rng` with [`SeededStream::shuffle`]
/// over the identity list; position `i` of the shuffled list receives DAG
/// index `i`. BA and WS consume nothing from `rng`.
pub fn to_dag(sample: &SampledGraph, rng: &mut SeededStream) -> Result<StageDag> {
    let n = sample.graph.n;
    if n == 0 {
        return Err(Error::Contract("cannot orient an empty graph".into()));
    }
    let order = match (sample.family, &sample.indexing) {
        (Family::Er, Indexing::Random) => {
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            order
        }
        (Family::Ba, Indexing::AdditionOrder(order)) | (Family::Ws, Indexing::Clockwise(order)) => {
            order.clone()
        }
        (family, indexing) => {
            return Err(Error::Contract(format!(
                "{family:?} graph needs its own indexing metadata, got {indexing:?}"
            )))
        }
    };
    orient(&sample.graph, &order)
}

/// Orients `g` so that `order[i]` becomes DAG node `i`.
pub fn orient(g: &UndirectedGraph, order: &[usize]) -> Result<StageDag> {
    let n = g.n;
    if order.len() != n {
        return Err(Error::Contract(format!(
            "ordering has {} entries for {} nodes",
            order.len(),
            n
        )));
    }
    let mut index_map = vec![usize::MAX; n];
    for (idx, &node) in order.iter().enumerate() {
        if node >= n || index_map[node] != usize::MAX {
            return Err(Error::Contract("ordering is not a permutation".into()));
        }
        index_map[node] = idx;
    }
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .map(|&(a, b)| {
            let (ia, ib) = (index_map[a], index_map[b]);
            (ia.min(ib), ia.max(ib))
        })
        .collect();
    edges.sort_unstable();

    let mut indeg = vec![0; n];
    let mut outdeg = vec![0; n];
    for &(s, d) in &edges {
        outdeg[s] += 1;
        indeg[d] += 1;
    }
    Ok(StageDag {
        n_internal: n,
        original_inputs: (0..n).filter(|&v| indeg[v] == 0).collect(),
        original_outputs: (0..n).filter(|&v| outdeg[v] == 0).collect(),
        edges,
        index_map,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DagDiagnostics {
    pub acyclic: bool,
    /// Internal edges that do not go from a smaller to a larger index.
    pub misoriented_edges: Vec<(usize, usize)>,
    /// Internal nodes not reachable from the input pseudo-node.
    pub unreachable_from_input: Vec<usize>,
    /// Internal nodes that cannot reach the output pseudo-node.
    pub cannot_reach_output: Vec<usize>,
    /// Internal nodes with no internal edge at all.
    pub isolated: Vec<usize>,
    /// Pseudo-node wiring that disagrees with the in/out-degree rule.
    pub pseudo_wiring_errors: Vec<String>,
}

impl DagDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.acyclic
            && self.misoriented_edges.is_empty()
            && self.unreachable_from_input.is_empty()
            && self.cannot_reach_output.is_empty()
            && self.pseudo_wiring_errors.is_empty()
    }
}

/// Structural checks on a stage DAG. Never mutates.
pub fn validate_dag(d: &StageDag) -> DagDiagnostics {
    let n = d.n_internal;
    let total = n + 2;
    let mut diag = DagDiagnostics::default();

    let mut adj = vec![Vec::new(); total];
    let mut radj = vec![Vec::new(); total];
    let mut bad_edge = false;
    for (s, t) in d.full_edges() {
        if s >= total || t >= total {
            bad_edge = true;
            continue;
        }
        adj[s].push(t);
        radj[t].push(s);
    }
    diag.misoriented_edges = d
        .edges
        .iter()
        .copied()
        .filter(|&(s, t)| s >= t || t >= n)
        .collect();
    diag.acyclic = !bad_edge && kahn_acyclic(&adj);

    let from_input = reach(&adj, d.input_node());
    let to_output = reach(&radj, d.output_node());
    diag.unreachable_from_input = (0..n).filter(|&v| !from_input[v]).collect();
    diag.cannot_reach_output = (0..n).filter(|&v| !to_output[v]).collect();

    let mut indeg = vec![0; n];
    let mut outdeg = vec![0; n];
    for &(s, t) in &d.edges {
        if s < n && t < n {
            outdeg[s] += 1;
            indeg[t] += 1;
        }
    }
    diag.isolated = (0..n)
        .filter(|&v| indeg[v] == 0 && outdeg[v] == 0)
        .collect();
    let expect_in: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let expect_out: Vec<usize> = (0..n).filter(|&v| outdeg[v] == 0).collect();
    if expect_in != d.original_inputs {
        diag.pseudo_wiring_errors
            .push("input pseudo-node does not feed exactly the in-degree-0 nodes".into());
    }
    if expect_out != d.original_outputs {
        diag.pseudo_wiring_errors
            .push("output pseudo-node does not collect exactly the out-degree-0 nodes".into());
    }
    diag
}

fn kahn_acyclic(adj: &[Vec<usize>]) -> bool {
    let mut indeg = vec![0; adj.len()];
    for targets in adj {
        for &t in targets {
            indeg[t] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..adj.len()).filter(|&v| indeg[v] == 0).collect();
    let mut visited = 0;
    while let Some(v) = queue.pop_front() {
        visited += 1;
        for &t in &adj[v] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                queue.push_back(t);
            }
        }
    }
    visited == adj.len()
}

fn reach(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

/// Topological order of the internal nodes, smallest ready index first.
pub fn topological_order(d: &StageDag) -> Option<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = d.n_internal;
    let mut indeg = vec![0; n];
    let succ = d.successors();
    for &(_, t) in &d.edges {
        indeg[t] += 1;
    }
    let mut heap: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = heap.pop() {
        order.push(v);
        for &t in &succ[v] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                heap.push(Reverse(t));
            }
        }
    }
    (order.len() == n).then_some(order)
}
