//! Post-training graph damage and edge-drop masks.
//!
//! A removal deletes one internal node (with all incident edges) or one
//! edge between internal nodes. Nothing is rewired or renormalized: a node
//! that loses every input aggregates to a zero tensor, and surviving
//! aggregation weights keep their raw values.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::WeightStore;
use crate::network::{Edge, NetworkIR, NodeId, NodeRole};
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Removal {
    Node { id: NodeId },
    Edge { from: NodeId, to: NodeId },
}

impl From<Edge> for Removal {
    fn from(e: Edge) -> Self {
        Removal::Edge {
            from: e.from,
            to: e.to,
        }
    }
}

impl std::fmt::Display for Removal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Removal::Node { id } => write!(f, "node {id}"),
            Removal::Edge { from, to } => write!(f, "edge {from}->{to}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeMetric {
    /// Out-degree of the removed node, counting the edge to the stage
    /// output pseudo-node.
    OutputDegree,
    /// In-degree of the removed edge's target before removal.
    TargetInputDegree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DamageStats {
    pub removal: Removal,
    pub stage: usize,
    pub metric: DegreeMetric,
    pub degree: usize,
    /// Nodes that lost exactly one input edge.
    pub lost_input: Vec<NodeId>,
    /// Every node whose value can change, i.e. `lost_input` and everything
    /// downstream of it.
    pub affected: Vec<NodeId>,
    /// Internal nodes left without inputs; they aggregate to zero.
    pub orphaned: Vec<NodeId>,
}

/// Stage index and degree metric of a removal, without applying it.
pub fn removal_degree(ir: &NetworkIR, removal: Removal) -> Result<(usize, DegreeMetric, usize)> {
    match removal {
        Removal::Node { id } => {
            let node = ir
                .node(id)
                .ok_or_else(|| Error::Contract(format!("node {id} does not exist")))?;
            let NodeRole::Internal { stage, .. } = node.role else {
                return Err(Error::Contract(format!(
                    "node {id} is not an internal node and cannot be removed"
                )));
            };
            let out = ir.nodes.iter().filter(|n| n.in_edges.contains(&id)).count();
            Ok((stage, DegreeMetric::OutputDegree, out))
        }
        Removal::Edge { from, to } => {
            let (src, dst) = match (ir.node(from), ir.node(to)) {
                (Some(a), Some(b)) if b.in_edges.contains(&from) => (a, b),
                _ => return Err(Error::Contract(format!("edge {from}->{to} does not exist"))),
            };
            match (src.role, dst.role) {
                (NodeRole::Internal { stage, .. }, NodeRole::Internal { .. }) => {
                    Ok((stage, DegreeMetric::TargetInputDegree, dst.in_edges.len()))
                }
                _ => Err(Error::Contract(format!(
                    "edge {from}->{to} is not between internal nodes"
                ))),
            }
        }
    }
}

/// Applies one removal, returning the damaged IR, matching weights and
/// bookkeeping. Fails with a structural error if a stage output pseudo-node
/// would be left without inputs.
pub fn damage(
    ir: &NetworkIR,
    w: &WeightStore,
    removal: Removal,
) -> Result<(NetworkIR, WeightStore, DamageStats)> {
    w.check(ir)?;
    let (stage, metric, degree) = removal_degree(ir, removal)?;
    let mut ir2 = ir.clone();
    let mut w2 = w.clone();

    let mut lost_input = Vec::new();
    let mut cut = |ir2: &mut NetworkIR, from: NodeId, to: Option<NodeId>| {
        for node in &mut ir2.nodes {
            if to.is_some_and(|t| t != node.id) {
                continue;
            }
            if let Some(k) = node.in_edges.iter().position(|&e| e == from) {
                node.in_edges.remove(k);
                if node.has_aggregation_weights() {
                    if let Some(nw) = w2.nodes.get_mut(&node.id) {
                        nw.aggregation.remove(k);
                    }
                }
                lost_input.push(node.id);
            }
        }
    };
    match removal {
        Removal::Node { id } => {
            cut(&mut ir2, id, None);
            ir2.nodes.retain(|n| n.id != id);
            w2.nodes.remove(&id);
        }
        Removal::Edge { from, to } => cut(&mut ir2, from, Some(to)),
    }

    for &id in &lost_input {
        let node = ir2.node(id).expect("consumer survives");
        if matches!(node.role, NodeRole::StageOutput { .. }) && node.in_edges.is_empty() {
            return Err(Error::Structural(format!(
                "removing {removal} leaves stage output {id} without inputs"
            )));
        }
    }
    let orphaned: Vec<NodeId> = lost_input
        .iter()
        .copied()
        .filter(|&id| {
            let n = ir2.node(id).expect("consumer survives");
            matches!(n.role, NodeRole::Internal { .. }) && n.in_edges.is_empty()
        })
        .collect();
    let affected = downstream(&ir2, &lost_input);
    ir2.damage.push(removal);
    ir2.validate()?;
    w2.check(&ir2)?;
    Ok((
        ir2,
        w2,
        DamageStats {
            removal,
            stage,
            metric,
            degree,
            lost_input,
            affected,
            orphaned,
        },
    ))
}

fn downstream(ir: &NetworkIR, seeds: &[NodeId]) -> Vec<NodeId> {
    let consumers = ir.consumers();
    let mut seen: BTreeSet<NodeId> = seeds.iter().copied().collect();
    let mut queue: VecDeque<NodeId> = seeds.iter().copied().collect();
    while let Some(id) = queue.pop_front() {
        for &c in consumers.get(&id).into_iter().flatten() {
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen.into_iter().collect()
}

/// Internal nodes in IR order.
pub fn removable_nodes(ir: &NetworkIR) -> Vec<NodeId> {
    ir.nodes
        .iter()
        .filter(|n| matches!(n.role, NodeRole::Internal { .. }))
        .map(|n| n.id)
        .collect()
}

/// Edges between internal nodes, grouped by target in IR order.
pub fn removable_edges(ir: &NetworkIR) -> Vec<Edge> {
    let roles: HashMap<NodeId, NodeRole> = ir.nodes.iter().map(|n| (n.id, n.role)).collect();
    let internal = |id: &NodeId| matches!(roles.get(id), Some(NodeRole::Internal { .. }));
    ir.nodes
        .iter()
        .filter(|n| internal(&n.id))
        .flat_map(|n| {
            n.in_edges
                .iter()
                .filter(|s| internal(s))
                .map(move |&from| Edge { from, to: n.id })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DamageOutcome {
    Applied {
        lost_input: usize,
        affected: usize,
        orphaned: usize,
    },
    Structural {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DamageRow {
    pub removal: Removal,
    pub stage: usize,
    pub metric: DegreeMetric,
    pub degree: usize,
    pub outcome: DamageOutcome,
}

/// Every single-node and single-edge removal, nodes first. Structural
/// failures are recorded in the row; other errors abort.
pub fn damage_table(ir: &NetworkIR, w: &WeightStore) -> Result<Vec<DamageRow>> {
    let removals = removable_nodes(ir)
        .into_iter()
        .map(|id| Removal::Node { id })
        .chain(removable_edges(ir).into_iter().map(Removal::from));
    let mut rows = Vec::new();
    for removal in removals {
        let (stage, metric, degree) = removal_degree(ir, removal)?;
        let outcome = match damage(ir, w, removal) {
            Ok((_, _, s)) => DamageOutcome::Applied {
                lost_input: s.lost_input.len(),
                affected: s.affected.len(),
                orphaned: s.orphaned.len(),
            },
            Err(Error::Structural(message)) => DamageOutcome::Structural { message },
            Err(e) => return Err(e),
        };
        rows.push(DamageRow {
            removal,
            stage,
            metric,
            degree,
            outcome,
        });
    }
    Ok(rows)
}

/// Edges eligible for dropping: target is an internal node with in-degree
/// above one.
pub fn drop_eligible_edges(ir: &NetworkIR) -> Vec<Edge> {
    ir.nodes
        .iter()
        .filter(|n| matches!(n.role, NodeRole::Internal { .. }) && n.in_edges.len() > 1)
        .flat_map(|n| n.in_edges.iter().map(move |&from| Edge { from, to: n.id }))
        .collect()
}

/// One mini-batch mask: with probability `p`, a single uniformly chosen
/// eligible edge. Each call draws one Bernoulli value and, if it fires and
/// an eligible edge exists, one index.
pub fn edge_drop_mask(ir: &NetworkIR, p: f64, rng: &mut SeededStream) -> Result<Vec<Edge>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!(
            "drop probability must lie in [0, 1], got {p}"
        )));
    }
    if !rng.bernoulli(p) {
        return Ok(Vec::new());
    }
    let eligible = drop_eligible_edges(ir);
    if eligible.is_empty() {
        return Ok(Vec::new());
    }
    Ok(vec![eligible[rng.below(eligible.len())]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{forward, Mode, TensorValue};
    use crate::graph_models::{GeneratorSpec, GraphModel};
    use crate::network::{assemble, AssembleConfig, Regime};

    fn tiny(model: GraphModel, seed: u64) -> NetworkIR {
        let spec = GeneratorSpec::new(model, 4, seed).unwrap();
        let cfg = AssembleConfig::new(Regime::Small, 8)
            .with_classes(10)
            .with_resolution(32);
        assemble(&spec, &cfg).unwrap()
    }

    fn medium(seed: u64) -> NetworkIR {
        let spec = GeneratorSpec::new(GraphModel::Er { p: 0.4 }, 12, seed).unwrap();
        let cfg = AssembleConfig::new(Regime::Small, 8)
            .with_classes(10)
            .with_resolution(32);
        assemble(&spec, &cfg).unwrap()
    }

    fn out_degree(ir: &NetworkIR, id: NodeId) -> usize {
        ir.nodes
            .iter()
            .map(|n| n.in_edges.iter().filter(|&&e| e == id).count())
            .sum()
    }

    #[test]
    fn edge_removal_keeps_remaining_raws() {
        let ir = medium(1);
        let target = ir
            .nodes
            .iter()
            .find(|n| matches!(n.role, NodeRole::Internal { .. }) && n.in_edges.len() == 3)
            .expect("fixture has an in-degree-3 node");
        let w = WeightStore::init(&ir, 2);
        let from = target.in_edges[1];
        let (ir2, w2, stats) = damage(
            &ir,
            &w,
            Removal::Edge {
                from,
                to: target.id,
            },
        )
        .unwrap();
        let raws = &w.nodes[&target.id].aggregation;
        assert_eq!(w2.nodes[&target.id].aggregation, vec![raws[0], raws[2]]);
        assert_eq!(ir2.node(target.id).unwrap().in_edges.len(), 2);
        assert_eq!(stats.metric, DegreeMetric::TargetInputDegree);
        assert_eq!(stats.degree, 3);
        assert_eq!(stats.lost_input, vec![target.id]);
        for (id, nw) in &w.nodes {
            if *id != target.id {
                assert_eq!(&w2.nodes[id], nw);
            }
        }
    }

    #[test]
    fn node_removal_cuts_every_out_edge() {
        let ir = medium(3);
        let w = WeightStore::init(&ir, 1);
        let id = removable_nodes(&ir)
            .into_iter()
            .find(|&id| out_degree(&ir, id) == 4)
            .expect("fixture has an out-degree-4 node");
        let (ir2, w2, stats) = damage(&ir, &w, Removal::Node { id }).unwrap();
        assert_eq!(stats.degree, 4);
        assert_eq!(stats.lost_input.len(), 4);
        assert!(ir2.node(id).is_none());
        assert!(!w2.nodes.contains_key(&id));
        assert!(ir2.nodes.iter().all(|n| !n.in_edges.contains(&id)));
        assert_eq!(ir2.damage, vec![Removal::Node { id }]);
    }

    #[test]
    fn removing_the_only_exit_is_structural() {
        // Ring of four oriented clockwise: 0->1->2->3 and 0->3, so 3 is the
        // stage's only original output.
        let ir = tiny(GraphModel::Ws { k: 2, p: 0.0 }, 1);
        let w = WeightStore::init(&ir, 1);
        let id = ir.stages[0].internal[3];
        let err = damage(&ir, &w, Removal::Node { id }).unwrap_err();
        assert!(matches!(err, Error::Structural(_)), "{err}");
    }

    #[test]
    fn orphans_evaluate_as_zero_input() {
        let ir = tiny(GraphModel::Ws { k: 2, p: 0.0 }, 1);
        let w = WeightStore::init(&ir, 1);
        let s = &ir.stages[0];
        let (ir2, w2, stats) = damage(&ir, &w, Removal::Node { id: s.internal[1] }).unwrap();
        assert_eq!(stats.orphaned, vec![s.internal[2]]);
        assert!(stats.affected.contains(&s.internal[3]));
        assert!(stats.affected.contains(&ir.head.node));
        let x = TensorValue::new((3, 32, 32), vec![0.25; 3 * 32 * 32]).unwrap();
        let y = forward(&ir2, &w2, &x, Mode::Eval).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pseudo_nodes_cannot_be_removed() {
        let ir = tiny(GraphModel::Ws { k: 2, p: 0.0 }, 1);
        let w = WeightStore::init(&ir, 1);
        let s = &ir.stages[0];
        for id in [s.input_node, s.output_node, ir.head.node] {
            assert!(matches!(
                damage(&ir, &w, Removal::Node { id }),
                Err(Error::Contract(_))
            ));
        }
        let bogus = Removal::Edge {
            from: s.internal[3],
            to: s.internal[0],
        };
        assert!(matches!(damage(&ir, &w, bogus), Err(Error::Contract(_))));
    }

    #[test]
    fn node_degree_histogram_matches_ir() {
        let ir = medium(5);
        let w = WeightStore::init(&ir, 5);
        let table = damage_table(&ir, &w).unwrap();
        let mut from_table: HashMap<usize, usize> = HashMap::new();
        for row in table
            .iter()
            .filter(|r| r.metric == DegreeMetric::OutputDegree)
        {
            *from_table.entry(row.degree).or_default() += 1;
        }
        let mut from_ir: HashMap<usize, usize> = HashMap::new();
        for n in ir
            .nodes
            .iter()
            .filter(|n| matches!(n.role, NodeRole::Internal { .. }))
        {
            *from_ir.entry(out_degree(&ir, n.id)).or_default() += 1;
        }
        assert_eq!(from_table, from_ir);
        let edges = table
            .iter()
            .filter(|r| r.metric == DegreeMetric::TargetInputDegree)
            .count();
        assert_eq!(edges, ir.internal_edge_count());
    }

    #[test]
    fn mask_probability_bounds() {
        let ir = medium(2);
        let mut rng = SeededStream::new(1);
        for _ in 0..100 {
            assert!(edge_drop_mask(&ir, 0.0, &mut rng).unwrap().is_empty());
        }
        let eligible = drop_eligible_edges(&ir);
        assert!(!eligible.is_empty());
        for _ in 0..100 {
            let m = edge_drop_mask(&ir, 1.0, &mut rng).unwrap();
            assert_eq!(m.len(), 1);
            assert!(eligible.contains(&m[0]));
        }
        assert!(edge_drop_mask(&ir, 1.5, &mut rng).is_err());
    }

    #[test]
    fn mask_rate_at_one_tenth() {
        let ir = medium(2);
        let mut rng = SeededStream::new(42);
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|_| !edge_drop_mask(&ir, 0.1, &mut rng).unwrap().is_empty())
            .count();
        let sigma = (0.1f64 * 0.9 / draws as f64).sqrt();
        assert!(
            (hits as f64 / draws as f64 - 0.1).abs() < 3.0 * sigma,
            "{hits}"
        );
    }

    #[test]
    fn no_eligible_edges_means_empty_mask() {
        let ir = tiny(GraphModel::Ws { k: 2, p: 0.0 }, 1);
        // Every internal node in a clockwise-oriented 4-ring except node 3
        // has one input; node 3 has two.
        let mut ir2 = ir.clone();
        for n in &mut ir2.nodes {
            if n.in_edges.len() > 1 && matches!(n.role, NodeRole::Internal { .. }) {
                n.in_edges.truncate(1);
            }
        }
        let mut rng = SeededStream::new(0);
        assert!(edge_drop_mask(&ir2, 1.0, &mut rng).unwrap().is_empty());
    }
}
