#![allow(dead_code)]

use std::collections::{BinaryHeap, HashMap};

use randwire_core::exec::WeightStore;
use randwire_core::{NetworkIR, NodeId};

/// Relabels every node id through a seeded permutation and reorders the node
/// list into a different valid topological order (latest-ready first).
pub fn relabel(ir: &NetworkIR, w: &WeightStore, seed: u64) -> (NetworkIR, WeightStore) {
    let mut ids: Vec<NodeId> = ir.nodes.iter().map(|n| n.id).collect();
    let mut fresh: Vec<u32> = (0..ids.len() as u32).map(|i| i * 7 + 1000).collect();
    randwire_core::SeededStream::new(seed).shuffle(&mut fresh);
    let map: HashMap<NodeId, NodeId> = ids.drain(..).zip(fresh.into_iter().map(NodeId)).collect();
    let m = |id: &NodeId| map[id];

    let pos: HashMap<NodeId, usize> = ir
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id, i))
        .collect();
    let mut indeg: Vec<usize> = ir.nodes.iter().map(|n| n.in_edges.len()).collect();
    let consumers = ir.consumers();
    let mut ready: BinaryHeap<usize> = (0..ir.nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::new();
    while let Some(i) = ready.pop() {
        order.push(i);
        for c in consumers.get(&ir.nodes[i].id).into_iter().flatten() {
            let j = pos[c];
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(j);
            }
        }
    }
    assert_eq!(order.len(), ir.nodes.len());

    let mut out = ir.clone();
    out.nodes = order
        .iter()
        .map(|&i| {
            let mut n = ir.nodes[i].clone();
            n.id = m(&n.id);
            n.in_edges = n.in_edges.iter().map(m).collect();
            n
        })
        .collect();
    out.stem = out.stem.iter().map(m).collect();
    out.head.node = m(&out.head.node);
    for s in &mut out.stages {
        s.input_node = m(&s.input_node);
        s.output_node = m(&s.output_node);
        s.internal = s.internal.iter().map(m).collect();
    }
    let mut w2 = w.clone();
    w2.nodes = w.nodes.iter().map(|(k, v)| (m(k), v.clone())).collect();
    (out, w2)
}
