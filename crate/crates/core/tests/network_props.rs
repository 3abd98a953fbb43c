mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use randwire_core::exec::WeightStore;
use randwire_core::network::NodeRole;
use randwire_core::{
    analyze, assemble, AssembleConfig, GeneratorSpec, GraphModel, NetworkIR, NodeId, Regime,
};

fn ws(n: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec::new(GraphModel::Ws { k: 4, p: 0.75 }, n, seed).unwrap()
}

fn model_strategy() -> impl Strategy<Value = GraphModel> {
    prop_oneof![
        (0.1f64..=0.9).prop_map(|p| GraphModel::Er { p }),
        (1usize..=3).prop_map(|m| GraphModel::Ba { m }),
        (0.0f64..=1.0).prop_map(|p| GraphModel::Ws { k: 2, p }),
    ]
}

/// Product of node strides over every path from `from` to `to`.
fn path_stride_products(ir: &NetworkIR, from: NodeId, to: NodeId) -> Vec<usize> {
    let consumers = ir.consumers();
    let stride: HashMap<NodeId, usize> = ir.nodes.iter().map(|n| (n.id, n.stride)).collect();
    let mut out = Vec::new();
    let mut stack = vec![(from, 1usize)];
    while let Some((v, acc)) = stack.pop() {
        if v == to {
            out.push(acc);
            continue;
        }
        for &c in consumers.get(&v).into_iter().flatten() {
            stack.push((c, acc * stride[&c]));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channels_match_on_every_edge(model in model_strategy(), n in 8usize..=12, seed: u64, small: bool) {
        let regime = if small { Regime::Small } else { Regime::Regular };
        let n = n & !1;
        let ir = assemble(&GeneratorSpec::new(model, n, seed).unwrap(), &AssembleConfig::new(regime, 16)).unwrap();
        let by_id: HashMap<NodeId, _> = ir.nodes.iter().map(|node| (node.id, node)).collect();
        for node in &ir.nodes {
            for src in &node.in_edges {
                prop_assert_eq!(by_id[src].out_ch, node.in_ch);
                prop_assert_eq!(by_id[src].out_res, node.in_res);
            }
        }
    }

    #[test]
    fn every_stage_path_downsamples_once(model in model_strategy(), n in 4usize..=8, seed: u64) {
        let ir = assemble(&GeneratorSpec::new(model, n, seed).unwrap(), &AssembleConfig::new(Regime::Small, 8)).unwrap();
        for stage in &ir.stages {
            let products = path_stride_products(&ir, stage.input_node, stage.output_node);
            prop_assert!(!products.is_empty());
            prop_assert!(products.iter().all(|&p| p == 2), "{:?}", products);
        }
    }

    #[test]
    fn ir_json_round_trip(model in model_strategy(), n in 8usize..=16, seed: u64) {
        let ir = assemble(&GeneratorSpec::new(model, n & !1, seed).unwrap(), &AssembleConfig::new(Regime::Regular, 32)).unwrap();
        let text = ir.to_json();
        let back = NetworkIR::from_json(&text).unwrap();
        prop_assert_eq!(&back, &ir);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn stride_two_nodes_are_exactly_the_entry_successors_at_full_size() {
    for seed in 1..=5 {
        let ir = assemble(&ws(32, seed), &AssembleConfig::new(Regime::Regular, 109)).unwrap();
        for stage in &ir.stages {
            for &id in &stage.internal {
                let node = ir.node(id).unwrap();
                assert_eq!(node.stride == 2, node.in_edges == vec![stage.input_node]);
            }
        }
    }
}

#[test]
fn flops_scale_nearly_quadratically_in_width() {
    let spec = ws(32, 1);
    let a = analyze(&assemble(&spec, &AssembleConfig::new(Regime::Small, 78)).unwrap());
    let b = analyze(&assemble(&spec, &AssembleConfig::new(Regime::Small, 156)).unwrap());
    let ratio = b.totals.flops as f64 / a.totals.flops as f64;
    assert!((3.5..=4.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn analysis_is_invariant_under_relabeling() {
    let ir = assemble(
        &ws(8, 3),
        &AssembleConfig::new(Regime::Small, 8)
            .with_classes(10)
            .with_resolution(32),
    )
    .unwrap();
    let w = WeightStore::init(&ir, 1);
    let (ir2, _) = common::relabel(&ir, &w, 9);
    assert_ne!(ir2.nodes[0].id, ir.nodes[0].id);
    assert_eq!(analyze(&ir).totals, analyze(&ir2).totals);
}

/// Cost delta of deleting one internal edge, without going through weights.
fn edge_deltas(ir: &NetworkIR) -> Vec<(u64, u64)> {
    let base = analyze(ir).totals;
    let internal: Vec<NodeId> = ir
        .nodes
        .iter()
        .filter(|n| matches!(n.role, NodeRole::Internal { .. }))
        .map(|n| n.id)
        .collect();
    let mut out = Vec::new();
    for (i, node) in ir.nodes.iter().enumerate() {
        if !internal.contains(&node.id) {
            continue;
        }
        for k in 0..node.in_edges.len() {
            if !internal.contains(&node.in_edges[k]) {
                continue;
            }
            let mut cut = ir.clone();
            cut.nodes[i].in_edges.remove(k);
            let t = analyze(&cut).totals;
            assert_eq!(base.params - t.params, 1);
            assert_eq!(
                base.flops - t.flops,
                (node.in_ch * node.in_res * node.in_res) as u64
            );
            out.push((base.flops - t.flops, base.params - t.params));
        }
    }
    out
}

#[test]
fn single_edge_removal_costs_under_one_in_ten_thousand_at_regular_size() {
    let ir = assemble(&ws(32, 1), &AssembleConfig::new(Regime::Regular, 109)).unwrap();
    let totals = analyze(&ir).totals;
    for (df, dp) in edge_deltas(&ir) {
        assert!((df as f64) / (totals.flops as f64) < 1e-4);
        assert!((dp as f64) / (totals.params as f64) < 1e-4);
    }
}

#[test]
fn single_edge_removal_cost_at_small_size() {
    // The widest-resolution stage of the small regime carries 78*28*28
    // multiply-adds per edge, slightly above 1e-4 of the ~577M total.
    let ir = assemble(&ws(32, 1), &AssembleConfig::new(Regime::Small, 78)).unwrap();
    let totals = analyze(&ir).totals;
    let worst = edge_deltas(&ir)
        .into_iter()
        .map(|(df, _)| df)
        .max()
        .unwrap();
    assert_eq!(worst, 78 * 28 * 28);
    let frac = worst as f64 / totals.flops as f64;
    assert!(frac < 1.1e-4, "{frac}");
    assert!((1.0 / totals.params as f64) < 1e-6);
}
