#[path = "support/cycle.rs"]
mod cycle;

use proptest::prelude::*;
use randwire_core::dag::{orient, topological_order};
use randwire_core::graph_models::sample;
use randwire_core::{to_dag, validate_dag, GraphModel, SeededStream};

fn model_strategy() -> impl Strategy<Value = (GraphModel, usize)> {
    prop_oneof![
        (2usize..=40, 0.0f64..=1.0).prop_map(|(n, p)| (GraphModel::Er { p }, n)),
        (2usize..=40).prop_flat_map(|n| (1..n).prop_map(move |m| (GraphModel::Ba { m }, n))),
        (3usize..=40).prop_flat_map(|n| {
            ((1..=(n - 1) / 2), 0.0f64..=1.0)
                .prop_map(move |(h, p)| (GraphModel::Ws { k: 2 * h, p }, n))
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn orientation_is_acyclic_and_preserves_degrees((model, n) in model_strategy(), seed: u64) {
        let mut rng = SeededStream::new(seed);
        let s = sample(model, n, &mut rng).unwrap();
        let d = to_dag(&s, &mut rng).unwrap();
        prop_assert!(!cycle::has_cycle(&d));
        prop_assert!(validate_dag(&d).is_valid(), "{:?}", validate_dag(&d));
        prop_assert_eq!(d.edges.len(), s.graph.edge_count());

        let degrees = s.graph.degrees();
        let (pred, succ) = (d.predecessors(), d.successors());
        for (&i, &deg) in d.index_map.iter().zip(&degrees) {
            prop_assert_eq!(pred[i].len() + succ[i].len(), deg);
        }
        for &(a, b) in &d.edges {
            prop_assert!(a < b);
        }
    }
}

#[test]
fn cycle_oracle_detects_a_planted_cycle() {
    let g = randwire_core::UndirectedGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
    let mut d = orient(&g, &[0, 1, 2]).unwrap();
    assert!(!cycle::has_cycle(&d));
    d.edges.push((2, 0));
    assert!(cycle::has_cycle(&d));
    assert!(!validate_dag(&d).is_valid());
    assert!(topological_order(&d).is_none());
}
