//! Fixtures shared by the benchmarks.

use randwire_core::exec::TensorValue;
use randwire_core::{
    assemble, AssembleConfig, GeneratorSpec, GraphModel, NetworkIR, Regime, SeededStream,
};

pub const WS: GraphModel = GraphModel::Ws { k: 4, p: 0.75 };

/// The N=32 small-regime network at C=78.
pub fn small_network(model: GraphModel, seed: u64) -> NetworkIR {
    let spec = GeneratorSpec::new(model, 32, seed).expect("valid spec");
    assemble(&spec, &AssembleConfig::new(Regime::Small, 78)).expect("assembles")
}

/// A network small enough for the interpreter: N nodes, C=8, 32×32 input.
pub fn toy_network(model: GraphModel, n: usize, seed: u64) -> NetworkIR {
    let spec = GeneratorSpec::new(model, n, seed).expect("valid spec");
    let cfg = AssembleConfig::new(Regime::Small, 8)
        .with_classes(10)
        .with_resolution(32);
    assemble(&spec, &cfg).expect("assembles")
}

pub fn toy_input(res: usize, seed: u64) -> TensorValue {
    let mut rng = SeededStream::new(seed);
    let data = (0..3 * res * res).map(|_| rng.unit() * 2.0 - 1.0).collect();
    TensorValue::new((3, res, res), data).expect("shape matches")
}
