//! Randomly wired network generators.
//!
//! The pipeline is: sample an undirected graph per stage
//! ([`graph_models`]), orient it into a DAG with unique input and output
//! pseudo-nodes ([`dag`]), lower the stage DAGs into a multi-stage network
//! ([`network`]), count its cost statically ([`complexity`]) and, at toy
//! sizes, execute it numerically ([`exec`]) or damage it ([`damage`]).

pub mod complexity;
pub mod dag;
pub mod damage;
pub mod error;
pub mod exec;
pub mod graph_models;
pub mod network;
pub mod rng;

pub use complexity::{analyze, fit_channels, ComplexityReport};
pub use dag::{to_dag, validate_dag, StageDag};
pub use damage::{damage, edge_drop_mask, Removal};
pub use error::{Error, Result};
pub use graph_models::{GeneratorSpec, GraphModel, SampledGraph, UndirectedGraph};
pub use network::{assemble, AssembleConfig, Edge, NetworkIR, NodeId, NodeKind, Regime};
pub use rng::SeededStream;
