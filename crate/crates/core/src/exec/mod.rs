//! Reference interpreter for toy-sized networks.
//!
//! Everything is plain `f64` loops: this is for checking semantics, not for
//! speed. Nodes execute in IR order, which [`NetworkIR::validate`] guarantees
//! is topological.
//!
//! [`NetworkIR::validate`]: crate::network::NetworkIR::validate

mod gradcheck;
mod interp;
pub mod ops;
mod tensor;
mod weights;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use interp::{
    edge_messages, forward, forward_batch, forward_masked, loss_and_gradients, node_outputs, Loss,
    Mode,
};
pub use tensor::TensorValue;
pub use weights::{BatchNormParams, NodeWeights, ParamRef, ParamRole, WeightStore, WEIGHTS_SCHEMA};
