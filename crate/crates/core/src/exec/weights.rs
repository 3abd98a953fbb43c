//! Learnable weights keyed by node id and tensor role.
//!
//! Layouts:
//!
//! * `aggregation`: one raw (pre-sigmoid) value per in-edge, in `in_edges`
//!   order.
//! * `depthwise`: `[channels][3][3]`.
//! * `conv`: `[out][in][k][k]` for the node's main convolution (the 1×1 of
//!   a separable or pool node, the 3×3 of a regular node, the 1×1 to the
//!   head's hidden width for the classifier).
//! * `bn`: per-channel `gamma`, `beta`, `running_mean`, `running_var`.
//! * `fc_weight`: `[classes][hidden]`, `fc_bias`: `[classes]`.
//!
//! Serialized as JSON `{"schema": "randwire.weights/v1", "nodes": {"<id>":
//! {...}}}` with absent roles omitted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{transform_primitives, ConvSlot, NetworkIR, NodeId, Primitive};
use crate::rng::SeededStream;

pub const WEIGHTS_SCHEMA: &str = "randwire.weights/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeWeights {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aggregation: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depthwise: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn: Option<BatchNormParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_weight: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStore {
    pub schema: String,
    pub nodes: BTreeMap<NodeId, NodeWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Aggregation,
    Depthwise,
    Conv,
    BnGamma,
    BnBeta,
    FcWeight,
    FcBias,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Aggregation => "aggregation",
            ParamRole::Depthwise => "depthwise",
            ParamRole::Conv => "conv",
            ParamRole::BnGamma => "bn.gamma",
            ParamRole::BnBeta => "bn.beta",
            ParamRole::FcWeight => "fc_weight",
            ParamRole::FcBias => "fc_bias",
        }
    }
}

/// Address of one scalar weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamRef {
    pub node: NodeId,
    pub role: ParamRole,
    pub index: usize,
}

/// Expected tensor sizes for a node, derived from its primitives.
#[derive(Debug, Default, PartialEq, Eq)]
pub(crate) struct Expected {
    pub aggregation: usize,
    pub depthwise: Option<usize>,
    pub conv: Option<usize>,
    pub bn: Option<usize>,
    pub fc: Option<(usize, usize)>,
}

pub(crate) fn expected_sizes(ir: &NetworkIR, node: &crate::network::IrNode) -> Expected {
    let mut e = Expected {
        aggregation: if node.has_aggregation_weights() {
            node.in_edges.len()
        } else {
            0
        },
        ..Default::default()
    };
    for p in transform_primitives(node, ir.head.hidden) {
        match p {
            Primitive::Conv {
                slot,
                kernel,
                groups,
                in_ch,
                out_ch,
                ..
            } => {
                let n = kernel * kernel * (in_ch / groups) * out_ch;
                match slot {
                    ConvSlot::Depthwise => e.depthwise = Some(n),
                    ConvSlot::Main => e.conv = Some(n),
                }
            }
            Primitive::BatchNorm { channels } => e.bn = Some(channels),
            Primitive::Linear {
                in_features,
                out_features,
            } => e.fc = Some((in_features, out_features)),
            _ => {}
        }
    }
    e
}

impl WeightStore {
    /// Deterministic initialization for tests and demos.
    ///
    /// Nodes are visited in IR order and each draws, in this order:
    /// aggregation raws `U(-1, 1)`; depthwise and conv entries
    /// `U(-1, 1) / sqrt(fan_in)`; BN `gamma ~ U(0.5, 1.5)`,
    /// `beta ~ U(-0.1, 0.1)`, `running_mean ~ U(-0.1, 0.1)`,
    /// `running_var ~ U(0.5, 1.5)`; fc weights and biases
    /// `U(-1, 1) / sqrt(hidden)`.
    pub fn init(ir: &NetworkIR, seed: u64) -> Self {
        let mut rng = SeededStream::new(seed);
        let mut uniform = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            (0..n).map(|_| lo + (hi - lo) * rng.unit()).collect()
        };
        let mut nodes = BTreeMap::new();
        for node in &ir.nodes {
            let e = expected_sizes(ir, node);
            let mut w = NodeWeights {
                aggregation: uniform(-1.0, 1.0, e.aggregation),
                ..Default::default()
            };
            if let Some(n) = e.depthwise {
                let b = 1.0 / 3.0;
                w.depthwise = Some(uniform(-b, b, n));
            }
            if let Some(n) = e.conv {
                let fan_in = n / conv_out_channels(ir, node);
                let b = 1.0 / (fan_in as f64).sqrt();
                w.conv = Some(uniform(-b, b, n));
            }
            if let Some(c) = e.bn {
                w.bn = Some(BatchNormParams {
                    gamma: uniform(0.5, 1.5, c),
                    beta: uniform(-0.1, 0.1, c),
                    running_mean: uniform(-0.1, 0.1, c),
                    running_var: uniform(0.5, 1.5, c),
                });
            }
            if let Some((i, o)) = e.fc {
                let b = 1.0 / (i as f64).sqrt();
                w.fc_weight = Some(uniform(-b, b, i * o));
                w.fc_bias = Some(uniform(-b, b, o));
            }
            nodes.insert(node.id, w);
        }
        Self {
            schema: WEIGHTS_SCHEMA.to_string(),
            nodes,
        }
    }

    /// Verifies that every node has exactly the tensors its kind needs.
    pub fn check(&self, ir: &NetworkIR) -> Result<()> {
        for node in &ir.nodes {
            let id = node.id;
            let e = expected_sizes(ir, node);
            let empty = NodeWeights::default();
            let w = match self.nodes.get(&id) {
                Some(w) => w,
                None if e == Expected::default() => &empty,
                None => {
                    return Err(Error::MissingWeight {
                        node: id,
                        role: "node",
                    })
                }
            };
            let shape = |role: &str, want: usize, got: usize| -> Result<()> {
                if want == got {
                    Ok(())
                } else {
                    Err(Error::Shape {
                        node: id,
                        detail: format!("{role} has {got} values, expected {want}"),
                    })
                }
            };
            shape("aggregation", e.aggregation, w.aggregation.len())?;
            check_opt(id, "depthwise", e.depthwise, w.depthwise.as_ref())?;
            check_opt(id, "conv", e.conv, w.conv.as_ref())?;
            match (e.bn, &w.bn) {
                (Some(c), Some(bn)) => {
                    for (name, v) in [
                        ("bn.gamma", &bn.gamma),
                        ("bn.beta", &bn.beta),
                        ("bn.running_mean", &bn.running_mean),
                        ("bn.running_var", &bn.running_var),
                    ] {
                        shape(name, c, v.len())?;
                    }
                }
                (Some(_), None) => {
                    return Err(Error::MissingWeight {
                        node: id,
                        role: "bn",
                    })
                }
                (None, Some(_)) => shape("bn", 0, 1)?,
                (None, None) => {}
            }
            check_opt(
                id,
                "fc_weight",
                e.fc.map(|(i, o)| i * o),
                w.fc_weight.as_ref(),
            )?;
            check_opt(id, "fc_bias", e.fc.map(|(_, o)| o), w.fc_bias.as_ref())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weight serialization is infallible") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let store: WeightStore = serde_json::from_str(text)?;
        if store.schema != WEIGHTS_SCHEMA {
            return Err(Error::Schema {
                found: store.schema,
                expected: WEIGHTS_SCHEMA,
            });
        }
        Ok(store)
    }

    fn slot(&self, p: ParamRef) -> Option<&Vec<f64>> {
        let w = self.nodes.get(&p.node)?;
        match p.role {
            ParamRole::Aggregation => Some(&w.aggregation),
            ParamRole::Depthwise => w.depthwise.as_ref(),
            ParamRole::Conv => w.conv.as_ref(),
            ParamRole::BnGamma => w.bn.as_ref().map(|b| &b.gamma),
            ParamRole::BnBeta => w.bn.as_ref().map(|b| &b.beta),
            ParamRole::FcWeight => w.fc_weight.as_ref(),
            ParamRole::FcBias => w.fc_bias.as_ref(),
        }
    }

    fn slot_mut(&mut self, p: ParamRef) -> Option<&mut Vec<f64>> {
        let w = self.nodes.get_mut(&p.node)?;
        match p.role {
            ParamRole::Aggregation => Some(&mut w.aggregation),
            ParamRole::Depthwise => w.depthwise.as_mut(),
            ParamRole::Conv => w.conv.as_mut(),
            ParamRole::BnGamma => w.bn.as_mut().map(|b| &mut b.gamma),
            ParamRole::BnBeta => w.bn.as_mut().map(|b| &mut b.beta),
            ParamRole::FcWeight => w.fc_weight.as_mut(),
            ParamRole::FcBias => w.fc_bias.as_mut(),
        }
    }

    pub fn get(&self, p: ParamRef) -> Option<f64> {
        self.slot(p)?.get(p.index).copied()
    }

    pub fn set(&mut self, p: ParamRef, value: f64) -> Result<()> {
        let slot = self.slot_mut(p).ok_or(Error::MissingWeight {
            node: p.node,
            role: p.role.name(),
        })?;
        let len = slot.len();
        let v = slot.get_mut(p.index).ok_or_else(|| Error::Shape {
            node: p.node,
            detail: format!("{} index {} out of {}", p.role.name(), p.index, len),
        })?;
        *v = value;
        Ok(())
    }

    /// Every learnable scalar, in node then role order.
    pub fn params(&self) -> Vec<ParamRef> {
        let roles = [
            ParamRole::Aggregation,
            ParamRole::Depthwise,
            ParamRole::Conv,
            ParamRole::BnGamma,
            ParamRole::BnBeta,
            ParamRole::FcWeight,
            ParamRole::FcBias,
        ];
        let mut out = Vec::new();
        for &node in self.nodes.keys() {
            for role in roles {
                let probe = ParamRef {
                    node,
                    role,
                    index: 0,
                };
                if let Some(v) = self.slot(probe) {
                    out.extend((0..v.len()).map(|index| ParamRef { node, role, index }));
                }
            }
        }
        out
    }

    /// Learnable scalar count (running statistics excluded).
    pub fn learnable_count(&self) -> usize {
        self.params().len()
    }
}

fn conv_out_channels(ir: &NetworkIR, node: &crate::network::IrNode) -> usize {
    transform_primitives(node, ir.head.hidden)
        .into_iter()
        .find_map(|p| match p {
            Primitive::Conv {
                slot: ConvSlot::Main,
                out_ch,
                ..
            } => Some(out_ch),
            _ => None,
        })
        .unwrap_or(1)
}

fn check_opt(
    id: NodeId,
    role: &'static str,
    want: Option<usize>,
    got: Option<&Vec<f64>>,
) -> Result<()> {
    match (want, got) {
        (Some(n), Some(v)) if v.len() == n => Ok(()),
        (Some(n), Some(v)) => Err(Error::Shape {
            node: id,
            detail: format!("{role} has {} values, expected {n}", v.len()),
        }),
        (Some(_), None) => Err(Error::MissingWeight { node: id, role }),
        (None, Some(_)) => Err(Error::Shape {
            node: id,
            detail: format!("unexpected {role} tensor"),
        }),
        (None, None) => Ok(()),
    }
}
