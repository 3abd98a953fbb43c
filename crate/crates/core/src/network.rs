//! Lowering of stage DAGs into a complete multi-stage network IR.
//!
//! The IR is a flat node list in execution order. Stem nodes come first,
//! then for every random-wiring stage its input pseudo-node, its internal
//! nodes in DAG index order and its output pseudo-node, and finally the
//! classifier head. Every node lists its producers in `in_edges`; the order
//! of that list is the order of the node's aggregation weights.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dag::{to_dag, StageDag};
use crate::damage::Removal;
use crate::error::{param, Error, Result};
use crate::graph_models::{sample, GeneratorSpec};
use crate::rng::{stage_seed, SeededStream};

pub const IR_SCHEMA: &str = "randwire.ir/v1";
pub const HEAD_HIDDEN: usize = 1280;
pub const DEFAULT_RESOLUTION: usize = 224;
pub const DEFAULT_CLASSES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Directed connection between two IR nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
}

impl std::fmt::Display for Edge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Small,
    Regular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// 3×3 depthwise conv followed by 1×1 conv, no non-linearity between.
    SeparableConv3x3,
    RegularConv3x3,
    MaxpoolConv1x1,
    AvgpoolConv1x1,
    /// Conv-BN without the leading ReLU (first stem layer).
    PlainConv,
    /// Pseudo input/output nodes: no convolution.
    AggregateOnly,
    ClassifierHead,
}

impl NodeKind {
    /// Kinds usable as the node transformation of random-wiring stages.
    pub fn is_transform(self) -> bool {
        matches!(
            self,
            NodeKind::SeparableConv3x3
                | NodeKind::RegularConv3x3
                | NodeKind::MaxpoolConv1x1
                | NodeKind::AvgpoolConv1x1
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum NodeRole {
    Stem,
    StageInput { stage: usize },
    Internal { stage: usize, index: usize },
    StageOutput { stage: usize },
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(flatten)]
    pub role: NodeRole,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub in_res: usize,
    pub out_res: usize,
    pub in_edges: Vec<NodeId>,
}

impl IrNode {
    /// Internal nodes carry one learnable aggregation weight per in-edge.
    pub fn has_aggregation_weights(&self) -> bool {
        matches!(self.role, NodeRole::Internal { .. })
    }

    pub fn stage(&self) -> Option<usize> {
        match self.role {
            NodeRole::StageInput { stage }
            | NodeRole::Internal { stage, .. }
            | NodeRole::StageOutput { stage } => Some(stage),
            NodeRole::Stem | NodeRole::Head => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageInfo {
    /// Stage name, `conv2` .. `conv5`.
    pub name: String,
    /// Generator actually used for this stage (node count and sub-seed).
    pub generator: GeneratorSpec,
    pub channels: usize,
    pub in_res: usize,
    pub out_res: usize,
    pub input_node: NodeId,
    pub output_node: NodeId,
    /// `internal[i]` is the node for DAG index `i`, as assembled. Removed
    /// nodes stay listed; `nodes` is authoritative.
    pub internal: Vec<NodeId>,
    /// Wiring as sampled. After damage, `nodes` is authoritative.
    pub dag: StageDag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadInfo {
    pub node: NodeId,
    pub hidden: usize,
    pub class_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkIR {
    pub schema: String,
    pub regime: Regime,
    pub base_channels: usize,
    pub op: NodeKind,
    pub class_count: usize,
    pub input_resolution: usize,
    pub provenance: GeneratorSpec,
    pub stem: Vec<NodeId>,
    pub stages: Vec<StageInfo>,
    pub head: HeadInfo,
    pub nodes: Vec<IrNode>,
    /// Removals applied since assembly, oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub damage: Vec<Removal>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleConfig {
    pub regime: Regime,
    pub base_channels: usize,
    pub op: NodeKind,
    pub class_count: usize,
    pub input_resolution: usize,
}

impl AssembleConfig {
    pub fn new(regime: Regime, base_channels: usize) -> Self {
        Self {
            regime,
            base_channels,
            op: NodeKind::SeparableConv3x3,
            class_count: DEFAULT_CLASSES,
            input_resolution: DEFAULT_RESOLUTION,
        }
    }

    pub fn with_op(mut self, op: NodeKind) -> Self {
        self.op = op;
        self
    }

    pub fn with_classes(mut self, class_count: usize) -> Self {
        self.class_count = class_count;
        self
    }

    pub fn with_resolution(mut self, input_resolution: usize) -> Self {
        self.input_resolution = input_resolution;
        self
    }
}

/// Output size of a 3×3, padding-1 window with the given stride.
pub fn conv_out(res: usize, stride: usize) -> usize {
    (res - 1) / stride + 1
}

/// Node count and channel multiplier for every random-wiring stage.
fn stage_layout(regime: Regime, nodes: usize) -> Vec<(&'static str, usize, usize)> {
    match regime {
        Regime::Small => vec![
            ("conv3", nodes, 1),
            ("conv4", nodes, 2),
            ("conv5", nodes, 4),
        ],
        Regime::Regular => vec![
            ("conv2", nodes / 2, 1),
            ("conv3", nodes, 2),
            ("conv4", nodes, 4),
            ("conv5", nodes, 8),
        ],
    }
}

/// Generator specs for each random-wiring stage; stage `i` is seeded with
/// [`stage_seed`]`(spec.seed, i)`.
pub fn stage_generators(spec: &GeneratorSpec, regime: Regime) -> Result<Vec<GeneratorSpec>> {
    spec.validate()?;
    if regime == Regime::Regular && !spec.nodes.is_multiple_of(2) {
        return param(format!(
            "regular regime needs an even node count, got {}",
            spec.nodes
        ));
    }
    stage_layout(regime, spec.nodes)
        .into_iter()
        .enumerate()
        .map(|(i, (_, n, _))| GeneratorSpec::new(spec.model, n, stage_seed(spec.seed, i)))
        .collect()
}

/// Samples one DAG per stage and lowers the result into a [`NetworkIR`].
///
/// Each stage draws from its own stream: graph sampling first, then (for ER)
/// the indexing permutation.
pub fn assemble(spec: &GeneratorSpec, cfg: &AssembleConfig) -> Result<NetworkIR> {
    let dags = stage_generators(spec, cfg.regime)?
        .iter()
        .map(|g| {
            let mut rng = SeededStream::new(g.seed);
            let sampled = sample(g.model, g.nodes, &mut rng)?;
            to_dag(&sampled, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_with_dags(spec, cfg, dags)
}

/// Lowers caller-provided stage DAGs. The DAG count and sizes must match the
/// regime layout for `spec.nodes`.
pub fn assemble_with_dags(
    spec: &GeneratorSpec,
    cfg: &AssembleConfig,
    dags: Vec<StageDag>,
) -> Result<NetworkIR> {
    let generators = stage_generators(spec, cfg.regime)?;
    let layout = stage_layout(cfg.regime, spec.nodes);
    if !cfg.op.is_transform() {
        return param(format!("{:?} is not a node transformation", cfg.op));
    }
    if cfg.base_channels == 0 {
        return param("base channel count must be positive");
    }
    if cfg.class_count == 0 {
        return param("class count must be positive");
    }
    if cfg.input_resolution == 0 {
        return param("input resolution must be positive");
    }
    if dags.len() != layout.len() {
        return Err(Error::Contract(format!(
            "expected {} stage DAGs, got {}",
            layout.len(),
            dags.len()
        )));
    }

    let c = cfg.base_channels;
    let mut b = Builder::default();

    let stem_ch = c.div_ceil(2);
    let mut res = conv_out(cfg.input_resolution, 2);
    let mut prev = b.push(
        NodeKind::PlainConv,
        NodeRole::Stem,
        (3, stem_ch),
        2,
        (cfg.input_resolution, res),
        vec![],
    );
    let mut prev_ch = stem_ch;
    let mut stem = vec![prev];
    if cfg.regime == Regime::Small {
        let r = conv_out(res, 2);
        prev = b.push(
            NodeKind::RegularConv3x3,
            NodeRole::Stem,
            (prev_ch, c),
            2,
            (res, r),
            vec![prev],
        );
        stem.push(prev);
        prev_ch = c;
        res = r;
    }

    let mut stages = Vec::with_capacity(dags.len());
    for (stage, (((name, n, mult), dag), generator)) in
        layout.into_iter().zip(dags).zip(generators).enumerate()
    {
        if dag.n_internal != n {
            return Err(Error::Contract(format!(
                "stage {name} expects {n} nodes, DAG has {}",
                dag.n_internal
            )));
        }
        let ch = c * mult;
        let out_res = conv_out(res, 2);
        let input = b.push(
            NodeKind::AggregateOnly,
            NodeRole::StageInput { stage },
            (prev_ch, prev_ch),
            1,
            (res, res),
            vec![prev],
        );
        let first_internal = b.next_id();
        let internal: Vec<NodeId> = (0..n)
            .map(|i| NodeId(first_internal.0 + i as u32))
            .collect();
        let preds = dag.predecessors();
        for (v, pv) in preds.iter().enumerate() {
            let is_entry = dag.original_inputs.binary_search(&v).is_ok();
            let (in_edges, in_ch, stride, in_res) = if is_entry {
                (vec![input], prev_ch, 2, res)
            } else {
                (pv.iter().map(|&u| internal[u]).collect(), ch, 1, out_res)
            };
            b.push(
                cfg.op,
                NodeRole::Internal { stage, index: v },
                (in_ch, ch),
                stride,
                (in_res, out_res),
                in_edges,
            );
        }
        let output = b.push(
            NodeKind::AggregateOnly,
            NodeRole::StageOutput { stage },
            (ch, ch),
            1,
            (out_res, out_res),
            dag.original_outputs.iter().map(|&v| internal[v]).collect(),
        );
        stages.push(StageInfo {
            name: name.to_string(),
            generator,
            channels: ch,
            in_res: res,
            out_res,
            input_node: input,
            output_node: output,
            internal,
            dag,
        });
        prev = output;
        prev_ch = ch;
        res = out_res;
    }

    let head = b.push(
        NodeKind::ClassifierHead,
        NodeRole::Head,
        (prev_ch, cfg.class_count),
        1,
        (res, 1),
        vec![prev],
    );

    Ok(NetworkIR {
        schema: IR_SCHEMA.to_string(),
        regime: cfg.regime,
        base_channels: c,
        op: cfg.op,
        class_count: cfg.class_count,
        input_resolution: cfg.input_resolution,
        provenance: *spec,
        stem,
        stages,
        head: HeadInfo {
            node: head,
            hidden: HEAD_HIDDEN,
            class_count: cfg.class_count,
        },
        nodes: b.nodes,
        damage: Vec::new(),
    })
}

#[derive(Default)]
struct Builder {
    nodes: Vec<IrNode>,
}

impl Builder {
    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.len() as u32)
    }

    fn push(
        &mut self,
        kind: NodeKind,
        role: NodeRole,
        (in_ch, out_ch): (usize, usize),
        stride: usize,
        (in_res, out_res): (usize, usize),
        in_edges: Vec<NodeId>,
    ) -> NodeId {
        let id = self.next_id();
        self.nodes.push(IrNode {
            id,
            kind,
            role,
            in_ch,
            out_ch,
            stride,
            in_res,
            out_res,
            in_edges,
        });
        id
    }
}

/// Primitive tensor operations making up a node transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Primitive {
    Relu,
    /// Square convolution with padding `kernel / 2`, no bias.
    Conv {
        slot: ConvSlot,
        kernel: usize,
        groups: usize,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
    },
    MaxPool3x3 {
        stride: usize,
    },
    /// Padding counts towards the divisor (always 9).
    AvgPool3x3 {
        stride: usize,
    },
    GlobalAvgPool,
    /// Fully connected layer with bias.
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

/// Which weight tensor of the node a convolution reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvSlot {
    Depthwise,
    Main,
}

/// The transformation of a node as a primitive sequence; empty for pseudo
/// nodes.
pub fn transform_primitives(node: &IrNode, hidden: usize) -> Vec<Primitive> {
    use Primitive::*;
    let (i, o, s) = (node.in_ch, node.out_ch, node.stride);
    let main = |kernel, in_ch, stride| Conv {
        slot: ConvSlot::Main,
        kernel,
        groups: 1,
        in_ch,
        out_ch: o,
        stride,
    };
    match node.kind {
        NodeKind::SeparableConv3x3 => vec![
            Relu,
            Conv {
                slot: ConvSlot::Depthwise,
                kernel: 3,
                groups: i,
                in_ch: i,
                out_ch: i,
                stride: s,
            },
            main(1, i, 1),
            BatchNorm { channels: o },
        ],
        NodeKind::RegularConv3x3 => vec![Relu, main(3, i, s), BatchNorm { channels: o }],
        NodeKind::MaxpoolConv1x1 => vec![
            Relu,
            MaxPool3x3 { stride: s },
            main(1, i, 1),
            BatchNorm { channels: o },
        ],
        NodeKind::AvgpoolConv1x1 => vec![
            Relu,
            AvgPool3x3 { stride: s },
            main(1, i, 1),
            BatchNorm { channels: o },
        ],
        NodeKind::PlainConv => vec![main(3, i, s), BatchNorm { channels: o }],
        NodeKind::AggregateOnly => vec![],
        NodeKind::ClassifierHead => vec![
            Relu,
            Conv {
                slot: ConvSlot::Main,
                kernel: 1,
                groups: 1,
                in_ch: i,
                out_ch: hidden,
                stride: 1,
            },
            BatchNorm { channels: hidden },
            GlobalAvgPool,
            Linear {
                in_features: hidden,
                out_features: o,
            },
        ],
    }
}

/// One step of a node's execution, in order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    /// `sum_i sigmoid(raw_i) * x_i` over the listed producers.
    WeightedSum {
        inputs: Vec<NodeId>,
    },
    /// Unweighted mean of the producers (stage output pseudo-node).
    Mean {
        inputs: Vec<NodeId>,
    },
    /// Single producer passed through unchanged.
    Receive {
        input: NodeId,
    },
    Transform(Primitive),
    Softmax,
    /// The same tensor is handed to every consumer.
    FanOut {
        consumers: Vec<NodeId>,
    },
}

impl NetworkIR {
    pub fn node(&self, id: NodeId) -> Option<&IrNode> {
        let i = id.0 as usize;
        match self.nodes.get(i) {
            Some(n) if n.id == id => Some(n),
            _ => self.nodes.iter().find(|n| n.id == id),
        }
    }

    pub fn position_map(&self) -> HashMap<NodeId, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect()
    }

    /// Consumers of every node, with multiplicity, in execution order.
    pub fn consumers(&self) -> HashMap<NodeId, Vec<NodeId>> {
        let mut out: HashMap<NodeId, Vec<NodeId>> =
            self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for n in &self.nodes {
            for src in &n.in_edges {
                out.entry(*src).or_default().push(n.id);
            }
        }
        out
    }

    /// Edge count between internal nodes, summed over stages.
    pub fn internal_edge_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.role, NodeRole::Internal { .. }))
            .map(|n| {
                n.in_edges
                    .iter()
                    .filter(|s| {
                        self.node(**s)
                            .is_some_and(|p| matches!(p.role, NodeRole::Internal { .. }))
                    })
                    .count()
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("IR serialization is infallible") + "\n"
    }

    /// Parses an IR, checking the schema tag and structural validity.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema")
            .and_then(|s| s.as_str())
            .unwrap_or("")
            .to_string();
        if found != IR_SCHEMA {
            return Err(Error::Schema {
                found,
                expected: IR_SCHEMA,
            });
        }
        let ir: NetworkIR = serde_json::from_value(value)?;
        ir.validate()?;
        Ok(ir)
    }

    /// Checks execution order, channel/resolution bookkeeping and role
    /// consistency.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<NodeId, &IrNode> = HashMap::new();
        for node in &self.nodes {
            let shape_err = |detail: String| Error::Shape {
                node: node.id,
                detail,
            };
            for src in &node.in_edges {
                let p = seen.get(src).ok_or_else(|| {
                    Error::Structural(format!(
                        "node {} reads {} which is not an earlier node",
                        node.id, src
                    ))
                })?;
                let expect_ch = node.in_ch;
                if p.out_ch != expect_ch {
                    return Err(shape_err(format!(
                        "producer {} emits {} channels, consumer expects {}",
                        p.id, p.out_ch, expect_ch
                    )));
                }
                if p.out_res != node.in_res {
                    return Err(shape_err(format!(
                        "producer {} emits {}px, consumer expects {}px",
                        p.id, p.out_res, node.in_res
                    )));
                }
            }
            if node.stride == 0 || node.in_ch == 0 || node.out_ch == 0 {
                return Err(shape_err("zero stride or channel count".into()));
            }
            let expected_res = match node.kind {
                NodeKind::ClassifierHead => 1,
                NodeKind::AggregateOnly => node.in_res,
                _ => conv_out(node.in_res, node.stride),
            };
            if node.out_res != expected_res {
                return Err(shape_err(format!(
                    "output resolution {} does not follow from input {} at stride {}",
                    node.out_res, node.in_res, node.stride
                )));
            }
            match (node.kind, node.role) {
                (NodeKind::AggregateOnly, NodeRole::StageInput { .. }) => {
                    if node.in_edges.len() != 1 {
                        return Err(Error::Structural(format!(
                            "stage input {} must have exactly one producer",
                            node.id
                        )));
                    }
                }
                (NodeKind::AggregateOnly, NodeRole::StageOutput { .. }) => {
                    if node.in_edges.is_empty() {
                        return Err(Error::Structural(format!(
                            "stage output {} has no producers",
                            node.id
                        )));
                    }
                }
                (kind, NodeRole::Internal { .. }) if kind.is_transform() => {
                    if node.stride == 1 && node.in_ch != node.out_ch {
                        return Err(shape_err("stride-1 node changes channel count".into()));
                    }
                }
                (NodeKind::PlainConv | NodeKind::RegularConv3x3, NodeRole::Stem) => {}
                (NodeKind::ClassifierHead, NodeRole::Head) => {}
                (kind, role) => {
                    return Err(Error::Structural(format!(
                        "node {} has kind {kind:?} incompatible with role {role:?}",
                        node.id
                    )))
                }
            }
            if seen.insert(node.id, node).is_some() {
                return Err(Error::Structural(format!("duplicate node id {}", node.id)));
            }
        }
        if self.node(self.head.node).is_none() {
            return Err(Error::Structural("head node missing".into()));
        }
        Ok(())
    }

    /// Execution steps of `id`: aggregation, transformation, distribution.
    pub fn node_semantics(&self, id: NodeId) -> Option<Vec<Step>> {
        let node = self.node(id)?;
        let mut steps = Vec::new();
        match node.role {
            NodeRole::Internal { .. } => steps.push(Step::WeightedSum {
                inputs: node.in_edges.clone(),
            }),
            NodeRole::StageOutput { .. } => steps.push(Step::Mean {
                inputs: node.in_edges.clone(),
            }),
            _ => {
                if let Some(&input) = node.in_edges.first() {
                    steps.push(Step::Receive { input });
                }
            }
        }
        steps.extend(
            transform_primitives(node, self.head.hidden)
                .into_iter()
                .map(Step::Transform),
        );
        if node.role == NodeRole::Head {
            steps.push(Step::Softmax);
        } else {
            let consumers = self.consumers().remove(&id).unwrap_or_default();
            steps.push(Step::FanOut { consumers });
        }
        Some(steps)
    }

    /// Graphviz rendering of the full network; stage input pseudo-nodes are
    /// blue, output pseudo-nodes red.
    pub fn to_dot(&self) -> String {
        let mut out =
            String::from("digraph randwire {\n  rankdir=TB;\n  node [shape=circle, label=\"\"];\n");
        for node in &self.nodes {
            let style = match node.role {
                NodeRole::StageInput { .. } => "style=filled, fillcolor=blue".to_string(),
                NodeRole::StageOutput { .. } => "style=filled, fillcolor=red".to_string(),
                NodeRole::Stem => format!("shape=box, label=\"stem {}\"", node.out_ch),
                NodeRole::Head => format!("shape=box, label=\"head {}\"", node.out_ch),
                NodeRole::Internal { .. } if node.stride == 2 => {
                    "style=filled, fillcolor=lightgray".to_string()
                }
                NodeRole::Internal { .. } => String::new(),
            };
            let _ = writeln!(out, "  n{} [{}];", node.id, style);
        }
        for node in &self.nodes {
            for src in &node.in_edges {
                let _ = writeln!(out, "  n{} -> n{};", src, node.id);
            }
        }
        out.push_str("}\n");
        out
    }
}
